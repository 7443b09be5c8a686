#pragma once

// Symmetric graph-text contrastive objective with a learnable log-scale
// temperature, its exact gradients, and the client-side training step.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string_view>

#include "fedgala/core.hpp"
#include "fedgala/encoders.hpp"
#include "fedgala/graph.hpp"

namespace fedgala {

/// Similarities are scaled by exp(tau); tau is clamped to [-ln 100, ln 100].
struct Temperature {
  static inline const double kBound = std::log(100.0);
  double tau = 0.0;

  double scale() const { return std::exp(tau); }
  void clamp() { tau = std::clamp(tau, -kBound, kBound); }
};

/// s[i][j] = cos(z_i^G, z_j^T) * exp(tau).
inline Matrix similarity_matrix(const Matrix& zg, const Matrix& zt, const Temperature& temp) {
  constexpr const char* kMod = "alignment";
  require(zg.rows() == zt.rows() && zg.cols() == zt.cols(), kMod, "Z_G and Z_T shapes differ");
  Vector ng, nt;
  const Matrix g = normalize_rows(zg, &ng);
  const Matrix t = normalize_rows(zt, &nt);
  for (Eigen::Index i = 0; i < zg.rows(); ++i)
    require(ng[i] > kZeroNorm && nt[i] > kZeroNorm, kMod, "zero-norm embedding row " + std::to_string(i));
  return temp.scale() * (g * t.transpose());
}

namespace detail {

inline Matrix row_softmax(const Matrix& s) {
  Matrix p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    p.row(i) = (s.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline double log_softmax_diag_sum(const Matrix& s) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    acc += s(i, i) - m - std::log((s.row(i).array() - m).exp().sum());
  }
  return acc;
}

}  // namespace detail

/// -(1/2N) sum_i [log softmax_row_i(s)_ii + log softmax_col_i(s)_ii]
inline double contrastive_loss(const Matrix& s) {
  require(s.rows() == s.cols() && s.rows() >= 1, "alignment", "similarity matrix must be square and non-empty");
  const Matrix st = s.transpose();
  const double n = static_cast<double>(s.rows());
  return -(detail::log_softmax_diag_sum(s) + detail::log_softmax_diag_sum(st)) / (2.0 * n);
}

struct AlignmentGrads {
  Matrix grad_zg;  // [N x d]
  double grad_tau = 0.0;
  double loss = 0.0;
};

/// Exact gradients w.r.t. Z_G and tau. Z_T is the frozen text side and
/// receives nothing.
inline AlignmentGrads alignment_grads(const Matrix& zg, const Matrix& zt, const Temperature& temp) {
  const Matrix s = similarity_matrix(zg, zt, temp);
  const Eigen::Index n = s.rows();
  Vector ng;
  const Matrix g = normalize_rows(zg, &ng);
  const Matrix t = normalize_rows(zt);

  const Matrix p = detail::row_softmax(s);
  const Matrix q = detail::row_softmax(s.transpose()).transpose();
  const Matrix ds = (p + q - 2.0 * Matrix::Identity(n, n)) / (2.0 * static_cast<double>(n));

  AlignmentGrads out;
  out.loss = contrastive_loss(s);
  out.grad_tau = (ds.array() * s.array()).sum();
  const Matrix dg = temp.scale() * (ds * t);
  out.grad_zg.resize(n, zg.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    out.grad_zg.row(i) = (dg.row(i) - g.row(i).dot(dg.row(i)) * g.row(i)) / ng[i];
  return out;
}

/// Parameter names the pre-training step differentiates and updates.
inline constexpr std::array<std::string_view, 5> kPretrainTargets = {"W1_s", "W2_s", "W1_m", "W2_m", "tau"};

struct LocalStepResult {
  EncoderParams params;
  Temperature temp;
  double loss = 0.0;  // evaluated before the update
};

/// Text-side anchors: text_encode(neighbor_summary(i)) for each batch node.
inline Matrix summary_embeddings(const Graph& g, const TextEncoder& text, std::span<const NodeId> nodes,
                                 std::size_t summary_len = kDefaultSummaryLen) {
  Matrix out(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(text.dim()));
  for (std::size_t i = 0; i < nodes.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = text.encode(neighbor_summary(g, nodes[i], summary_len)).transpose();
  return out;
}

inline Matrix gather_rows(const Matrix& m, std::span<const NodeId> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

/// Alignment loss of a batch under the given parameters (no update).
inline double alignment_loss(const ClientShard& shard, const PositionalEncoding& pe, const EncoderParams& params,
                             const Temperature& temp, const TextEncoder& text, std::span<const NodeId> batch,
                             const DisturbanceConfig& dist = {}, std::size_t summary_len = kDefaultSummaryLen) {
  const auto fwd = graph_forward(params, shard.graph, pe, dist);
  const Matrix zt = summary_embeddings(shard.graph, text, batch, summary_len);
  return contrastive_loss(similarity_matrix(gather_rows(fwd.z, batch), zt, temp));
}

/// One full-batch gradient-descent step on both branches and tau.
inline LocalStepResult local_train_step(const ClientShard& shard, const PositionalEncoding& pe, EncoderParams params,
                                        Temperature temp, const TextEncoder& text, std::span<const NodeId> batch,
                                        double lr, const DisturbanceConfig& dist,
                                        std::size_t summary_len = kDefaultSummaryLen) {
  require(!batch.empty(), "alignment", "empty training batch");
  const auto fwd = graph_forward(params, shard.graph, pe, dist);
  const Matrix zt = summary_embeddings(shard.graph, text, batch, summary_len);
  const AlignmentGrads ag = alignment_grads(gather_rows(fwd.z, batch), zt, temp);

  Matrix upstream = Matrix::Zero(fwd.z.rows(), fwd.z.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) upstream.row(batch[i]) += ag.grad_zg.row(static_cast<Eigen::Index>(i));
  const GraphGradients gg = graph_backward(params, fwd.cache, upstream);

  LocalStepResult out{std::move(params), temp, ag.loss};
  if (lr != 0.0) {
    out.params.structural.w1 -= lr * gg.params.structural.w1;
    out.params.structural.w2 -= lr * gg.params.structural.w2;
    out.params.semantic.w1 -= lr * gg.params.semantic.w1;
    out.params.semantic.w2 -= lr * gg.params.semantic.w2;
    out.params.round_to_f32();
    out.temp.tau -= lr * ag.grad_tau;
    out.temp.clamp();
  }
  return out;
}

}  // namespace fedgala
