#pragma once

// Independent oracles and small fixtures shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fedgala/fedgala.hpp"

namespace fgt {

using namespace fedgala;

/// Graph with one token per node (id = node mod vocab) and the given
/// features; labels cycle through `classes`.
inline Graph small_graph(std::size_t n, std::vector<Edge> edges, Matrix features, std::uint32_t classes = 2,
                         std::uint32_t vocab = 16) {
  std::vector<ClassId> labels(n);
  std::vector<TokenSeq> tokens(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<ClassId>(i % classes);
    tokens[i] = {static_cast<TokenId>(i % vocab)};
  }
  return Graph(n, std::move(edges), std::move(features), std::move(labels), std::move(tokens), classes, vocab);
}

inline Graph small_graph(std::size_t n, std::vector<Edge> edges, std::size_t d_in = 2) {
  return small_graph(n, std::move(edges), Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in)));
}

/// Erdos-Renyi edges over n nodes.
inline std::vector<Edge> random_edges(std::size_t n, double p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> e;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j)
      if (u(rng) < p) e.emplace_back(i, j);
  return e;
}

/// Central differences of f with respect to every entry of x.
inline Matrix central_difference(const std::function<double()>& f, Matrix& x, double eps = 1e-4) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + eps;
    const double up = f();
    x.data()[i] = keep - eps;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double central_difference(const std::function<double()>& f, double& x, double eps = 1e-4) {
  const double keep = x;
  x = keep + eps;
  const double up = f();
  x = keep - eps;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * eps);
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero entries from
/// turning finite-difference round-off into huge ratios.
inline double rel_err(double a, double b, double floor = 1e-2) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const Matrix& a, const Matrix& b, double floor = 1e-2) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a.data()[i], b.data()[i], floor));
  return m;
}

/// Random-walk return probabilities by explicit path enumeration. Only for
/// tiny graphs.
inline Matrix enumerate_return_probabilities(const Graph& g, std::size_t depth) {
  const auto n = g.num_nodes();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(depth));
  std::function<void(NodeId, NodeId, std::size_t, double)> walk = [&](NodeId start, NodeId at, std::size_t steps,
                                                                      double prob) {
    if (steps > 0 && at == start) out(start, static_cast<Eigen::Index>(steps - 1)) += prob;
    if (steps == depth) return;
    const auto& nb = g.neighbors(at);
    for (auto v : nb) walk(start, v, steps + 1, prob / static_cast<double>(nb.size()));
  };
  for (NodeId s = 0; s < n; ++s)
    if (g.degree(s) > 0) walk(s, s, 0, 1.0);
  return out;
}

/// Naive triple loop of tanh(Â tanh(Â X W1) W2) on dense matrices.
inline Matrix naive_branch(const Graph& g, const Matrix& x, const Matrix& w1, const Matrix& w2) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Matrix a = Matrix::Zero(n, n);
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const double w = 1.0 / static_cast<double>(g.degree(v) + 1);
    a(v, v) = w;
    for (auto u : g.neighbors(v)) a(v, u) = w;
  }
  Matrix h1 = ((a * x) * w1).array().tanh();
  return ((a * h1) * w2).array().tanh();
}

inline EncoderParams random_params(const EncoderDims& dims, Rng& rng, double scale = 0.7) {
  EncoderParams p;
  p.structural.w1 = gaussian_matrix(static_cast<Eigen::Index>(dims.d_pe), static_cast<Eigen::Index>(dims.d), scale, rng);
  p.structural.w2 = gaussian_matrix(static_cast<Eigen::Index>(dims.d), static_cast<Eigen::Index>(dims.d), scale, rng);
  p.semantic.w1 = gaussian_matrix(static_cast<Eigen::Index>(dims.d_in), static_cast<Eigen::Index>(dims.d), scale, rng);
  p.semantic.w2 = gaussian_matrix(static_cast<Eigen::Index>(dims.d), static_cast<Eigen::Index>(dims.d), scale, rng);
  return p;
}

/// Loss of the full pre-training objective as a function of the encoder
/// parameters and tau, with every node in the batch.
inline double full_stack_loss(const EncoderParams& p, const Graph& g, const PositionalEncoding& pe, const Matrix& zt,
                              const Temperature& temp) {
  const auto z = graph_forward(p, g, pe).z;
  return contrastive_loss(similarity_matrix(z, zt, temp));
}

/// Small separable two-domain config for pipeline tests.
inline ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.clients = 2;
  c.domains = 1;
  c.nodes_per_client = 20;
  c.rounds = 10;
  c.ft_rounds = 5;
  c.ft_epochs = 10;
  c.pool_size = 4;
  return c;
}

}  // namespace fgt
