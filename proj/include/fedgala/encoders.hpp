#pragma once

// Frozen text-encoder stub and the trainable decoupled graph encoder.
//
// The graph encoder has two branches with identical architecture:
//   H1 = tanh(Â X W1),  H2 = tanh(Â H1 W2)
// where Â is mean aggregation over the closed 1-hop neighborhood. The
// structural branch consumes positional encodings, the semantic branch
// consumes (disturbed) node features. Z = normalize_rows(H2_s + H2_m).

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include "fedgala/core.hpp"
#include "fedgala/graph.hpp"
#include "fedgala/wire.hpp"

namespace fedgala {

class TextEncoder {
 public:
  TextEncoder(std::uint32_t vocab, std::size_t dim, std::uint64_t seed) : vocab_(vocab) {
    Rng rng(derive_seed({seed, 0x7e47ULL}));
    table_ = gaussian_matrix(static_cast<Eigen::Index>(vocab) + 1, static_cast<Eigen::Index>(dim), 1.0, rng);
  }

  /// Mean of the table rows of `tokens`. Ids may include the separator (== vocab).
  Vector encode(const TokenSeq& tokens) const {
    require(!tokens.empty(), "encoders", "text_encode on empty token sequence");
    Vector acc = Vector::Zero(table_.cols());
    for (auto t : tokens) acc += row(t).transpose();
    return acc / static_cast<double>(tokens.size());
  }

  /// Sum of table rows (no pooling); used when extra rows are pooled in.
  Vector sum_rows(const TokenSeq& tokens) const {
    Vector acc = Vector::Zero(table_.cols());
    for (auto t : tokens) acc += row(t).transpose();
    return acc;
  }

  Matrix encode_all(const std::vector<TokenSeq>& seqs) const {
    Matrix out(static_cast<Eigen::Index>(seqs.size()), table_.cols());
    for (std::size_t i = 0; i < seqs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode(seqs[i]).transpose();
    return out;
  }

  const Matrix& table() const noexcept { return table_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(table_.cols()); }
  std::uint32_t vocab() const noexcept { return vocab_; }
  std::uint64_t checksum() const { return fedgala::checksum(table_); }

 private:
  Matrix::ConstRowXpr row(TokenId t) const {
    require(t <= vocab_, "encoders", "token id " + std::to_string(t) + " out of range");
    return table_.row(t);
  }

  std::uint32_t vocab_;
  Matrix table_;
};

// ---------------------------------------------------------------------------
// Parameters

struct StructuralTag {};
struct SemanticTag {};

/// Two-layer weight pair of one encoder branch. The tag keeps structural and
/// semantic blocks from being mixed up at the type level.
template <class Tag>
struct Block {
  Matrix w1;  // [d_input x d]
  Matrix w2;  // [d x d]

  std::size_t size() const { return static_cast<std::size_t>(w1.size() + w2.size()); }

  Block& operator+=(const Block& o) {
    w1 += o.w1;
    w2 += o.w2;
    return *this;
  }
  Block& operator*=(double s) {
    w1 *= s;
    w2 *= s;
    return *this;
  }
  friend Block operator*(double s, Block b) { return b *= s; }

  bool same_shape(const Block& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && w2.rows() == o.w2.rows() &&
           w2.cols() == o.w2.cols();
  }
  bool operator==(const Block& o) const { return same_shape(o) && w1 == o.w1 && w2 == o.w2; }

  std::uint64_t checksum() const { return fedgala::checksum(w2, fedgala::checksum(w1)); }

  static Block zeros_like(const Block& b) {
    return Block{Matrix::Zero(b.w1.rows(), b.w1.cols()), Matrix::Zero(b.w2.rows(), b.w2.cols())};
  }
};

using StructuralBlock = Block<StructuralTag>;
using SemanticBlock = Block<SemanticTag>;

struct EncoderDims {
  std::size_t d_pe = 8;
  std::size_t d_in = 16;
  std::size_t d = 32;
};

struct EncoderParams {
  StructuralBlock structural;  // trained federally, transmitted
  SemanticBlock semantic;      // trained locally, never leaves the client

  std::size_t size() const { return structural.size() + semantic.size(); }
  std::uint64_t checksum() const { return fedgala::checksum(semantic.w2, fedgala::checksum(semantic.w1, structural.checksum())); }
  bool operator==(const EncoderParams&) const = default;

  /// Keeps every entry float32-representable so the wire and checkpoint
  /// formats round-trip exactly.
  void round_to_f32() {
    fedgala::round_to_f32(structural.w1);
    fedgala::round_to_f32(structural.w2);
    fedgala::round_to_f32(semantic.w1);
    fedgala::round_to_f32(semantic.w2);
  }
};

namespace detail {
inline Matrix glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return gaussian_matrix(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out), std, rng);
}
}  // namespace detail

inline StructuralBlock init_structural(const EncoderDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x57ULL}));
  StructuralBlock b{detail::glorot(dims.d_pe, dims.d, rng), detail::glorot(dims.d, dims.d, rng)};
  round_to_f32(b.w1);
  round_to_f32(b.w2);
  return b;
}

inline SemanticBlock init_semantic(const EncoderDims& dims, std::uint64_t seed) {
  Rng rng(derive_seed({seed, 0x5eULL}));
  SemanticBlock b{detail::glorot(dims.d_in, dims.d, rng), detail::glorot(dims.d, dims.d, rng)};
  round_to_f32(b.w1);
  round_to_f32(b.w2);
  return b;
}

inline EncoderParams init_params(const EncoderDims& dims, std::uint64_t structural_seed, std::uint64_t semantic_seed) {
  return {init_structural(dims, structural_seed), init_semantic(dims, semantic_seed)};
}

// ---------------------------------------------------------------------------
// Forward / backward

struct DisturbanceConfig {
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

/// Â = D̃^{-1}(A + I): each row averages a node with its neighbors.
inline SparseMatrix mean_aggregator(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.num_nodes() + 2 * g.num_edges());
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const auto& nb = g.neighbors(v);
    const double w = 1.0 / static_cast<double>(nb.size() + 1);
    trips.emplace_back(v, v, w);
    for (auto u : nb) trips.emplace_back(v, u, w);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  return a;
}

/// Everything graph_backward needs; tied to the parameters it was built with.
struct ForwardCache {
  std::uint64_t params_checksum = 0;
  SparseMatrix agg;
  Matrix pe_agg, h1s, h1s_agg, h2s;  // structural branch
  Matrix x_agg, h1m, h1m_agg, h2m;   // semantic branch
  Vector norms;                      // row norms of H2_s + H2_m
  Matrix z;
};

struct GraphForward {
  Matrix z;  // [n x d], unit rows (or exact zero rows)
  ForwardCache cache;
};

inline Matrix disturb(const Matrix& x, const DisturbanceConfig& cfg) {
  if (cfg.noise_std == 0.0) return x;
  Rng rng(derive_seed({cfg.seed, 0xd157ULL}));
  return x + gaussian_matrix(x.rows(), x.cols(), cfg.noise_std, rng);
}

/// Forward pass over explicit node features (the prompt channel passes
/// X + bias here).
inline GraphForward graph_forward(const EncoderParams& params, const Graph& g, const PositionalEncoding& pe,
                                  const Matrix& features, const DisturbanceConfig& dist = {}) {
  constexpr const char* kMod = "encoders";
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  require(pe.values.rows() == n && features.rows() == n, kMod, "input row count != num_nodes");
  require(pe.values.cols() == params.structural.w1.rows(), kMod, "PE width does not match W1_s");
  require(features.cols() == params.semantic.w1.rows(), kMod, "feature width does not match W1_m");
  require(params.structural.w2.cols() == params.semantic.w2.cols() &&
              params.structural.w1.cols() == params.structural.w2.rows() &&
              params.semantic.w1.cols() == params.semantic.w2.rows(),
          kMod, "inconsistent hidden dimensions");

  GraphForward out;
  ForwardCache& c = out.cache;
  c.params_checksum = params.checksum();
  c.agg = mean_aggregator(g);

  c.pe_agg = c.agg * pe.values;
  c.h1s = (c.pe_agg * params.structural.w1).array().tanh();
  c.h1s_agg = c.agg * c.h1s;
  c.h2s = (c.h1s_agg * params.structural.w2).array().tanh();

  c.x_agg = c.agg * disturb(features, dist);
  c.h1m = (c.x_agg * params.semantic.w1).array().tanh();
  c.h1m_agg = c.agg * c.h1m;
  c.h2m = (c.h1m_agg * params.semantic.w2).array().tanh();

  c.z = normalize_rows(c.h2s + c.h2m, &c.norms);
  out.z = c.z;
  return out;
}

inline GraphForward graph_forward(const EncoderParams& params, const Graph& g, const PositionalEncoding& pe,
                                  const DisturbanceConfig& dist = {}) {
  return graph_forward(params, g, pe, g.features(), dist);
}

struct GraphGradients {
  EncoderParams params;
  Matrix features;  // d loss / d (disturbed) input features
};

/// Exact gradients of the forward map given dLoss/dZ. Disturbance noise is
/// treated as a constant.
inline GraphGradients graph_backward(const EncoderParams& params, const ForwardCache& c, const Matrix& upstream) {
  constexpr const char* kMod = "encoders";
  require(c.params_checksum == params.checksum(), kMod, "stale forward cache: parameters changed since forward");
  require(upstream.rows() == c.z.rows() && upstream.cols() == c.z.cols(), kMod, "upstream gradient shape mismatch");

  // Through row normalization: dU = (dZ - z (z . dZ)) / |u|; zero rows pass nothing.
  Matrix du = Matrix::Zero(upstream.rows(), upstream.cols());
  for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
    if (c.norms[i] <= kZeroNorm) continue;
    const double proj = c.z.row(i).dot(upstream.row(i));
    du.row(i) = (upstream.row(i) - proj * c.z.row(i)) / c.norms[i];
  }
  const SparseMatrix agg_t = c.agg.transpose();

  GraphGradients g;
  {
    const Matrix da2 = du.array() * (1.0 - c.h2s.array().square());
    g.params.structural.w2 = c.h1s_agg.transpose() * da2;
    const Matrix dh1 = agg_t * (da2 * params.structural.w2.transpose());
    const Matrix da1 = dh1.array() * (1.0 - c.h1s.array().square());
    g.params.structural.w1 = c.pe_agg.transpose() * da1;
  }
  {
    const Matrix da2 = du.array() * (1.0 - c.h2m.array().square());
    g.params.semantic.w2 = c.h1m_agg.transpose() * da2;
    const Matrix dh1 = agg_t * (da2 * params.semantic.w2.transpose());
    const Matrix da1 = dh1.array() * (1.0 - c.h1m.array().square());
    g.params.semantic.w1 = c.x_agg.transpose() * da1;
    g.features = agg_t * (da1 * params.semantic.w1.transpose());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints: per matrix a text line "W <name> <rows> <cols>" followed by
// rows*cols little-endian float32 values.

using NamedMatrix = std::pair<std::string, Matrix>;

inline void write_matrices(std::ostream& os, const std::vector<NamedMatrix>& mats) {
  for (const auto& [name, m] : mats) {
    os << "W " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    ByteWriter w;
    w.put_matrix_f32(m);
    os.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
  }
}

inline std::vector<NamedMatrix> read_matrices(std::istream& is) {
  std::vector<NamedMatrix> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string tag, name;
    Eigen::Index rows = -1, cols = -1;
    hs >> tag >> name >> rows >> cols;
    require(tag == "W" && rows >= 0 && cols >= 0, "encoders", "malformed checkpoint header: " + line);
    Bytes raw(static_cast<std::size_t>(rows * cols) * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(static_cast<std::size_t>(is.gcount()) == raw.size(), "encoders", "truncated checkpoint matrix " + name);
    Matrix m(rows, cols);
    ByteReader r(raw);
    r.get_matrix_f32(m);
    out.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

inline std::vector<NamedMatrix> named(const EncoderParams& p) {
  return {{"W1_s", p.structural.w1}, {"W2_s", p.structural.w2}, {"W1_m", p.semantic.w1}, {"W2_m", p.semantic.w2}};
}

inline void save_checkpoint(const EncoderParams& p, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "encoders", "cannot write checkpoint " + path.string());
  write_matrices(os, named(p));
}

inline EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "encoders", "cannot read checkpoint " + path.string());
  auto mats = read_matrices(is);
  static constexpr std::array<const char*, 4> kOrder = {"W1_s", "W2_s", "W1_m", "W2_m"};
  require(mats.size() == kOrder.size(), "encoders", "checkpoint must hold exactly four matrices");
  for (std::size_t i = 0; i < kOrder.size(); ++i)
    require(mats[i].first == kOrder[i], "encoders", "checkpoint matrix order mismatch at " + mats[i].first);
  return {{std::move(mats[0].second), std::move(mats[1].second)}, {std::move(mats[2].second), std::move(mats[3].second)}};
}

}  // namespace fedgala
