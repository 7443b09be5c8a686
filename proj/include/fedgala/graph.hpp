#pragma once

// Text-attributed graphs: validated container, stochastic-block-model
// generator, client partitioners, random-walk positional encodings and
// one-hop text summaries.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "fedgala/core.hpp"

namespace fedgala {

using Edge = std::pair<NodeId, NodeId>;

class Graph {
 public:
  Graph() = default;

  /// Validates and canonicalizes the edge list (u < v, sorted). Throws on
  /// self-loops, duplicates, out-of-range endpoints, shape mismatches or
  /// empty token sequences.
  Graph(std::size_t num_nodes, std::vector<Edge> edges, Matrix features, std::vector<ClassId> labels,
        std::vector<TokenSeq> tokens, std::uint32_t num_classes, std::uint32_t vocab,
        std::uint32_t domain_id = 0)
      : num_nodes_(num_nodes),
        edges_(std::move(edges)),
        features_(std::move(features)),
        labels_(std::move(labels)),
        tokens_(std::move(tokens)),
        num_classes_(num_classes),
        vocab_(vocab),
        domain_id_(domain_id) {
    constexpr const char* kMod = "graph_core";
    require(static_cast<std::size_t>(features_.rows()) == num_nodes_, kMod, "feature rows != num_nodes");
    require(labels_.size() == num_nodes_, kMod, "labels length != num_nodes");
    require(tokens_.size() == num_nodes_, kMod, "token list length != num_nodes");
    for (auto& e : edges_) {
      require(e.first != e.second, kMod, "self-loop on node " + std::to_string(e.first));
      require(e.first < num_nodes_ && e.second < num_nodes_, kMod, "edge endpoint out of range");
      if (e.first > e.second) std::swap(e.first, e.second);
    }
    std::sort(edges_.begin(), edges_.end());
    require(std::adjacent_find(edges_.begin(), edges_.end()) == edges_.end(), kMod, "duplicate edge");
    for (std::size_t i = 0; i < num_nodes_; ++i) {
      require(!tokens_[i].empty(), kMod, "node " + std::to_string(i) + " has no tokens");
      require(labels_[i] < num_classes_ || num_classes_ == 0, kMod, "label out of range");
      for (auto t : tokens_[i]) require(t < vocab_, kMod, "token id out of vocabulary");
    }
    adjacency_.assign(num_nodes_, {});
    for (const auto& [u, v] : edges_) {
      adjacency_[u].push_back(v);
      adjacency_[v].push_back(u);
    }
    for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Matrix& features() const noexcept { return features_; }
  const std::vector<ClassId>& labels() const noexcept { return labels_; }
  const std::vector<TokenSeq>& tokens() const noexcept { return tokens_; }
  std::uint32_t num_classes() const noexcept { return num_classes_; }
  /// Number of content tokens; the separator id equals this value.
  std::uint32_t vocab() const noexcept { return vocab_; }
  std::uint32_t domain_id() const noexcept { return domain_id_; }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }

  /// Sorted 1-hop neighbors.
  const std::vector<NodeId>& neighbors(NodeId v) const { return adjacency_.at(v); }
  std::size_t degree(NodeId v) const { return adjacency_.at(v).size(); }

 private:
  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  Matrix features_;
  std::vector<ClassId> labels_;
  std::vector<TokenSeq> tokens_;
  std::uint32_t num_classes_ = 0;
  std::uint32_t vocab_ = 0;
  std::uint32_t domain_id_ = 0;
  std::vector<std::vector<NodeId>> adjacency_;
};

struct PositionalEncoding {
  Matrix values;  // [num_nodes x depth]
  std::size_t depth = 0;
};

struct ClientShard {
  Graph graph;
  std::vector<NodeId> global_ids;  // local id -> id in the source graph
  std::vector<NodeId> train, val, test;
  double avg_degree = 0.0;
};

// ---------------------------------------------------------------------------
// Synthetic generation

/// One synthetic domain: Gaussian class clusters in feature space, a
/// stochastic block model over the nodes and class-specific token ranges.
///
/// Each node's text is coupled to its feature noise: token slot j is chosen
/// inside the class range by the quantile of the j-th standard-normal noise
/// coordinate, so token ids are uniform over the slot's bins while remaining
/// predictable from the features.
struct DomainSpec {
  Matrix class_means;  // [C x d_in]
  double noise_std = 1.0;
  double p_in = 0.3;
  double p_out = 0.02;
  std::vector<std::size_t> nodes_per_class;
  std::size_t token_len = 6;
  std::size_t token_bins = 2;
  TokenId vocab_base = 0;
  std::uint32_t vocab = 0;
  std::uint32_t domain_id = 0;

  std::size_t num_classes() const { return static_cast<std::size_t>(class_means.rows()); }
  std::size_t tokens_per_class() const { return token_len * token_bins; }
};

inline Graph generate_synthetic(const DomainSpec& spec, std::uint64_t seed) {
  constexpr const char* kMod = "graph_core";
  const std::size_t classes = spec.num_classes();
  require(classes >= 2, kMod, "domain spec needs at least two classes");
  require(spec.nodes_per_class.size() == classes, kMod, "nodes_per_class length != class count");
  const std::size_t n = std::accumulate(spec.nodes_per_class.begin(), spec.nodes_per_class.end(), std::size_t{0});
  require(n > 0, kMod, "domain spec has zero nodes");
  require(spec.p_in > spec.p_out, kMod, "intra-class edge probability must exceed inter-class");
  require(spec.p_in <= 1.0 && spec.p_out >= 0.0, kMod, "edge probabilities outside [0,1]");
  require(spec.token_len >= 1 && spec.token_bins >= 1, kMod, "token_len and token_bins must be >= 1");
  const auto d_in = static_cast<std::size_t>(spec.class_means.cols());
  require(d_in >= 1, kMod, "feature dimension must be >= 1");
  require(spec.vocab_base + classes * spec.tokens_per_class() <= spec.vocab, kMod,
          "vocabulary too small for the domain's class token ranges");

  Rng rng(derive_seed({seed, spec.domain_id, 0x5b3ULL}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<ClassId> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < classes; ++c) labels.insert(labels.end(), spec.nodes_per_class[c], static_cast<ClassId>(c));

  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in));
  std::vector<TokenSeq> tokens(n);
  const auto bins = static_cast<double>(spec.token_bins);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = labels[i];
    Vector g(static_cast<Eigen::Index>(d_in));
    for (auto& v : g) v = normal(rng);
    features.row(static_cast<Eigen::Index>(i)) = spec.class_means.row(c) + spec.noise_std * g.transpose();
    tokens[i].resize(spec.token_len);
    for (std::size_t j = 0; j < spec.token_len; ++j) {
      const double q = 0.5 * std::erfc(-g[static_cast<Eigen::Index>(j % d_in)] / std::sqrt(2.0));
      const auto bin = std::min<std::size_t>(static_cast<std::size_t>(q * bins), spec.token_bins - 1);
      tokens[i][j] = static_cast<TokenId>(spec.vocab_base + c * spec.tokens_per_class() + j * spec.token_bins + bin);
    }
  }

  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? spec.p_in : spec.p_out;
      if (unif(rng) < p) edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
  return Graph(n, std::move(edges), std::move(features), std::move(labels), std::move(tokens),
               static_cast<std::uint32_t>(classes), spec.vocab, spec.domain_id);
}

// ---------------------------------------------------------------------------
// Degree, positional encodings, summaries

inline double average_degree(const Graph& g) {
  require(g.num_nodes() >= 1, "graph_core", "average_degree of an empty graph");
  return 2.0 * static_cast<double>(g.num_edges()) / static_cast<double>(g.num_nodes());
}

/// Row-stochastic uniform random-walk transition matrix (isolated nodes
/// have empty rows).
inline SparseMatrix transition_matrix(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * g.num_edges());
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const auto& nb = g.neighbors(v);
    for (auto u : nb) trips.emplace_back(v, u, 1.0 / static_cast<double>(nb.size()));
  }
  SparseMatrix p(n, n);
  p.setFromTriplets(trips.begin(), trips.end());
  return p;
}

/// Column t of row i = probability that a uniform walk from i is back at i
/// after t+1 steps.
inline PositionalEncoding random_walk_pe(const Graph& g, std::size_t depth) {
  require(depth >= 1, "graph_core", "positional encoding depth must be >= 1");
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const SparseMatrix p = transition_matrix(g);
  PositionalEncoding pe{Matrix::Zero(n, static_cast<Eigen::Index>(depth)), depth};
  Matrix walk = Matrix::Identity(n, n);
  for (std::size_t t = 0; t < depth; ++t) {
    walk = p * walk;
    pe.values.col(static_cast<Eigen::Index>(t)) = walk.diagonal();
  }
  return pe;
}

inline constexpr std::size_t kDefaultSummaryLen = 32;

/// Own tokens, separator (id == vocab), then each neighbor's tokens in
/// ascending neighbor-id order; truncated to max_len.
inline TokenSeq neighbor_summary(const Graph& g, NodeId node, std::size_t max_len = kDefaultSummaryLen) {
  require(node < g.num_nodes(), "graph_core", "summary node out of range");
  TokenSeq out = g.tokens()[node];
  out.push_back(g.vocab());
  for (auto nb : g.neighbors(node)) {
    if (out.size() >= max_len) break;
    const auto& t = g.tokens()[nb];
    out.insert(out.end(), t.begin(), t.end());
  }
  if (out.size() > max_len) out.resize(max_len);
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning

enum class PartitionStrategy { edge_cut, label_stratified };

struct SplitConfig {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  /// When set, train and val each take this many nodes per class and test
  /// takes the remainder.
  std::optional<std::size_t> few_shot;
};

/// Per-class stratified train/val/test assignment within a shard.
inline void assign_splits(ClientShard& shard, const SplitConfig& cfg, std::uint64_t seed) {
  constexpr const char* kMod = "graph_core";
  require(cfg.train >= 0 && cfg.val >= 0 && cfg.test >= 0 && cfg.train + cfg.val + cfg.test <= 1.0 + 1e-12, kMod,
          "split fractions must be non-negative and sum to <= 1");
  const Graph& g = shard.graph;
  std::vector<std::vector<NodeId>> by_class(std::max<std::uint32_t>(g.num_classes(), 1));
  for (NodeId v = 0; v < g.num_nodes(); ++v) by_class[g.labels()[v]].push_back(v);
  Rng rng(derive_seed({seed, 0x591175ULL}));
  shard.train.clear();
  shard.val.clear();
  shard.test.clear();
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t m = members.size();
    std::size_t n_tr, n_va, n_te;
    if (cfg.few_shot) {
      n_tr = std::min(*cfg.few_shot, m);
      n_va = std::min(*cfg.few_shot, m - n_tr);
      n_te = m - n_tr - n_va;
    } else {
      n_tr = static_cast<std::size_t>(std::floor(cfg.train * static_cast<double>(m)));
      n_va = static_cast<std::size_t>(std::floor(cfg.val * static_cast<double>(m)));
      const auto covered = static_cast<std::size_t>(std::llround((cfg.train + cfg.val + cfg.test) * static_cast<double>(m)));
      n_te = covered > n_tr + n_va ? std::min(covered, m) - n_tr - n_va : 0;
    }
    shard.train.insert(shard.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_tr));
    shard.val.insert(shard.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_tr),
                     members.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va));
    shard.test.insert(shard.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va),
                      members.begin() + static_cast<std::ptrdiff_t>(n_tr + n_va + n_te));
  }
  std::sort(shard.train.begin(), shard.train.end());
  std::sort(shard.val.begin(), shard.val.end());
  std::sort(shard.test.begin(), shard.test.end());
}

/// Builds one shard per part id; only edges with both endpoints in the same
/// part survive. Node order inside a shard follows the source ids.
inline std::vector<ClientShard> partition_by_assignment(const Graph& g, const std::vector<std::size_t>& part,
                                                        std::size_t k, const SplitConfig& splits = {},
                                                        std::uint64_t seed = 0) {
  constexpr const char* kMod = "graph_core";
  require(part.size() == g.num_nodes(), kMod, "assignment length != num_nodes");
  std::vector<std::vector<NodeId>> members(k);
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    require(part[v] < k, kMod, "assignment references a part >= k");
    members[part[v]].push_back(v);
  }
  std::vector<NodeId> local(g.num_nodes());
  for (auto& m : members)
    for (std::size_t i = 0; i < m.size(); ++i) local[m[i]] = static_cast<NodeId>(i);

  std::vector<std::vector<Edge>> edges(k);
  for (const auto& [u, v] : g.edges())
    if (part[u] == part[v]) edges[part[u]].emplace_back(local[u], local[v]);

  std::vector<ClientShard> shards;
  shards.reserve(k);
  for (std::size_t s = 0; s < k; ++s) {
    const auto& m = members[s];
    Matrix feats(static_cast<Eigen::Index>(m.size()), g.features().cols());
    std::vector<ClassId> labels(m.size());
    std::vector<TokenSeq> tokens(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      feats.row(static_cast<Eigen::Index>(i)) = g.features().row(m[i]);
      labels[i] = g.labels()[m[i]];
      tokens[i] = g.tokens()[m[i]];
    }
    ClientShard shard;
    shard.graph = Graph(m.size(), std::move(edges[s]), std::move(feats), std::move(labels), std::move(tokens),
                        g.num_classes(), g.vocab(), g.domain_id());
    shard.global_ids = m;
    shard.avg_degree = m.empty() ? 0.0 : average_degree(shard.graph);
    assign_splits(shard, splits, derive_seed({seed, s}));
    shards.push_back(std::move(shard));
  }
  return shards;
}

namespace detail {

// Greedy BFS region growing: k seeds drawn by the RNG, regions take turns
// claiming one unassigned frontier node, capped at ceil(n/k). A region whose
// frontier dries up restarts from the smallest unassigned node.
inline std::vector<std::size_t> grow_regions(const Graph& g, std::size_t k, Rng& rng) {
  const std::size_t n = g.num_nodes();
  constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);
  std::vector<std::size_t> part(n, kUnassigned);
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t cap = (n + k - 1) / k;
  std::vector<std::size_t> size(k, 0);
  std::vector<std::deque<NodeId>> frontier(k);
  for (std::size_t r = 0; r < k; ++r) {
    part[order[r]] = r;
    size[r] = 1;
    frontier[r].push_back(order[r]);
  }
  std::size_t assigned = k;
  std::size_t scan = 0;  // smallest possibly-unassigned id
  auto claim = [&](std::size_t r, NodeId v) {
    part[v] = r;
    ++size[r];
    ++assigned;
    frontier[r].push_back(v);
  };
  while (assigned < n) {
    for (std::size_t r = 0; r < k && assigned < n; ++r) {
      if (size[r] >= cap) continue;
      bool grown = false;
      while (!frontier[r].empty() && !grown) {
        const NodeId u = frontier[r].front();
        for (auto v : g.neighbors(u))
          if (part[v] == kUnassigned) {
            claim(r, v);
            grown = true;
            break;
          }
        if (!grown) frontier[r].pop_front();
      }
      if (!grown) {
        while (part[scan] != kUnassigned) ++scan;
        claim(r, static_cast<NodeId>(scan));
      }
    }
  }
  return part;
}

}  // namespace detail

inline std::vector<ClientShard> partition(const Graph& g, std::size_t k, PartitionStrategy strategy,
                                          std::uint64_t seed, const SplitConfig& splits = {}) {
  constexpr const char* kMod = "graph_core";
  require(k >= 1, kMod, "partition needs k >= 1");
  require(k <= g.num_nodes(), kMod, "more parts than nodes");
  Rng rng(derive_seed({seed, 0x9a27ULL}));
  std::vector<std::size_t> part(g.num_nodes(), 0);
  if (k > 1) {
    if (strategy == PartitionStrategy::edge_cut) {
      part = detail::grow_regions(g, k, rng);
    } else {
      std::vector<std::vector<NodeId>> by_class(std::max<std::uint32_t>(g.num_classes(), 1));
      for (NodeId v = 0; v < g.num_nodes(); ++v) by_class[g.labels()[v]].push_back(v);
      std::size_t offset = 0;
      for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i = 0; i < members.size(); ++i) part[members[i]] = (offset + i) % k;
        offset += members.size();
      }
    }
  }
  return partition_by_assignment(g, part, k, splits, seed);
}

}  // namespace fedgala
