#pragma once

// Weighted class prototypes from the pre-trained encoder and their greedy
// cosine clustering into global class-wise tokens.

#include <algorithm>
#include <optional>
#include <span>
#include <utility>

#include "fedgala/core.hpp"
#include "fedgala/graph.hpp"

namespace fedgala {

struct NodeWeight {
  double strength = 0.0;
  double clarity = 0.0;
  double omega = 0.0;
};

inline NodeWeight make_node_weight(double strength, double clarity) { return {strength, clarity, strength + clarity}; }

struct ClassPrototype {
  ClassId class_id = 0;
  Vector vec;
  double total_weight = 0.0;
};

/// Row c = mean embedding of the labeled nodes of class c.
inline Matrix labeled_class_means(const Matrix& z, std::span<const ClassId> labels, std::span<const NodeId> labeled,
                                  std::size_t num_classes) {
  Matrix means = Matrix::Zero(static_cast<Eigen::Index>(num_classes), z.cols());
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto v : labeled) {
    means.row(labels[v]) += z.row(v);
    ++counts[labels[v]];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    require(counts[c] > 0, "prototypes", "class " + std::to_string(c) + " has no labeled nodes");
    means.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  }
  return means;
}

/// P(y = c | z_i) = softmax_c(sharpness * cos(z_i, mean_c)).
inline Matrix class_probabilities(const Matrix& z, const Matrix& labeled_means, double sharpness) {
  constexpr const char* kMod = "prototypes";
  require(labeled_means.rows() >= 2, kMod, "need at least two classes");
  require(z.cols() == labeled_means.cols(), kMod, "embedding width != class mean width");
  for (Eigen::Index c = 0; c < labeled_means.rows(); ++c)
    require(labeled_means.row(c).norm() > 0.0, kMod, "zero class mean for class " + std::to_string(c));
  Matrix probs(z.rows(), labeled_means.rows());
  Vector logits(labeled_means.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index c = 0; c < labeled_means.rows(); ++c)
      logits[c] = sharpness * cosine(z.row(i).transpose(), labeled_means.row(c).transpose());
    probs.row(i) = softmax(logits).transpose();
  }
  return probs;
}

/// Knowledge strength: the classifier's maximum class probability.
inline double knowledge_strength(const Eigen::Ref<const Vector>& prob_row) { return prob_row.maxCoeff(); }

/// Knowledge clarity: 1 - mean cosine to the given neighbors; 1 when there
/// are none.
inline double knowledge_clarity(const Matrix& z, NodeId node, std::span<const NodeId> neighbors) {
  require(node < z.rows(), "prototypes", "clarity node out of range");
  if (neighbors.empty()) return 1.0;
  double acc = 0.0;
  for (auto j : neighbors) acc += cosine(z.row(node).transpose(), z.row(j).transpose());
  return 1.0 - acc / static_cast<double>(neighbors.size());
}

/// Graph neighbors, uniformly subsampled to at most k.
inline std::vector<NodeId> clarity_neighbors(const Graph& g, NodeId node, std::size_t k, Rng& rng) {
  std::vector<NodeId> nb = g.neighbors(node);
  if (nb.size() <= k) return nb;
  std::shuffle(nb.begin(), nb.end(), rng);
  nb.resize(k);
  std::sort(nb.begin(), nb.end());
  return nb;
}

/// sum omega_i z_i / sum omega_i over `members` with the given class;
/// nullopt when the class has no members.
inline std::optional<ClassPrototype> class_prototype(const Matrix& z, std::span<const double> omegas,
                                                     std::span<const ClassId> labels, std::span<const NodeId> members,
                                                     ClassId class_id) {
  Vector acc = Vector::Zero(z.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto v = members[i];
    if (labels[v] != class_id) continue;
    acc += omegas[i] * z.row(v).transpose();
    total += omegas[i];
  }
  if (total <= 0.0) return std::nullopt;
  return ClassPrototype{class_id, acc / total, total};
}

struct PrototypeConfig {
  double sharpness = 10.0;
  std::size_t clarity_k = 5;
  std::uint64_t seed = 0;
};

/// All class prototypes of one client, built from its labeled (train) nodes.
inline std::vector<ClassPrototype> client_prototypes(const ClientShard& shard, const Matrix& z,
                                                     const PrototypeConfig& cfg,
                                                     std::vector<NodeWeight>* weights_out = nullptr) {
  const Graph& g = shard.graph;
  const auto& labeled = shard.train;
  std::vector<ClassId> present;
  for (auto v : labeled) present.push_back(g.labels()[v]);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (labeled.empty() || present.size() < 2) return {};

  // Probabilities over the classes present in the labeled split.
  Matrix means(static_cast<Eigen::Index>(present.size()), z.cols());
  for (std::size_t c = 0; c < present.size(); ++c) {
    Vector acc = Vector::Zero(z.cols());
    std::size_t n = 0;
    for (auto v : labeled)
      if (g.labels()[v] == present[c]) {
        acc += z.row(v).transpose();
        ++n;
      }
    means.row(static_cast<Eigen::Index>(c)) = (acc / static_cast<double>(n)).transpose();
  }
  const Matrix labeled_z = [&] {
    Matrix m(static_cast<Eigen::Index>(labeled.size()), z.cols());
    for (std::size_t i = 0; i < labeled.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = z.row(labeled[i]);
    return m;
  }();
  const Matrix probs = class_probabilities(labeled_z, means, cfg.sharpness);

  Rng rng(derive_seed({cfg.seed, 0xc1a7ULL}));
  std::vector<double> omegas(labeled.size());
  std::vector<NodeWeight> weights(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto nb = clarity_neighbors(g, labeled[i], cfg.clarity_k, rng);
    weights[i] = make_node_weight(knowledge_strength(probs.row(static_cast<Eigen::Index>(i)).transpose()),
                                  knowledge_clarity(z, labeled[i], nb));
    omegas[i] = weights[i].omega;
  }
  std::vector<ClassPrototype> out;
  for (auto c : present)
    if (auto p = class_prototype(z, omegas, g.labels(), labeled, c)) out.push_back(std::move(*p));
  if (weights_out) *weights_out = std::move(weights);
  return out;
}

struct UploadedPrototype {
  ClientId client = 0;
  ClassPrototype proto;
};

struct GlobalToken {
  Vector vec;
  std::vector<std::pair<ClientId, ClassId>> members;
};

using GlobalTokenSet = std::vector<GlobalToken>;

/// Greedy clustering in (client, class) order: join the first cluster whose
/// centroid has cosine >= threshold, else open a new one. Centroids are
/// unweighted member means, recomputed after each join.
inline GlobalTokenSet aggregate_prototypes(std::vector<UploadedPrototype> uploads, double cos_threshold) {
  std::stable_sort(uploads.begin(), uploads.end(), [](const auto& a, const auto& b) {
    return std::pair(a.client, a.proto.class_id) < std::pair(b.client, b.proto.class_id);
  });
  GlobalTokenSet tokens;
  std::vector<Vector> sums;
  for (const auto& up : uploads) {
    bool joined = false;
    for (std::size_t c = 0; c < tokens.size() && !joined; ++c) {
      if (cosine(tokens[c].vec, up.proto.vec) >= cos_threshold) {
        sums[c] += up.proto.vec;
        tokens[c].members.emplace_back(up.client, up.proto.class_id);
        tokens[c].vec = sums[c] / static_cast<double>(tokens[c].members.size());
        joined = true;
      }
    }
    if (!joined) {
      sums.push_back(up.proto.vec);
      tokens.push_back({up.proto.vec, {{up.client, up.proto.class_id}}});
    }
  }
  return tokens;
}

}  // namespace fedgala
