#pragma once

// Phase I server/client protocol: degree-weighted aggregation of structural
// blocks, the ring of recent global blocks, and per-client history matching
// that rebuilds the local initialization from that ring.

#include <chrono>
#include <deque>
#include <functional>
#include <numeric>
#include <span>

#include "fedgala/alignment.hpp"
#include "fedgala/encoders.hpp"
#include "fedgala/graph.hpp"
#include "fedgala/parallel.hpp"
#include "fedgala/report.hpp"
#include "fedgala/transport.hpp"

namespace fedgala {

class HistoryPool {
 public:
  struct Entry {
    std::size_t round;
    StructuralBlock block;
  };

  explicit HistoryPool(std::size_t capacity = 5) : capacity_(capacity) {
    require(capacity >= 1, "federation", "history capacity must be >= 1");
  }

  /// Appends the newest global block, evicting the oldest beyond capacity.
  void push(std::size_t round, StructuralBlock block) {
    require(entries_.empty() || round > entries_.back().round, "federation", "history rounds must increase");
    entries_.push_back({round, std::move(block)});
    if (entries_.size() > capacity_) entries_.pop_front();
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::size_t> rounds() const {
    std::vector<std::size_t> r;
    for (const auto& e : entries_) r.push_back(e.round);
    return r;
  }
  std::vector<StructuralBlock> blocks() const {
    std::vector<StructuralBlock> b;
    for (const auto& e : entries_) b.push_back(e.block);
    return b;
  }

 private:
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Server-side rules

/// alpha_k = dbar_k / sum_j dbar_j
inline std::vector<double> aggregation_weights(std::span<const double> avg_degrees) {
  constexpr const char* kMod = "federation";
  require(!avg_degrees.empty(), kMod, "no clients to weight");
  double total = 0.0;
  for (double d : avg_degrees) {
    require(d >= 0.0 && std::isfinite(d), kMod, "average degree must be finite and >= 0");
    total += d;
  }
  require(total > 0.0, kMod, "all client average degrees are zero");
  std::vector<double> alphas(avg_degrees.size());
  for (std::size_t k = 0; k < alphas.size(); ++k) alphas[k] = avg_degrees[k] / total;
  return alphas;
}

/// theta_global = sum_k alpha_k theta_k over structural blocks only.
inline StructuralBlock aggregate_structural(std::span<const StructuralBlock> blocks, std::span<const double> weights) {
  constexpr const char* kMod = "federation";
  require(!blocks.empty(), kMod, "nothing to aggregate");
  require(blocks.size() == weights.size(), kMod, "weights length != number of blocks");
  StructuralBlock out = StructuralBlock::zeros_like(blocks[0]);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    require(blocks[k].same_shape(blocks[0]), kMod, "structural block shape mismatch");
    out.w1 += weights[k] * blocks[k].w1;
    out.w2 += weights[k] * blocks[k].w2;
  }
  return out;
}

/// Stabilized softmax over per-entry similarity sums.
inline std::vector<double> history_weights(std::span<const double> similarity_sums) {
  require(!similarity_sums.empty(), "federation", "no history similarities");
  Vector x(static_cast<Eigen::Index>(similarity_sums.size()));
  for (std::size_t i = 0; i < similarity_sums.size(); ++i) {
    require(std::isfinite(similarity_sums[i]), "federation", "non-finite history similarity");
    x[static_cast<Eigen::Index>(i)] = similarity_sums[i];
  }
  const Vector p = softmax(x);
  return {p.data(), p.data() + p.size()};
}

// ---------------------------------------------------------------------------
// Client-side history matching

struct HistoryProbe {
  Matrix per_node;  // [probe nodes x pool entries] cosine(z_i^G under entry r, z_i^T)

  /// Probe-batch mean per entry.
  std::vector<double> mean() const {
    Vector m = per_node.colwise().mean();
    return {m.data(), m.data() + m.size()};
  }
  /// Sum over probe nodes per entry; the softmax input.
  std::vector<double> sum() const {
    Vector s = per_node.colwise().sum();
    return {s.data(), s.data() + s.size()};
  }
};

/// Runs the structural forward pass with every pool entry (semantic branch
/// held at `semantic`), fuses, and scores each probe node's graph embedding
/// against its text anchor.
inline HistoryProbe history_similarities(const ClientShard& shard, const HistoryPool& pool,
                                         const Matrix& text_anchor, std::span<const NodeId> probe,
                                         const PositionalEncoding& pe, const SemanticBlock& semantic) {
  constexpr const char* kMod = "federation";
  require(!pool.empty(), kMod, "history pool is empty");
  require(!probe.empty(), kMod, "probe batch is empty");
  require(text_anchor.rows() == static_cast<Eigen::Index>(probe.size()), kMod, "anchor rows != probe size");
  HistoryProbe out{Matrix(static_cast<Eigen::Index>(probe.size()), static_cast<Eigen::Index>(pool.size()))};
  for (std::size_t r = 0; r < pool.size(); ++r) {
    const EncoderParams candidate{pool[r].block, semantic};
    const Matrix z = graph_forward(candidate, shard.graph, pe).z;
    for (std::size_t i = 0; i < probe.size(); ++i)
      out.per_node(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) =
          cosine(z.row(probe[i]).transpose(), text_anchor.row(static_cast<Eigen::Index>(i)).transpose());
  }
  return out;
}

/// Composes the client's encoder: semantic block kept as is, structural
/// block = sum_r beta_r theta_his^(r).
inline EncoderParams fuse_history(const SemanticBlock& local_semantic, const HistoryPool& pool,
                                  std::span<const double> betas) {
  constexpr const char* kMod = "federation";
  require(!pool.empty(), kMod, "cannot fuse an empty history pool");
  require(betas.size() == pool.size(), kMod, "betas length != pool size");
  StructuralBlock s = StructuralBlock::zeros_like(pool[0].block);
  for (std::size_t r = 0; r < pool.size(); ++r) {
    s.w1 += betas[r] * pool[r].block.w1;
    s.w2 += betas[r] * pool[r].block.w2;
  }
  return {std::move(s), local_semantic};
}

// ---------------------------------------------------------------------------
// Phase I driver

struct PretrainConfig {
  EncoderDims dims;
  std::size_t rounds = 30;
  std::size_t local_epochs = 2;
  double lr = 0.5;
  std::size_t history = 5;
  std::size_t batch = 64;
  std::size_t probe = 64;
  double noise_std = 0.1;
  std::size_t pe_depth = 8;
  std::size_t summary_len = kDefaultSummaryLen;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Per-client stream tags; client k uses k when empty.
  std::vector<std::uint64_t> client_seeds;

  std::uint64_t client_tag(std::size_t k) const { return client_seeds.empty() ? k : client_seeds.at(k); }
};

struct PretrainedBundle {
  std::vector<EncoderParams> client_params;  // last locally trained state
  std::vector<Temperature> temps;
  StructuralBlock global;
  HistoryPool pool{5};
  std::vector<RoundReport> reports;
  std::vector<double> round_mean_loss;  // index t-1 = mean client loss of round t
};

/// Per-client precomputed inputs.
struct ClientContext {
  const ClientShard* shard = nullptr;
  PositionalEncoding pe;
};

inline std::vector<ClientContext> make_contexts(std::span<const ClientShard> shards, std::size_t pe_depth) {
  std::vector<ClientContext> ctx;
  for (const auto& s : shards) ctx.push_back({&s, random_walk_pe(s.graph, pe_depth)});
  return ctx;
}

namespace detail {

inline std::vector<NodeId> sample_nodes(std::span<const NodeId> pool, std::size_t count, Rng& rng) {
  std::vector<NodeId> v(pool.begin(), pool.end());
  if (v.size() <= count) return v;
  std::shuffle(v.begin(), v.end(), rng);
  v.resize(count);
  std::sort(v.begin(), v.end());
  return v;
}

inline std::vector<NodeId> all_nodes(const Graph& g) {
  std::vector<NodeId> v(g.num_nodes());
  std::iota(v.begin(), v.end(), NodeId{0});
  return v;
}

}  // namespace detail

/// Probe batch: min(probe, |train|) train nodes (all nodes if no train split).
inline std::vector<NodeId> probe_batch(const ClientShard& shard, std::size_t probe, std::uint64_t seed) {
  Rng rng(seed);
  const auto nodes = shard.train.empty() ? detail::all_nodes(shard.graph) : shard.train;
  return detail::sample_nodes(nodes, probe, rng);
}

/// History-matched structural block for one client; falls back to the
/// broadcast global when the pool is empty.
inline std::pair<StructuralBlock, std::vector<double>> match_history(const ClientContext& ctx, const TextEncoder& text,
                                                                     const StructuralBlock& global,
                                                                     const HistoryPool& pool,
                                                                     const SemanticBlock& semantic,
                                                                     std::size_t probe, std::size_t summary_len,
                                                                     std::uint64_t seed) {
  if (pool.empty()) return {global, {}};
  const auto batch = probe_batch(*ctx.shard, probe, seed);
  const Matrix anchor = summary_embeddings(ctx.shard->graph, text, batch, summary_len);
  const auto sims = history_similarities(*ctx.shard, pool, anchor, batch, ctx.pe, semantic);
  const auto sums = sims.sum();
  auto betas = history_weights(sums);
  auto fused = fuse_history(semantic, pool, betas);
  return {std::move(fused.structural), std::move(betas)};
}

struct PretrainHooks {
  /// Called after the server refreshes the pool at the end of round t.
  std::function<void(std::size_t round, const HistoryPool&)> on_round_end;
};

inline PretrainedBundle run_pretraining(const PretrainConfig& cfg, std::span<const ClientShard> shards,
                                        const TextEncoder& text, TrafficCounter* counter = nullptr,
                                        const PretrainHooks& hooks = {}) {
  constexpr const char* kMod = "federation";
  require(!shards.empty(), kMod, "pre-training needs at least one client");
  require(cfg.local_epochs >= 1 && cfg.batch >= 1 && cfg.probe >= 1, kMod, "epochs, batch and probe must be >= 1");
  for (const auto& s : shards) require(s.graph.num_nodes() >= 1, kMod, "client shard has no nodes");
  require(cfg.client_seeds.empty() || cfg.client_seeds.size() == shards.size(), kMod, "client_seeds length != clients");
  const std::size_t K = shards.size();
  const Transport transport{counter};
  const auto ctx = make_contexts(shards, cfg.pe_depth);

  PretrainedBundle out;
  out.pool = HistoryPool(cfg.history);
  out.global = init_structural(cfg.dims, derive_seed({cfg.seed, 0x610ba1ULL}));
  for (std::size_t k = 0; k < K; ++k) {
    out.client_params.push_back({out.global, init_semantic(cfg.dims, derive_seed({cfg.seed, 0x10ca1ULL, cfg.client_tag(k)}))});
    out.temps.emplace_back();
  }

  struct ClientRound {
    Bytes upload;
    double loss = 0.0;
    std::vector<double> betas;
    std::uint64_t bytes_down = 0;
    double ms = 0.0;
  };

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const Bytes broadcast = encode_broadcast(out.global, out.pool.blocks());
    std::vector<ClientRound> results(K);

    parallel_for(K, cfg.workers, [&](std::size_t k) {
      const auto start = std::chrono::steady_clock::now();
      ClientRound& res = results[k];
      const Bytes received = transport.download(broadcast);
      res.bytes_down = received.size();
      const auto bc = decode_broadcast(received, cfg.dims);
      HistoryPool pool(cfg.history);
      const auto rounds = out.pool.rounds();
      for (std::size_t r = 0; r < bc.pool.size(); ++r) pool.push(rounds[r], bc.pool[r]);

      EncoderParams params = out.client_params[k];
      auto [structural, betas] = match_history(ctx[k], text, bc.global, pool, params.semantic, cfg.probe,
                                               cfg.summary_len, derive_seed({cfg.seed, cfg.client_tag(k), t, 0x960beULL}));
      params.structural = std::move(structural);
      res.betas = std::move(betas);

      Temperature temp = out.temps[k];
      const auto nodes = detail::all_nodes(ctx[k].shard->graph);
      double loss_sum = 0.0;
      for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
        Rng rng(derive_seed({cfg.seed, cfg.client_tag(k), t, e, 0xba7cULL}));
        const auto batch = detail::sample_nodes(nodes, cfg.batch, rng);
        const DisturbanceConfig dist{cfg.noise_std, derive_seed({cfg.seed, cfg.client_tag(k), t, e, 0xd157ULL})};
        auto step = local_train_step(*ctx[k].shard, ctx[k].pe, std::move(params), temp, text, batch, cfg.lr, dist,
                                     cfg.summary_len);
        params = std::move(step.params);
        temp = step.temp;
        loss_sum += step.loss;
      }
      res.loss = loss_sum / static_cast<double>(cfg.local_epochs);
      out.client_params[k] = params;
      out.temps[k] = temp;
      res.upload = transport.upload(encode(StructuralUpload{params.structural, ctx[k].shard->avg_degree}));
      res.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    });

    // Barrier passed: aggregate in client-id order.
    std::vector<StructuralBlock> blocks;
    std::vector<double> degrees;
    for (std::size_t k = 0; k < K; ++k) {
      auto up = decode_structural_upload(results[k].upload, cfg.dims);
      blocks.push_back(std::move(up.block));
      degrees.push_back(up.avg_degree);
    }
    const auto alphas = aggregation_weights(degrees);
    out.global = aggregate_structural(blocks, alphas);
    round_to_f32(out.global.w1);
    round_to_f32(out.global.w2);
    out.pool.push(t, out.global);

    double mean_loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      RoundReport rep;
      rep.phase = "pretrain";
      rep.round = t;
      rep.client = static_cast<ClientId>(k);
      rep.loss = results[k].loss;
      rep.alpha = alphas[k];
      rep.beta = results[k].betas;
      rep.bytes_up = results[k].upload.size();
      rep.bytes_down = results[k].bytes_down;
      rep.ms = results[k].ms;
      out.reports.push_back(std::move(rep));
      mean_loss += results[k].loss;
    }
    out.round_mean_loss.push_back(mean_loss / static_cast<double>(K));
    if (hooks.on_round_end) hooks.on_round_end(t, out.pool);
  }
  return out;
}

/// The encoder a client freezes for fine-tuning: its local semantic block
/// composed with the history-matched structural block from the final pool.
inline EncoderParams frozen_backbone(const PretrainedBundle& bundle, const ClientContext& ctx, std::size_t k,
                                     const TextEncoder& text, const PretrainConfig& cfg) {
  const auto& semantic = bundle.client_params.at(k).semantic;
  auto [structural, betas] = match_history(ctx, text, bundle.global, bundle.pool, semantic, cfg.probe,
                                           cfg.summary_len, derive_seed({cfg.seed, cfg.client_tag(k), cfg.rounds + 1, 0x960beULL}));
  EncoderParams p{std::move(structural), semantic};
  p.round_to_f32();
  return p;
}

}  // namespace fedgala
