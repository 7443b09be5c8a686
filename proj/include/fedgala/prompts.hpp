#pragma once

// Phase II: dual prompt pools over a frozen backbone.
//
// Text prompts are L_p extra rows pooled together with a node's summary
// token embeddings; graph prompts are an additive bias on the input node
// features. The task head is a cosine-softmax prototype classifier: class
// means come from the text side of the labeled nodes and queries are the
// graph-side embeddings, so classification rides on graph-text alignment.

#include <array>
#include <chrono>
#include <functional>
#include <string_view>

#include "fedgala/alignment.hpp"
#include "fedgala/encoders.hpp"
#include "fedgala/federation.hpp"
#include "fedgala/prototypes.hpp"
#include "fedgala/transport.hpp"

namespace fedgala {

enum class Channel { text, graph };

struct PromptPool {
  Channel channel = Channel::text;
  std::vector<Matrix> prompts;  // text: [L_p x d]; graph: [1 x d_in]

  std::size_t size() const noexcept { return prompts.size(); }
  std::uint64_t checksum(std::size_t m) const { return fedgala::checksum(prompts.at(m)); }
};

/// Text prompt m = token (m mod |tokens|) tiled over L_p rows plus Gaussian
/// jitter; graph prompts are small Gaussians in input space. An empty token
/// set falls back to Gaussian text prompts.
inline std::pair<PromptPool, PromptPool> init_pools(const GlobalTokenSet& tokens, std::size_t M, std::size_t prompt_len,
                                                    std::size_t d, std::size_t d_in, std::uint64_t seed,
                                                    double jitter = 0.01) {
  require(M >= 1, "prompts", "prompt pool size must be >= 1");
  Rng rng(derive_seed({seed, 0x9001ULL}));
  PromptPool text{Channel::text, {}}, graph{Channel::graph, {}};
  for (std::size_t m = 0; m < M; ++m) {
    Matrix p = gaussian_matrix(static_cast<Eigen::Index>(prompt_len), static_cast<Eigen::Index>(d), jitter, rng);
    if (!tokens.empty()) {
      const Vector& tok = tokens[m % tokens.size()].vec;
      require(static_cast<std::size_t>(tok.size()) == d, "prompts", "token width != embedding width");
      p.rowwise() += tok.transpose();
    }
    round_to_f32(p);
    text.prompts.push_back(std::move(p));
  }
  for (std::size_t m = 0; m < M; ++m) {
    Matrix p = gaussian_matrix(1, static_cast<Eigen::Index>(d_in), jitter, rng);
    round_to_f32(p);
    graph.prompts.push_back(std::move(p));
  }
  return {std::move(text), std::move(graph)};
}

/// Frozen per-client inputs for Phase II.
struct FrozenClient {
  const ClientShard* shard = nullptr;
  PositionalEncoding pe;
  EncoderParams backbone;
  std::vector<TokenSeq> summaries;  // per node
  Matrix summary_sums;              // per node sum of summary token rows
  std::vector<double> summary_lens;
};

inline FrozenClient make_frozen_client(const ClientShard& shard, PositionalEncoding pe, EncoderParams backbone,
                                       const TextEncoder& text, std::size_t summary_len = kDefaultSummaryLen) {
  FrozenClient fc{&shard, std::move(pe), std::move(backbone), {}, {}, {}};
  const auto n = shard.graph.num_nodes();
  fc.summary_sums.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(text.dim()));
  for (NodeId v = 0; v < n; ++v) {
    fc.summaries.push_back(neighbor_summary(shard.graph, v, summary_len));
    fc.summary_sums.row(v) = text.sum_rows(fc.summaries.back()).transpose();
    fc.summary_lens.push_back(static_cast<double>(fc.summaries.back().size()));
  }
  return fc;
}

struct PromptedEmbeddings {
  Matrix zg;  // graph side, [n x d]
  Matrix zt;  // text side, [n x d]
  GraphForward forward;
};

/// Attaches prompts and runs both frozen encoders. phi_text may have zero
/// rows (no text prompt).
inline PromptedEmbeddings apply_prompts(const FrozenClient& fc, const Matrix& phi_text, const Matrix& phi_graph) {
  constexpr const char* kMod = "prompts";
  const Graph& g = fc.shard->graph;
  require(phi_graph.rows() == 1 && static_cast<std::size_t>(phi_graph.cols()) == g.feature_dim(), kMod,
          "graph prompt must be [1 x d_in]");
  require(phi_text.rows() == 0 || phi_text.cols() == fc.summary_sums.cols(), kMod, "text prompt width != d");
  PromptedEmbeddings out;
  Matrix x = g.features();
  x.rowwise() += phi_graph.row(0);
  out.forward = graph_forward(fc.backbone, g, fc.pe, x);
  out.zg = out.forward.z;

  const double lp = static_cast<double>(phi_text.rows());
  Vector prompt_sum = phi_text.rows() > 0 ? Vector(phi_text.colwise().sum().transpose()) : Vector::Zero(fc.summary_sums.cols());
  out.zt.resize(fc.summary_sums.rows(), fc.summary_sums.cols());
  for (Eigen::Index i = 0; i < out.zt.rows(); ++i)
    out.zt.row(i) = (prompt_sum.transpose() + fc.summary_sums.row(i)) / (lp + fc.summary_lens[static_cast<std::size_t>(i)]);
  return out;
}

/// Fraction of `split` nodes whose max-cosine class mean matches their label.
inline double evaluate(const Graph& g, std::span<const NodeId> split, const Matrix& queries, const Matrix& class_means) {
  require(!split.empty(), "prompts", "evaluation split is empty");
  std::size_t correct = 0;
  for (auto v : split) {
    Eigen::Index best = 0;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < class_means.rows(); ++c) {
      const double cs = cosine(queries.row(v).transpose(), class_means.row(c).transpose());
      if (cs > best_cos) {
        best_cos = cs;
        best = c;
      }
    }
    correct += static_cast<ClassId>(best) == g.labels()[v];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Scores prompted embeddings on `split` with text-side class means from the
/// train split.
inline double evaluate_split(const FrozenClient& fc, const PromptedEmbeddings& emb, std::span<const NodeId> split) {
  const Graph& g = fc.shard->graph;
  const Matrix means = labeled_class_means(emb.zt, g.labels(), fc.shard->train, g.num_classes());
  return evaluate(g, split, emb.zg, means);
}

// ---------------------------------------------------------------------------
// Task loss and its gradient w.r.t. the prompts

struct TaskGrads {
  double loss = 0.0;
  double train_accuracy = 0.0;
  Matrix phi_text;   // same shape as the text prompt
  Matrix phi_graph;  // [1 x d_in]
};

/// Prompt parameters Phase II differentiates; everything else is frozen.
inline constexpr std::array<std::string_view, 2> kFinetuneTargets = {"phi_T", "phi_G"};

/// Mean cross-entropy of the cosine-softmax prototype classifier over the
/// train split, with exact gradients for both prompts.
inline TaskGrads task_grads(const FrozenClient& fc, const Matrix& phi_text, const Matrix& phi_graph, double sharpness) {
  constexpr const char* kMod = "prompts";
  const Graph& g = fc.shard->graph;
  const auto& train = fc.shard->train;
  require(!train.empty(), kMod, "fine-tuning needs a non-empty train split");
  const auto C = static_cast<Eigen::Index>(g.num_classes());
  const PromptedEmbeddings emb = apply_prompts(fc, phi_text, phi_graph);

  std::vector<double> counts(static_cast<std::size_t>(C), 0.0);
  Matrix means = Matrix::Zero(C, emb.zt.cols());
  for (auto v : train) {
    means.row(g.labels()[v]) += emb.zt.row(v);
    counts[g.labels()[v]] += 1.0;
  }
  for (Eigen::Index c = 0; c < C; ++c) {
    require(counts[static_cast<std::size_t>(c)] > 0, kMod, "class " + std::to_string(c) + " missing from train split");
    means.row(c) /= counts[static_cast<std::size_t>(c)];
  }
  Vector mnorm(C);
  for (Eigen::Index c = 0; c < C; ++c) mnorm[c] = means.row(c).norm();

  TaskGrads out;
  const double n_tr = static_cast<double>(train.size());
  Matrix dq = Matrix::Zero(emb.zg.rows(), emb.zg.cols());
  Matrix dmeans = Matrix::Zero(C, means.cols());
  std::size_t correct = 0;
  for (auto v : train) {
    const double qn = emb.zg.row(v).norm();
    Vector cosv(C), logits(C);
    for (Eigen::Index c = 0; c < C; ++c) {
      cosv[c] = (qn > 0 && mnorm[c] > 0) ? emb.zg.row(v).dot(means.row(c)) / (qn * mnorm[c]) : 0.0;
      logits[c] = sharpness * cosv[c];
    }
    const Vector p = softmax(logits);
    const auto y = static_cast<Eigen::Index>(g.labels()[v]);
    Eigen::Index argmax;
    logits.maxCoeff(&argmax);
    correct += argmax == y;
    out.loss -= std::log(std::max(p[y], std::numeric_limits<double>::min())) / n_tr;
    if (qn <= 0) continue;
    for (Eigen::Index c = 0; c < C; ++c) {
      const double dl = (p[c] - (c == y ? 1.0 : 0.0)) / n_tr * sharpness;
      if (mnorm[c] <= 0) continue;
      dq.row(v) += dl * (means.row(c) / mnorm[c] - cosv[c] * emb.zg.row(v) / qn) / qn;
      dmeans.row(c) += dl * (emb.zg.row(v) / qn - cosv[c] * means.row(c) / mnorm[c]) / mnorm[c];
    }
  }
  out.train_accuracy = static_cast<double>(correct) / n_tr;

  // Text side: mean_c -> pooled node text -> every prompt row.
  Vector drow = Vector::Zero(means.cols());
  for (auto v : train) {
    const double lp = static_cast<double>(phi_text.rows());
    drow += dmeans.row(g.labels()[v]).transpose() / (counts[g.labels()[v]] * (lp + fc.summary_lens[v]));
  }
  out.phi_text = drow.transpose().replicate(phi_text.rows(), 1);

  // Graph side: through the frozen encoder to the input bias.
  const GraphGradients gg = graph_backward(fc.backbone, emb.forward.cache, dq);
  out.phi_graph = gg.features.colwise().sum();
  return out;
}

struct FinetuneResult {
  Matrix phi_text, phi_graph;
  std::vector<double> losses;           // pre-step loss per epoch
  std::vector<double> train_accuracy;   // pre-step, per epoch
};

/// Gradient descent on the two selected prompts only.
inline FinetuneResult finetune_prompts(const FrozenClient& fc, const TextEncoder& text, Matrix phi_text,
                                       Matrix phi_graph, double lr, std::size_t epochs, double sharpness) {
  const auto backbone_sum = fc.backbone.checksum();
  const auto table_sum = text.checksum();
  FinetuneResult out;
  for (std::size_t e = 0; e < epochs; ++e) {
    const TaskGrads tg = task_grads(fc, phi_text, phi_graph, sharpness);
    out.losses.push_back(tg.loss);
    out.train_accuracy.push_back(tg.train_accuracy);
    if (lr == 0.0) continue;
    phi_text -= lr * tg.phi_text;
    phi_graph -= lr * tg.phi_graph;
    round_to_f32(phi_text);
    round_to_f32(phi_graph);
  }
  require(fc.backbone.checksum() == backbone_sum && text.checksum() == table_sum, "prompts",
          "frozen backbone changed during prompt tuning");
  out.phi_text = std::move(phi_text);
  out.phi_graph = std::move(phi_graph);
  return out;
}

struct Selection {
  std::size_t index = 0;
  double score = 0.0;
};

/// argmax_m of validation accuracy with prompt m of `pool` attached and the
/// other channel held at `other`; ties go to the lowest index.
inline Selection select_prompt(const PromptPool& pool, const FrozenClient& fc, const Matrix& other) {
  require(pool.size() >= 1, "prompts", "empty prompt pool");
  Selection best{0, -1.0};
  for (std::size_t m = 0; m < pool.size(); ++m) {
    const auto emb = pool.channel == Channel::text ? apply_prompts(fc, pool.prompts[m], other)
                                                   : apply_prompts(fc, other, pool.prompts[m]);
    const double score = evaluate_split(fc, emb, fc.shard->val);
    if (score > best.score) best = {m, score};
  }
  return best;
}

struct PromptUpdate {
  ClientId client = 0;
  std::size_t index = 0;
  Matrix prompt;
  std::size_t n_k = 0;
};

/// phi_m <- sum_{k in S_m} (n_k / N_m) phi_k for every selected m; prompts no
/// client selected are returned untouched.
inline PromptPool group_aggregate(PromptPool pool, std::vector<PromptUpdate> updates) {
  std::stable_sort(updates.begin(), updates.end(), [](const auto& a, const auto& b) { return a.client < b.client; });
  std::vector<std::vector<const PromptUpdate*>> groups(pool.size());
  for (const auto& u : updates) {
    require(u.index < pool.size(), "prompts", "update references prompt index out of range");
    require(u.prompt.rows() == pool.prompts[u.index].rows() && u.prompt.cols() == pool.prompts[u.index].cols(),
            "prompts", "update prompt shape mismatch");
    groups[u.index].push_back(&u);
  }
  for (std::size_t m = 0; m < pool.size(); ++m) {
    if (groups[m].empty()) continue;
    double total = 0.0;
    for (const auto* u : groups[m]) total += static_cast<double>(u->n_k);
    require(total > 0.0, "prompts", "group with zero total sample count");
    Matrix acc = Matrix::Zero(pool.prompts[m].rows(), pool.prompts[m].cols());
    for (const auto* u : groups[m]) acc += (static_cast<double>(u->n_k) / total) * u->prompt;
    pool.prompts[m] = std::move(acc);
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Wire format: m_T (u32), phi_T, m_G (u32), phi_G, n_k (u64).

struct PromptUpload {
  std::uint32_t text_index = 0;
  Matrix phi_text;
  std::uint32_t graph_index = 0;
  Matrix phi_graph;
  std::uint64_t n_k = 0;
};

inline constexpr std::size_t kSelectionMetadataBytes = 4 + 4 + 8;

inline Bytes encode(const PromptUpload& u) {
  ByteWriter w;
  w.put_u32(u.text_index);
  w.put_matrix_f32(u.phi_text);
  w.put_u32(u.graph_index);
  w.put_matrix_f32(u.phi_graph);
  w.put_u64(u.n_k);
  return w.take();
}

inline PromptUpload decode_prompt_upload(const Bytes& b, std::size_t prompt_len, std::size_t d, std::size_t d_in) {
  ByteReader r(b);
  PromptUpload u;
  u.text_index = r.get_u32();
  u.phi_text.resize(static_cast<Eigen::Index>(prompt_len), static_cast<Eigen::Index>(d));
  r.get_matrix_f32(u.phi_text);
  u.graph_index = r.get_u32();
  u.phi_graph.resize(1, static_cast<Eigen::Index>(d_in));
  r.get_matrix_f32(u.phi_graph);
  u.n_k = r.get_u64();
  require(r.remaining() == 0, "transport", "trailing bytes in prompt upload");
  return u;
}

inline Bytes encode_pools(const PromptPool& text, const PromptPool& graph) {
  ByteWriter w;
  for (const auto& p : text.prompts) w.put_matrix_f32(p);
  for (const auto& p : graph.prompts) w.put_matrix_f32(p);
  return w.take();
}

inline std::pair<PromptPool, PromptPool> decode_pools(const Bytes& b, std::size_t M, std::size_t prompt_len,
                                                      std::size_t d, std::size_t d_in) {
  ByteReader r(b);
  PromptPool text{Channel::text, {}}, graph{Channel::graph, {}};
  for (std::size_t m = 0; m < M; ++m) {
    Matrix p(static_cast<Eigen::Index>(prompt_len), static_cast<Eigen::Index>(d));
    r.get_matrix_f32(p);
    text.prompts.push_back(std::move(p));
  }
  for (std::size_t m = 0; m < M; ++m) {
    Matrix p(1, static_cast<Eigen::Index>(d_in));
    r.get_matrix_f32(p);
    graph.prompts.push_back(std::move(p));
  }
  require(r.remaining() == 0, "transport", "trailing bytes in pool broadcast");
  return {std::move(text), std::move(graph)};
}

// ---------------------------------------------------------------------------
// Phase II driver

struct FinetuneConfig {
  std::size_t rounds = 20;
  std::size_t epochs = 50;
  double lr = 0.5;
  std::size_t pool_size = 10;
  std::size_t prompt_len = 16;
  double sharpness = 10.0;
  double jitter = 0.01;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct ClientSelection {
  ClientId client = 0;
  std::size_t text_index = 0;
  std::size_t graph_index = 0;
  double validation_score = 0.0;
};

struct FinetunedBundle {
  PromptPool text_pool, graph_pool;
  std::vector<ClientSelection> selections;  // final, per client
  std::vector<RoundReport> reports;
  std::vector<double> test_accuracy;        // per client, final pools
  std::vector<std::vector<ClientSelection>> round_selections;
};

struct FinetuneHooks {
  std::function<void(std::size_t round, const PromptPool& text, const PromptPool& graph)> on_round_end;
};

/// Sequential coordinate selection: text first (graph prompt at its previous
/// selection), then graph.
inline ClientSelection select_both(const FrozenClient& fc, ClientId k, const PromptPool& text_pool,
                                   const PromptPool& graph_pool, std::size_t prev_graph) {
  const Selection st = select_prompt(text_pool, fc, graph_pool.prompts[prev_graph]);
  const Selection sg = select_prompt(graph_pool, fc, text_pool.prompts[st.index]);
  return {k, st.index, sg.index, sg.score};
}

inline FinetunedBundle run_finetuning(const FinetuneConfig& cfg, std::span<const FrozenClient> clients,
                                      const TextEncoder& text, const GlobalTokenSet& tokens, TrafficCounter* counter = nullptr,
                                      const FinetuneHooks& hooks = {}) {
  constexpr const char* kMod = "prompts";
  require(!clients.empty(), kMod, "fine-tuning needs at least one client");
  const std::size_t K = clients.size();
  const std::size_t d = text.dim();
  const std::size_t d_in = clients[0].shard->graph.feature_dim();
  const Transport transport{counter};

  FinetunedBundle out;
  std::tie(out.text_pool, out.graph_pool) = init_pools(tokens, cfg.pool_size, cfg.prompt_len, d, d_in, cfg.seed, cfg.jitter);
  std::vector<std::size_t> prev_graph(K, 0);

  struct ClientRound {
    ClientSelection sel;
    Bytes upload;
    std::uint64_t bytes_down = 0;
    double loss = 0.0;
    double ms = 0.0;
  };

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const Bytes broadcast = encode_pools(out.text_pool, out.graph_pool);
    std::vector<ClientRound> results(K);
    parallel_for(K, cfg.workers, [&](std::size_t k) {
      const auto start = std::chrono::steady_clock::now();
      const FrozenClient& fc = clients[k];
      ClientRound& res = results[k];
      const Bytes received = transport.download(broadcast);
      res.bytes_down = received.size();
      const auto [tp, gp] = decode_pools(received, cfg.pool_size, cfg.prompt_len, d, d_in);

      res.sel = select_both(fc, static_cast<ClientId>(k), tp, gp, prev_graph[k]);
      const auto ft = finetune_prompts(fc, text, tp.prompts[res.sel.text_index], gp.prompts[res.sel.graph_index],
                                       cfg.lr, cfg.epochs, cfg.sharpness);
      double loss = 0.0;
      for (double l : ft.losses) loss += l;
      res.loss = ft.losses.empty() ? 0.0 : loss / static_cast<double>(ft.losses.size());
      res.upload = transport.upload(encode(PromptUpload{static_cast<std::uint32_t>(res.sel.text_index), ft.phi_text,
                                                        static_cast<std::uint32_t>(res.sel.graph_index), ft.phi_graph,
                                                        fc.shard->train.size()}));
      res.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    });

    std::vector<PromptUpdate> text_updates, graph_updates;
    std::vector<ClientSelection> sels;
    for (std::size_t k = 0; k < K; ++k) {
      const auto up = decode_prompt_upload(results[k].upload, cfg.prompt_len, d, d_in);
      text_updates.push_back({static_cast<ClientId>(k), up.text_index, up.phi_text, up.n_k});
      graph_updates.push_back({static_cast<ClientId>(k), up.graph_index, up.phi_graph, up.n_k});
      prev_graph[k] = up.graph_index;
      sels.push_back(results[k].sel);

      RoundReport rep;
      rep.phase = "finetune";
      rep.round = t;
      rep.client = static_cast<ClientId>(k);
      rep.sel_T = up.text_index;
      rep.sel_G = up.graph_index;
      rep.val = results[k].sel.validation_score;
      rep.loss = results[k].loss;
      rep.bytes_up = results[k].upload.size();
      rep.bytes_down = results[k].bytes_down;
      rep.ms = results[k].ms;
      out.reports.push_back(std::move(rep));
    }
    out.text_pool = group_aggregate(std::move(out.text_pool), std::move(text_updates));
    out.graph_pool = group_aggregate(std::move(out.graph_pool), std::move(graph_updates));
    for (auto& p : out.text_pool.prompts) round_to_f32(p);
    for (auto& p : out.graph_pool.prompts) round_to_f32(p);
    out.round_selections.push_back(std::move(sels));
    if (hooks.on_round_end) hooks.on_round_end(t, out.text_pool, out.graph_pool);
  }

  // Final evaluation: each client re-selects from the final pools and is
  // scored on its test split.
  out.selections.resize(K);
  out.test_accuracy.resize(K);
  parallel_for(K, cfg.workers, [&](std::size_t k) {
    const FrozenClient& fc = clients[k];
    out.selections[k] = select_both(fc, static_cast<ClientId>(k), out.text_pool, out.graph_pool, prev_graph[k]);
    const auto emb = apply_prompts(fc, out.text_pool.prompts[out.selections[k].text_index],
                                   out.graph_pool.prompts[out.selections[k].graph_index]);
    out.test_accuracy[k] = fc.shard->test.empty() ? 0.0 : evaluate_split(fc, emb, fc.shard->test);
  });
  return out;
}

}  // namespace fedgala
