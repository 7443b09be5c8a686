#pragma once

// End-to-end orchestration: config parsing, shard generation, Phase I,
// prototypes, Phase II, artifacts and the random-init control.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fedgala/federation.hpp"
#include "fedgala/graph_io.hpp"
#include "fedgala/prompts.hpp"
#include "fedgala/prototypes.hpp"

namespace fedgala {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  // data
  std::size_t clients = 3;
  std::size_t domains = 2;
  std::size_t classes = 3;
  std::size_t nodes_per_client = 60;
  double separation = 6.0;     // class-mean distance, in units of feature_noise
  double feature_noise = 1.0;
  double p_in = 0.3;
  double p_out = 0.02;
  std::size_t token_len = 6;
  std::size_t token_bins = 2;
  std::size_t vocab = 0;  // 0: exactly the ids the domains use
  PartitionStrategy partition = PartitionStrategy::label_stratified;
  std::optional<std::size_t> few_shot;
  // model
  std::size_t d = 32;
  std::size_t d_in = 16;
  std::size_t d_pe = 8;
  std::size_t summary_len = kDefaultSummaryLen;
  // Phase I
  std::size_t rounds = 30;
  std::size_t local_epochs = 10;
  double lr = 0.2;
  std::size_t batch = 64;
  std::size_t probe = 64;
  std::size_t history = 5;
  double noise_std = 0.1;
  // prototypes
  double sharpness = 10.0;
  std::size_t clarity_k = 5;
  double cos_threshold = 0.9;
  // Phase II
  std::size_t ft_rounds = 20;
  std::size_t ft_epochs = 50;
  double ft_lr = 0.5;
  std::size_t pool_size = 10;
  std::size_t prompt_len = 16;
  // runtime
  std::size_t workers = 1;
  bool save_shards = false;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  require(!is.fail() && is.eof(), "harness", "bad value for " + key + ": '" + value + "'");
  if constexpr (std::is_unsigned_v<T>) require(value.find('-') == std::string::npos, "harness", key + " must be >= 0");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Throws on any count that must be positive, bad probabilities etc.
inline void validate(const ExperimentConfig& c) {
  constexpr const char* kMod = "harness";
  auto positive = [&](std::size_t v, const char* name) { require(v >= 1, kMod, std::string(name) + " must be >= 1"); };
  positive(c.clients, "clients");
  positive(c.domains, "domains");
  positive(c.nodes_per_client, "nodes_per_client");
  positive(c.token_len, "token_len");
  positive(c.token_bins, "token_bins");
  positive(c.d, "d");
  positive(c.d_in, "d_in");
  positive(c.d_pe, "d_pe");
  positive(c.summary_len, "summary_len");
  positive(c.local_epochs, "local_epochs");
  positive(c.batch, "batch");
  positive(c.probe, "probe");
  positive(c.history, "history");
  positive(c.clarity_k, "clarity_k");
  positive(c.pool_size, "pool_size");
  positive(c.workers, "workers");
  require(c.classes >= 2, kMod, "classes must be >= 2");
  require(c.domains <= c.clients, kMod, "every domain needs at least one client");
  require(c.nodes_per_client >= c.classes, kMod, "nodes_per_client must be >= classes");
  require(c.d_in > c.token_len, kMod, "d_in must exceed token_len");
  require(c.p_in > c.p_out && c.p_out >= 0 && c.p_in <= 1, kMod, "need 0 <= p_out < p_in <= 1");
  require(c.separation > 0 && c.feature_noise > 0, kMod, "separation and feature_noise must be > 0");
  require(c.noise_std >= 0 && c.lr >= 0 && c.ft_lr >= 0 && c.sharpness > 0, kMod, "bad rate or noise setting");
  require(c.cos_threshold >= -1 && c.cos_threshold <= 1, kMod, "cos_threshold must be in [-1, 1]");
  require(!c.few_shot || *c.few_shot >= 1, kMod, "few_shot must be >= 1");
  if (c.few_shot)
    require(c.nodes_per_client / c.classes > 2 * *c.few_shot, kMod, "few_shot leaves no test nodes per class");
}

/// Flat `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline ExperimentConfig parse_config(const std::string& text) {
  using detail::parse_number;
  ExperimentConfig c;
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters;
  auto sz = [&](std::size_t& f) { return [&f](const std::string& k, const std::string& v) { f = parse_number<std::size_t>(k, v); }; };
  auto dbl = [&](double& f) { return [&f](const std::string& k, const std::string& v) { f = parse_number<double>(k, v); }; };
  setters["seed"] = [&](const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); };
  setters["clients"] = sz(c.clients);
  setters["domains"] = sz(c.domains);
  setters["classes"] = sz(c.classes);
  setters["nodes_per_client"] = sz(c.nodes_per_client);
  setters["separation"] = dbl(c.separation);
  setters["feature_noise"] = dbl(c.feature_noise);
  setters["p_in"] = dbl(c.p_in);
  setters["p_out"] = dbl(c.p_out);
  setters["token_len"] = sz(c.token_len);
  setters["token_bins"] = sz(c.token_bins);
  setters["vocab"] = sz(c.vocab);
  setters["partition"] = [&](const std::string& k, const std::string& v) {
    if (v == "edge_cut")
      c.partition = PartitionStrategy::edge_cut;
    else if (v == "label_stratified")
      c.partition = PartitionStrategy::label_stratified;
    else
      throw Error("harness", "bad value for " + k + ": '" + v + "'");
  };
  setters["few_shot"] = [&](const std::string& k, const std::string& v) {
    if (v == "none" || v == "0")
      c.few_shot.reset();
    else
      c.few_shot = parse_number<std::size_t>(k, v);
  };
  setters["d"] = sz(c.d);
  setters["d_in"] = sz(c.d_in);
  setters["d_pe"] = sz(c.d_pe);
  setters["summary_len"] = sz(c.summary_len);
  setters["rounds"] = sz(c.rounds);
  setters["local_epochs"] = sz(c.local_epochs);
  setters["lr"] = dbl(c.lr);
  setters["batch"] = sz(c.batch);
  setters["probe"] = sz(c.probe);
  setters["history"] = sz(c.history);
  setters["noise_std"] = dbl(c.noise_std);
  setters["sharpness"] = dbl(c.sharpness);
  setters["clarity_k"] = sz(c.clarity_k);
  setters["cos_threshold"] = dbl(c.cos_threshold);
  setters["ft_rounds"] = sz(c.ft_rounds);
  setters["ft_epochs"] = sz(c.ft_epochs);
  setters["ft_lr"] = dbl(c.ft_lr);
  setters["pool_size"] = sz(c.pool_size);
  setters["prompt_len"] = sz(c.prompt_len);
  setters["workers"] = sz(c.workers);
  setters["save_shards"] = [&](const std::string& k, const std::string& v) {
    require(v == "true" || v == "false", "harness", "bad value for " + k + ": '" + v + "'");
    c.save_shards = v == "true";
  };

  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, "harness", "line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    require(it != setters.end(), "harness", "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "harness", "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// FEDGALA_SEED, when set, replaces the config seed.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* s = std::getenv("FEDGALA_SEED"); s && *s) c.seed = detail::parse_number<std::uint64_t>("FEDGALA_SEED", s);
}

// ---------------------------------------------------------------------------
// Data

inline std::uint32_t derived_vocab(const ExperimentConfig& c) {
  return static_cast<std::uint32_t>(c.domains * c.classes * c.token_len * c.token_bins);
}

inline std::uint32_t vocab_size(const ExperimentConfig& c) {
  const auto need = derived_vocab(c);
  require(c.vocab == 0 || c.vocab >= need, "harness", "vocab smaller than the ids the domains use");
  return c.vocab == 0 ? need : static_cast<std::uint32_t>(c.vocab);
}

/// Clients are dealt to domains round-robin (client k -> domain k mod D).
inline std::size_t domain_of(const ExperimentConfig& c, std::size_t k) { return k % c.domains; }

/// Domain j: class c's mean puts separation/sqrt2 on its own coordinate past
/// the token-coupled ones, so any two class means sit `separation` apart.
inline DomainSpec domain_spec(const ExperimentConfig& c, std::size_t j, std::size_t nodes) {
  DomainSpec s;
  const std::size_t free = c.d_in - c.token_len;
  s.class_means = Matrix::Zero(static_cast<Eigen::Index>(c.classes), static_cast<Eigen::Index>(c.d_in));
  for (std::size_t k = 0; k < c.classes; ++k)
    s.class_means(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c.token_len + (j * c.classes + k) % free)) =
        c.separation * c.feature_noise / std::sqrt(2.0);
  s.noise_std = c.feature_noise;
  s.p_in = c.p_in;
  s.p_out = c.p_out;
  s.nodes_per_class.assign(c.classes, nodes / c.classes);
  for (std::size_t k = 0; k < nodes % c.classes; ++k) ++s.nodes_per_class[k];
  s.token_len = c.token_len;
  s.token_bins = c.token_bins;
  s.vocab_base = static_cast<TokenId>(j * c.classes * c.token_len * c.token_bins);
  s.vocab = vocab_size(c);
  s.domain_id = static_cast<std::uint32_t>(j);
  return s;
}

inline SplitConfig split_config(const ExperimentConfig& c) {
  SplitConfig s;
  s.few_shot = c.few_shot;
  return s;
}

/// One graph per domain, partitioned over that domain's clients. Returned in
/// client-id order.
inline std::vector<ClientShard> build_shards(const ExperimentConfig& c) {
  std::vector<ClientShard> shards(c.clients);
  for (std::size_t j = 0; j < c.domains; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < c.clients; ++k)
      if (domain_of(c, k) == j) members.push_back(k);
    const Graph g = generate_synthetic(domain_spec(c, j, c.nodes_per_client * members.size()),
                                       derive_seed({c.seed, j, 0xd07a1ULL}));
    auto parts = partition(g, members.size(), c.partition, derive_seed({c.seed, j, 0x5a4dULL}), split_config(c));
    for (std::size_t i = 0; i < members.size(); ++i) shards[members[i]] = std::move(parts[i]);
  }
  return shards;
}

inline PretrainConfig pretrain_config(const ExperimentConfig& c) {
  PretrainConfig p;
  p.dims = {c.d_pe, c.d_in, c.d};
  p.rounds = c.rounds;
  p.local_epochs = c.local_epochs;
  p.lr = c.lr;
  p.history = c.history;
  p.batch = c.batch;
  p.probe = c.probe;
  p.noise_std = c.noise_std;
  p.pe_depth = c.d_pe;
  p.summary_len = c.summary_len;
  p.seed = derive_seed({c.seed, 0x1ULL});
  p.workers = c.workers;
  return p;
}

inline FinetuneConfig finetune_config(const ExperimentConfig& c) {
  FinetuneConfig f;
  f.rounds = c.ft_rounds;
  f.epochs = c.ft_epochs;
  f.lr = c.ft_lr;
  f.pool_size = c.pool_size;
  f.prompt_len = c.prompt_len;
  f.sharpness = c.sharpness;
  f.seed = derive_seed({c.seed, 0x2ULL});
  f.workers = c.workers;
  return f;
}

inline TextEncoder make_text_encoder(const ExperimentConfig& c) {
  return TextEncoder(vocab_size(c), c.d, derive_seed({c.seed, 0x7e47ULL}));
}

// ---------------------------------------------------------------------------
// Running

/// First round whose trailing mean (window 3) is within 5% of the final
/// smoothed value; 0 for an empty curve.
inline std::size_t rounds_to_convergence(std::span<const double> losses, std::size_t window = 3, double tol = 0.05) {
  if (losses.empty()) return 0;
  std::vector<double> smooth(losses.size());
  for (std::size_t t = 0; t < losses.size(); ++t) {
    const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
    double acc = 0.0;
    for (std::size_t i = lo; i <= t; ++i) acc += losses[i];
    smooth[t] = acc / static_cast<double>(t + 1 - lo);
  }
  const double final = smooth.back();
  for (std::size_t t = 0; t < smooth.size(); ++t)
    if (std::abs(smooth[t] - final) <= tol * std::abs(final)) return t + 1;
  return smooth.size();
}

struct ExperimentResult {
  ExperimentConfig config;
  bool control = false;
  std::vector<ClientShard> shards;
  PretrainedBundle pretrained;
  std::vector<EncoderParams> backbones;
  std::vector<std::vector<ClassPrototype>> prototypes;  // per client
  GlobalTokenSet tokens;
  FinetunedBundle finetuned;
  std::uint64_t pretrain_up = 0, pretrain_down = 0, finetune_up = 0, finetune_down = 0;
  std::uint64_t frozen_checksum_before = 0, frozen_checksum_after = 0;
  nlohmann::ordered_json summary;
};

struct RunHooks {
  PretrainHooks pretrain;
  FinetuneHooks finetune;
};

namespace detail {

inline std::uint64_t frozen_checksum(std::span<const FrozenClient> clients, const TextEncoder& text) {
  std::uint64_t h = text.checksum();
  for (const auto& c : clients) h = mix64(h ^ c.backbone.checksum());
  return h;
}

// Rewraps a module error with the phase and round it happened in.
template <class Fn>
auto in_phase(const char* phase, const std::size_t& round, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.module(), std::string(phase) + " round " + std::to_string(round) + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::ordered_json make_summary(const ExperimentResult& r) {
  nlohmann::ordered_json s;
  s["mode"] = r.control ? "control" : "fedgala";
  s["seed"] = r.config.seed;
  s["clients"] = r.config.clients;
  s["rounds"] = r.control ? 0 : r.config.rounds;
  s["ft_rounds"] = r.config.ft_rounds;
  s["test_accuracy"] = r.finetuned.test_accuracy;
  double mean = 0.0;
  for (double a : r.finetuned.test_accuracy) mean += a;
  s["mean_test_accuracy"] = mean / static_cast<double>(r.finetuned.test_accuracy.size());
  s["pretrain_loss"] = r.pretrained.round_mean_loss;
  s["rounds_to_convergence"] = rounds_to_convergence(r.pretrained.round_mean_loss);
  auto sels = nlohmann::ordered_json::array();
  for (const auto& sel : r.finetuned.selections)
    sels.push_back({{"client", sel.client}, {"sel_T", sel.text_index}, {"sel_G", sel.graph_index}, {"val", sel.validation_score}});
  s["selections"] = sels;
  s["global_tokens"] = r.tokens.size();
  s["bytes"] = {{"pretrain_up", r.pretrain_up},
                {"pretrain_down", r.pretrain_down},
                {"finetune_up", r.finetune_up},
                {"finetune_down", r.finetune_down},
                {"total", r.pretrain_up + r.pretrain_down + r.finetune_up + r.finetune_down}};
  s["frozen_checksum"] = hex64(r.frozen_checksum_after);
  return s;
}

/// Full pipeline in memory. `control` skips Phase I entirely (T = 0), so the
/// frozen backbone is the random initialization.
inline ExperimentResult simulate(ExperimentConfig cfg, bool control = false, const RunHooks& hooks = {}) {
  validate(cfg);
  if (control) cfg.rounds = 0;
  ExperimentResult r;
  r.config = cfg;
  r.control = control;
  std::size_t round = 0;
  r.shards = detail::in_phase("setup", round, [&] { return build_shards(cfg); });
  const TextEncoder text = make_text_encoder(cfg);
  const auto pcfg = pretrain_config(cfg);

  TrafficCounter pre_counter;
  PretrainHooks pre_hooks;
  pre_hooks.on_round_end = [&](std::size_t t, const HistoryPool& pool) {
    if (hooks.pretrain.on_round_end) hooks.pretrain.on_round_end(t, pool);
    round = t + 1;
  };
  round = 1;
  r.pretrained = detail::in_phase("pretrain", round, [&] { return run_pretraining(pcfg, r.shards, text, &pre_counter, pre_hooks); });
  r.pretrain_up = pre_counter.up();
  r.pretrain_down = pre_counter.down();

  // Frozen backbones and prototypes.
  round = 0;
  const auto ctx = make_contexts(r.shards, pcfg.pe_depth);
  std::vector<UploadedPrototype> uploads;
  std::vector<FrozenClient> frozen;
  detail::in_phase("prototypes", round, [&] {
    for (std::size_t k = 0; k < cfg.clients; ++k) {
      r.backbones.push_back(frozen_backbone(r.pretrained, ctx[k], k, text, pcfg));
      const auto z = graph_forward(r.backbones[k], r.shards[k].graph, ctx[k].pe).z;
      const PrototypeConfig proto_cfg{cfg.sharpness, cfg.clarity_k, derive_seed({cfg.seed, k, 0x9707ULL})};
      r.prototypes.push_back(client_prototypes(r.shards[k], z, proto_cfg));
      for (const auto& p : r.prototypes[k]) uploads.push_back({static_cast<ClientId>(k), p});
      frozen.push_back(make_frozen_client(r.shards[k], ctx[k].pe, r.backbones[k], text, cfg.summary_len));
    }
    r.tokens = aggregate_prototypes(uploads, cfg.cos_threshold);
    return 0;
  });
  r.frozen_checksum_before = detail::frozen_checksum(frozen, text);

  TrafficCounter ft_counter;
  FinetuneHooks ft_hooks;
  ft_hooks.on_round_end = [&](std::size_t t, const PromptPool& tp, const PromptPool& gp) {
    if (hooks.finetune.on_round_end) hooks.finetune.on_round_end(t, tp, gp);
    round = t + 1;
  };
  round = 1;
  r.finetuned = detail::in_phase("finetune", round, [&] {
    return run_finetuning(finetune_config(cfg), frozen, text, r.tokens, &ft_counter, ft_hooks);
  });
  r.finetune_up = ft_counter.up();
  r.finetune_down = ft_counter.down();
  r.frozen_checksum_after = detail::frozen_checksum(frozen, text);
  require(r.frozen_checksum_after == r.frozen_checksum_before, "harness", "frozen backbone changed during Phase II");
  r.summary = make_summary(r);
  return r;
}

// ---------------------------------------------------------------------------
// Artifacts

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), "harness", "cannot write " + p.string());
  out << s;
}

inline void write_artifacts(const ExperimentResult& r, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");

  std::ostringstream reports;
  for (const auto& rep : r.pretrained.reports) reports << to_json(rep).dump() << '\n';
  for (const auto& rep : r.finetuned.reports) reports << to_json(rep).dump() << '\n';
  write_text(out_dir / "reports.jsonl", reports.str());
  write_text(out_dir / "summary.json", r.summary.dump(2) + "\n");

  std::ostringstream protos;
  for (std::size_t k = 0; k < r.prototypes.size(); ++k)
    for (const auto& p : r.prototypes[k]) {
      nlohmann::ordered_json j;
      j["client"] = k;
      j["class"] = p.class_id;
      j["weight"] = p.total_weight;
      j["vec_checksum"] = hex64(checksum(Matrix(p.vec.transpose())));
      protos << j.dump() << '\n';
    }
  write_text(out_dir / "prototypes.jsonl", protos.str());

  for (std::size_t k = 0; k < r.backbones.size(); ++k)
    save_checkpoint(r.backbones[k], out_dir / "checkpoints" / ("client_" + std::to_string(k) + ".ckpt"));
  {
    std::ofstream os(out_dir / "checkpoints" / "global_structural.ckpt", std::ios::binary);
    write_matrices(os, {{"W1_s", r.pretrained.global.w1}, {"W2_s", r.pretrained.global.w2}});
  }
  {
    std::ofstream os(out_dir / "checkpoints" / "prompts.ckpt", std::ios::binary);
    std::vector<NamedMatrix> mats;
    for (std::size_t m = 0; m < r.finetuned.text_pool.size(); ++m)
      mats.push_back({"phi_T_" + std::to_string(m), r.finetuned.text_pool.prompts[m]});
    for (std::size_t m = 0; m < r.finetuned.graph_pool.size(); ++m)
      mats.push_back({"phi_G_" + std::to_string(m), r.finetuned.graph_pool.prompts[m]});
    write_matrices(os, mats);
  }
  if (r.config.save_shards)
    for (std::size_t k = 0; k < r.shards.size(); ++k)
      save_graph(r.shards[k].graph, out_dir / "shards" / ("client_" + std::to_string(k)));
}

/// Validates, runs and writes artifacts. Nothing is written when validation
/// or the run fails.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       const RunHooks& hooks = {}) {
  auto r = simulate(cfg, false, hooks);
  write_artifacts(r, out_dir);
  return r;
}

inline ExperimentResult run_control(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  auto r = simulate(cfg, true);
  write_artifacts(r, out_dir);
  return r;
}

// ---------------------------------------------------------------------------
// Complexity audit

struct AuditRow {
  ClientId client = 0;
  std::size_t nodes = 0, edges = 0;
  double flops = 0.0;  // per local epoch
  std::uint64_t pretrain_up_per_round = 0;
  std::uint64_t expected_pretrain_up = 0;
  std::uint64_t finetune_up_per_round = 0;
  std::uint64_t expected_finetune_up = 0;
};

struct AuditReport {
  std::vector<AuditRow> rows;
  std::uint64_t structural_params = 0;
  std::uint64_t pretrain_up_total = 0;
  std::uint64_t pretrain_up_total_double_m = 0;
  bool upload_matches_formula = true;
  bool constant_in_m = true;
  bool finetune_has_no_encoder_bytes = true;
};

/// Message-passing cost per epoch: L(|V|d^2 + |E|d) + |V|d^2 with L = 2.
inline double flop_estimate(std::size_t nodes, std::size_t edges, std::size_t d, std::size_t layers = 2) {
  const double v = static_cast<double>(nodes), e = static_cast<double>(edges), dd = static_cast<double>(d);
  return static_cast<double>(layers) * (v * dd * dd + e * dd) + v * dd * dd;
}

inline AuditReport complexity_audit(const ExperimentResult& r) {
  const auto& cfg = r.config;
  AuditReport a;
  const EncoderDims dims{cfg.d_pe, cfg.d_in, cfg.d};
  a.structural_params = init_structural(dims, 0).size();
  const std::uint64_t expect_pre = 4 * a.structural_params + 8;
  const std::uint64_t expect_ft = (cfg.prompt_len * cfg.d + cfg.d_in) * 4 + kSelectionMetadataBytes;
  for (std::size_t k = 0; k < r.shards.size(); ++k) {
    AuditRow row;
    row.client = static_cast<ClientId>(k);
    row.nodes = r.shards[k].graph.num_nodes();
    row.edges = r.shards[k].graph.num_edges();
    row.flops = flop_estimate(row.nodes, row.edges, cfg.d);
    row.expected_pretrain_up = expect_pre;
    row.expected_finetune_up = expect_ft;
    for (const auto& rep : r.pretrained.reports)
      if (rep.client == k) {
        row.pretrain_up_per_round = rep.bytes_up;
        a.upload_matches_formula = a.upload_matches_formula && rep.bytes_up == expect_pre;
      }
    for (const auto& rep : r.finetuned.reports)
      if (rep.client == k) {
        row.finetune_up_per_round = rep.bytes_up;
        a.finetune_has_no_encoder_bytes = a.finetune_has_no_encoder_bytes && rep.bytes_up == expect_ft;
      }
    a.rows.push_back(row);
  }
  a.pretrain_up_total = r.pretrain_up;

  // Phase I again with the prompt pool doubled.
  ExperimentConfig doubled = cfg;
  doubled.pool_size *= 2;
  TrafficCounter counter;
  const auto shards = build_shards(doubled);
  auto pcfg = pretrain_config(doubled);
  pcfg.rounds = r.control ? 0 : cfg.rounds;
  run_pretraining(pcfg, shards, make_text_encoder(doubled), &counter);
  a.pretrain_up_total_double_m = counter.up();
  a.constant_in_m = a.pretrain_up_total_double_m == a.pretrain_up_total;
  return a;
}

inline nlohmann::ordered_json to_json(const AuditReport& a) {
  nlohmann::ordered_json j;
  j["structural_params"] = a.structural_params;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : a.rows)
    rows.push_back({{"client", r.client},
                    {"nodes", r.nodes},
                    {"edges", r.edges},
                    {"flops_per_epoch", r.flops},
                    {"pretrain_up_per_round", r.pretrain_up_per_round},
                    {"expected_pretrain_up", r.expected_pretrain_up},
                    {"finetune_up_per_round", r.finetune_up_per_round},
                    {"expected_finetune_up", r.expected_finetune_up}});
  j["clients"] = rows;
  j["pretrain_up_total"] = a.pretrain_up_total;
  j["pretrain_up_total_double_m"] = a.pretrain_up_total_double_m;
  j["upload_matches_formula"] = a.upload_matches_formula;
  j["constant_in_m"] = a.constant_in_m;
  j["finetune_has_no_encoder_bytes"] = a.finetune_has_no_encoder_bytes;
  return j;
}

}  // namespace fedgala
