// fedgala_cli run --config <path> [--control] [--audit] --out <dir>

#include <iostream>

#include <CLI11.hpp>

#include "fedgala/fedgala.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated graph-text pre-training and prompt tuning simulator"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "run one experiment");
  std::string config_path, out_dir;
  bool control = false, audit = false;
  run->add_option("--config", config_path, "flat key=value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory")->required();
  run->add_flag("--control", control, "skip pre-training; tune prompts on a random-init backbone");
  run->add_flag("--audit", audit, "also write audit.json (FLOP estimate and byte counts)");
  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = fedgala::load_config(config_path);
    fedgala::apply_env_overrides(cfg);
    const auto result = control ? fedgala::run_control(cfg, out_dir) : fedgala::run_experiment(cfg, out_dir);
    if (audit) {
      const auto a = fedgala::complexity_audit(result);
      fedgala::write_text(std::filesystem::path(out_dir) / "audit.json", fedgala::to_json(a).dump(2) + "\n");
      if (!a.upload_matches_formula || !a.constant_in_m || !a.finetune_has_no_encoder_bytes) {
        std::cerr << "audit: byte counts disagree with the expected formulas\n";
        return 3;
      }
    }
    std::cout << result.summary.dump(2) << "\n";
  } catch (const fedgala::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
