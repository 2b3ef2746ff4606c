#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "riscade/dataset.hpp"
#include "riscade/harness.hpp"

using namespace riscade;

namespace {

ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                             bool have_seed) {
  ExperimentConfig cfg =
      path.empty() ? ExperimentConfig{} : ExperimentConfig::from_json_file(path);
  if (have_seed) cfg.seed = seed_override;
  cfg.validate();
  return cfg;
}

void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

void print_aggregates(const std::vector<ResultRow>& aggregates) {
  for (const auto& row : aggregates) {
    std::printf("  %-6s Q=%-5d snr=%6.1f dB  nmse=%8.3f dB  (n=%ld)\n", row.method.c_str(), row.q,
                row.snr_db, row.nmse_db, row.n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"riscade: cascaded BS-RIS-user channel estimation testbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed_override = 0;
  app.add_option("-c,--config", config_path, "JSON config file (defaults used when omitted)");
  app.add_option("-o,--out-dir", out_dir, "output directory");
  auto* seed_opt = app.add_option("-s,--seed", seed_override, "seed override");

  auto* gen = app.add_subcommand("generate", "generate and archive a channel dataset");
  auto* pre = app.add_subcommand("pretrain-gate", "pretrain the region classifier");
  auto* train = app.add_subcommand("train", "two-stage training (classifier, then FedAvg)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over the SNR grid");
  auto* baseline = app.add_subcommand("baseline", "LS/MMSE baselines only, no training");
  auto* complexity = app.add_subcommand("complexity", "per-module MAC accounting");
  auto* experiment = app.add_subcommand("experiment", "run the configured regime end to end");
  (void)experiment;

  std::string checkpoint_path;
  eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  bool unchecked_hash = false;
  eval->add_flag("--ignore-config-hash", unchecked_hash,
                 "skip the checkpoint/config hash consistency check");

  CLI11_PARSE(app, argc, argv);
  const bool have_seed = seed_opt->count() > 0;

  try {
    ExperimentConfig cfg = load_config(config_path, seed_override, have_seed);

    if (gen->parsed()) {
      ensure_dir(out_dir);
      const PilotSetup setup = build_pilot_setup(cfg);
      const std::string ext = cfg.archive_format == "binary" ? ".bin" : ".csv";
      const std::string path = out_dir + "/dataset" + ext;
      write_dataset_archive(path, cfg, setup);
      std::ofstream(out_dir + "/config.json") << cfg.to_json_string() << "\n";
      std::cout << "dataset written to " << path << " (config hash " << cfg.hash() << ")\n";
      return 0;
    }

    if (pre->parsed()) {
      ensure_dir(out_dir);
      const PilotSetup setup = build_pilot_setup(cfg);
      BuiltDataset data = build_dataset(cfg, setup);
      ModelParams model = init_model(cfg.model_shape(), cfg.seed);
      const double acc =
          pretrain_classifier(data.clients, cfg.pretrain_epochs, cfg.batch_size, cfg.pretrain_lr,
                              1.0 - cfg.train_fraction, cfg.seed, model);
      save_checkpoint(out_dir + "/gate_pretrained.ckpt", model, cfg.hash());
      std::cout << "classifier held-out accuracy: " << acc << "\n";
      std::cout << "checkpoint written to " << out_dir << "/gate_pretrained.ckpt\n";
      return 0;
    }

    if (train->parsed() || experiment->parsed() || baseline->parsed()) {
      if (baseline->parsed()) cfg.experiment = "baseline-only";
      if (train->parsed() && cfg.experiment == "baseline-only")
        throw std::invalid_argument(
            "train: config requests baseline-only; use the baseline subcommand");
      const ExperimentResult res = run_experiment(cfg, out_dir);
      if (cfg.experiment != "baseline-only") {
        std::cout << "classifier held-out accuracy: " << res.pretrain_accuracy << "\n";
        std::cout << "label NMSE: " << res.label_nmse_db << " dB\n";
        std::cout << "model hash: " << res.model_hash << "\n";
      }
      std::cout << "artifacts in " << res.out_dir << "\n";
      print_aggregates(res.aggregates);
      return 0;
    }

    if (eval->parsed()) {
      ensure_dir(out_dir);
      const PilotSetup setup = build_pilot_setup(cfg);
      BuiltDataset data = build_dataset(cfg, setup);
      ModelParams model = load_checkpoint(checkpoint_path, unchecked_hash ? 0 : cfg.hash());
      EvalContext ctx;
      ctx.cfg = &cfg;
      ctx.setup = &setup;
      ctx.pooled_cov = &data.pooled_cov;
      ctx.region_covs = &data.region_covs;
      const auto rows = run_eval(model, data.test, ctx);
      write_result_csv(out_dir + "/results.csv", rows);
      write_result_csv(out_dir + "/summary.csv", aggregate_rows(rows, false));
      write_region_csv(out_dir + "/per_region_summary.csv", aggregate_rows(rows, true));
      std::cout << "results written to " << out_dir << "\n";
      print_aggregates(aggregate_rows(rows, false));
      return 0;
    }

    if (complexity->parsed()) {
      ensure_dir(out_dir);
      const auto rows = complexity_report(cfg.model_shape());
      write_complexity_csv(out_dir + "/complexity.csv", rows);
      for (const auto& r : rows)
        std::printf("  %-10s %-15s %12llu MACs\n", r.module.c_str(), r.term.c_str(), r.macs);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
