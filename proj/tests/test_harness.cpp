#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "riscade/dataset.hpp"
#include "riscade/harness.hpp"

using namespace riscade;

namespace {

// Small, fast configuration: 2x2 BS, 4x4 RIS grouped by 4 (width 4, D=16),
// Q=8 pilots as 4x2.
ExperimentConfig small_cfg() {
  ExperimentConfig c;
  c.bs_rows = c.bs_cols = 2;
  c.ris_rows = c.ris_cols = 4;
  c.group_size = 4;
  c.q = 8;
  c.q1 = 4;
  c.q2 = 2;
  c.users_per_region = 1;
  c.samples_per_user = 60;
  c.test_samples = 12;
  c.expert_channels = 8;
  c.classifier_channels = 4;
  c.epochs = 1;
  c.batch_size = 16;
  c.pretrain_epochs = 1;
  c.snr_grid_db = {10.0};
  c.threads = 1;
  c.seed = 5;
  return c;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("config round-trips through JSON and hashes canonically") {
  ExperimentConfig c = small_cfg();
  const std::string text = c.to_json_string();
  const ExperimentConfig back = ExperimentConfig::from_json_string(text);
  CHECK(back.to_json_string() == text);
  CHECK(back.hash() == c.hash());

  ExperimentConfig other = c;
  other.seed = 6;
  CHECK(other.hash() != c.hash());
}

TEST_CASE("config validation catches inconsistencies") {
  ExperimentConfig c = small_cfg();
  c.q1 = 3;  // 3*2 != 8
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = small_cfg();
  c.group_size = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = small_cfg();
  c.experiment = "ungrouped";  // but grouped=true
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = small_cfg();
  c.label_q = 4;  // below width*M = 16
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  CHECK_THROWS_AS(ExperimentConfig::from_json_string("{nonsense"), std::invalid_argument);
}

TEST_CASE("built dataset has the requested shape and good labels") {
  const ExperimentConfig cfg = small_cfg();
  const PilotSetup setup = build_pilot_setup(cfg);
  const BuiltDataset data = build_dataset(cfg, setup);

  REQUIRE(static_cast<int>(data.clients.size()) == cfg.regions() * cfg.users_per_region);
  const int n_train = static_cast<int>(std::lround(cfg.train_fraction * cfg.samples_per_user));
  for (const auto& c : data.clients) {
    CHECK(static_cast<int>(c.samples.size()) == n_train);
    for (const auto& s : c.samples) CHECK(s.region == c.region);
  }
  CHECK(static_cast<int>(data.validation.size()) ==
        (cfg.samples_per_user - n_train) * cfg.regions() * cfg.users_per_region);
  CHECK(static_cast<int>(data.test.size()) >= cfg.test_samples);

  // labels come from a well-conditioned LS design at 10 dB: strongly negative NMSE
  CHECK(nmse_db(data.label_nmse) < -15.0);

  // labels differ across samples (fresh noise)
  const auto& s0 = data.clients.front().samples[0].target;
  const auto& s1 = data.clients.front().samples[1].target;
  CHECK((s0 - s1).norm() > 0.0);
}

TEST_CASE("dataset build is deterministic in (config, seed)") {
  const ExperimentConfig cfg = small_cfg();
  const PilotSetup s1 = build_pilot_setup(cfg);
  const PilotSetup s2 = build_pilot_setup(cfg);
  CHECK(s1.short_configs.front().phases == s2.short_configs.front().phases);
  CHECK(s1.label_config.precoders == s2.label_config.precoders);

  const BuiltDataset a = build_dataset(cfg, s1);
  const BuiltDataset b = build_dataset(cfg, s2);
  REQUIRE(a.clients.size() == b.clients.size());
  for (std::size_t i = 0; i < a.clients.size(); ++i) {
    REQUIRE(a.clients[i].samples.size() == b.clients[i].samples.size());
    for (std::size_t j = 0; j < a.clients[i].samples.size(); ++j) {
      CHECK(a.clients[i].samples[j].tensor == b.clients[i].samples[j].tensor);
      CHECK(a.clients[i].samples[j].target == b.clients[i].samples[j].target);
    }
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test.truth[i] == b.test.truth[i]);
}

TEST_CASE("labels at infinite SNR recover the truth") {
  ExperimentConfig cfg = small_cfg();
  const PilotSetup setup = build_pilot_setup(cfg);
  const LsSolver solver(measurement_matrix(setup.label_config));
  Rng rng(3);
  Eigen::VectorXcd h(cfg.channel_dim());
  for (int i = 0; i < h.size(); ++i) h[i] = rng.cgauss();
  Rng noise(4);
  const Eigen::VectorXcd label = generate_label(h, setup.label_config, solver,
                                                std::numeric_limits<double>::infinity(), noise);
  CHECK((label - h).norm() / h.norm() < 1e-8);
}

TEST_CASE("binary dataset archive round-trips") {
  ExperimentConfig cfg = small_cfg();
  cfg.samples_per_user = 8;
  cfg.store_full = true;
  const PilotSetup setup = build_pilot_setup(cfg);
  const std::string path = tmp_path("riscade_test_archive.bin");
  write_dataset_archive(path, cfg, setup);

  const DatasetArchive a = read_dataset_archive(path);
  CHECK(a.config_hash == cfg.hash());
  CHECK(a.seed == cfg.seed);
  CHECK(a.grouped);
  CHECK(a.store_full);
  REQUIRE(static_cast<int>(a.records.size()) ==
          cfg.regions() * cfg.users_per_region * cfg.samples_per_user);
  CHECK(a.has_pilots);
  CHECK(a.pilots.phases == setup.short_configs.front().phases);

  // records reproduce the generator output, including the full matrices
  std::vector<ChannelRealization> regen;
  const GroupingOperator grouping = *setup.grouping;
  generate_realizations(cfg.channel_config(), &grouping, 1, 1, 0, cfg.samples_per_user, cfg.seed,
                        regen);
  for (int i = 0; i < cfg.samples_per_user; ++i) {
    const auto& rec = a.records[static_cast<std::size_t>(i)];
    CHECK(rec.region == 1);
    CHECK(rec.index == static_cast<std::uint64_t>(i));
    const Eigen::VectorXcd expect =
        Eigen::Map<const Eigen::VectorXcd>(regen[i].grouped.data(), regen[i].grouped.size());
    CHECK(rec.target == expect);
    CHECK(rec.bs_ris == regen[i].bs_ris);
    CHECK(rec.cascaded == regen[i].cascaded);
  }
  std::filesystem::remove(path);
}

TEST_CASE("csv dataset archive round-trips targets") {
  ExperimentConfig cfg = small_cfg();
  cfg.samples_per_user = 5;
  cfg.archive_format = "csv";
  const PilotSetup setup = build_pilot_setup(cfg);
  const std::string path = tmp_path("riscade_test_archive.csv");
  write_dataset_archive(path, cfg, setup);
  const DatasetArchive a = read_dataset_archive(path);
  REQUIRE(static_cast<int>(a.records.size()) == cfg.regions() * cfg.samples_per_user);

  std::vector<ChannelRealization> regen;
  const GroupingOperator grouping = *setup.grouping;
  generate_realizations(cfg.channel_config(), &grouping, 1, 1, 0, cfg.samples_per_user, cfg.seed,
                        regen);
  const Eigen::VectorXcd expect =
      Eigen::Map<const Eigen::VectorXcd>(regen[0].grouped.data(), regen[0].grouped.size());
  CHECK((a.records[0].target - expect).norm() < 1e-12 * expect.norm());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoints round-trip and reject config-hash mismatches") {
  ModelShape shape;
  shape.q1 = 2;
  shape.q2 = 2;
  shape.regions = 2;
  shape.d = 4;
  shape.expert_channels = 4;
  shape.classifier_channels = 3;
  ModelParams model = init_model(shape, 7);
  const std::string path = tmp_path("riscade_test.ckpt");
  save_checkpoint(path, model, 12345);

  const ModelParams back = load_checkpoint(path, 12345);
  CHECK(flatten_all(back) == flatten_all(model));
  CHECK(back.shape == shape);
  CHECK_THROWS_AS(load_checkpoint(path, 999), std::invalid_argument);
  CHECK(flatten_all(load_checkpoint(path, 0)) == flatten_all(model));  // unchecked load
  std::filesystem::remove(path);
}

TEST_CASE("run_eval emits one row per sample, method and snr point") {
  ExperimentConfig cfg = small_cfg();
  cfg.test_samples = 10;
  cfg.samples_per_user = 20;
  const PilotSetup setup = build_pilot_setup(cfg);
  const BuiltDataset data = build_dataset(cfg, setup);
  const ModelParams model = init_model(cfg.model_shape(), cfg.seed);

  EvalContext ctx;
  ctx.cfg = &cfg;
  ctx.setup = &setup;
  ctx.pooled_cov = &data.pooled_cov;
  ctx.region_covs = &data.region_covs;
  const auto rows = run_eval(model, data.test, ctx);
  // methods: nn, ls@Q, mmse@Q, ls@label, mmse@label = 5 per sample per snr
  CHECK(rows.size() == data.test.size() * 5 * cfg.snr_grid_db.size());

  // re-running yields identical results (reproducible from config+seed)
  const auto rows2 = run_eval(model, data.test, ctx);
  REQUIRE(rows.size() == rows2.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].method == rows2[i].method);
    CHECK(rows[i].nmse_ratio == rows2[i].nmse_ratio);
  }
}

TEST_CASE("identity-estimator rows match the label-generation oracle") {
  ExperimentConfig cfg = small_cfg();
  cfg.test_samples = 60;
  cfg.samples_per_user = 20;
  cfg.snr_grid_db = {10.0};
  const PilotSetup setup = build_pilot_setup(cfg);
  const BuiltDataset data = build_dataset(cfg, setup);
  const ModelParams model = init_model(cfg.model_shape(), cfg.seed);

  EvalContext ctx;
  ctx.cfg = &cfg;
  ctx.setup = &setup;
  ctx.pooled_cov = &data.pooled_cov;
  ctx.region_covs = &data.region_covs;
  ctx.include_nn = false;
  ctx.include_label_oracle = true;
  const auto rows = run_eval(model, data.test, ctx);

  // analytic LS noise law on the label design
  const Eigen::MatrixXcd psi = measurement_matrix(setup.label_config);
  const double trace = (psi.adjoint() * psi).inverse().real().trace();
  double mean_h2 = 0.0;
  for (const auto& h : data.test.truth) mean_h2 += h.squaredNorm();
  mean_h2 /= static_cast<double>(data.test.size());
  const double sigma2 = std::pow(10.0, -cfg.label_snr_db / 10.0);
  const double expect = sigma2 * trace / mean_h2;

  double got = 0.0;
  long n = 0;
  for (const auto& r : rows)
    if (r.method == "label") {
      got += r.nmse_ratio;
      ++n;
    }
  REQUIRE(n == static_cast<long>(data.test.size()));
  got /= static_cast<double>(n);
  CHECK(got == doctest::Approx(expect).epsilon(0.35));  // 60 noisy samples
}

TEST_CASE("csv writers produce the fixed schema and identical bytes across runs") {
  std::vector<ResultRow> rows;
  ResultRow r;
  r.method = "nn";
  r.q = 8;
  r.grouped = true;
  r.snr_db = 10.0;
  r.nmse_ratio = 0.05;
  r.nmse_db = nmse_db(0.05);
  r.n = 1;
  r.seed = 5;
  r.region = 1;
  rows.push_back(r);
  r.method = "ls";
  r.nmse_ratio = 1.2;
  r.nmse_db = nmse_db(1.2);
  rows.push_back(r);

  const std::string p1 = tmp_path("riscade_rows1.csv"), p2 = tmp_path("riscade_rows2.csv");
  write_result_csv(p1, rows);
  write_result_csv(p2, rows);
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.rfind("method,Q,grouped,snr_db,nmse_db,n,seed\n", 0) == 0);
  CHECK(s1.find("nn,8,1,10.0000,-13.0103,1,5") != std::string::npos);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("aggregate_rows averages the ratio, not the dB") {
  std::vector<ResultRow> rows;
  for (double ratio : {0.01, 1.0}) {
    ResultRow r;
    r.method = "nn";
    r.q = 8;
    r.grouped = false;
    r.snr_db = 0.0;
    r.nmse_ratio = ratio;
    r.nmse_db = nmse_db(ratio);
    r.n = 1;
    rows.push_back(r);
  }
  const auto agg = aggregate_rows(rows, false);
  REQUIRE(agg.size() == 1);
  CHECK(agg[0].n == 2);
  CHECK(agg[0].nmse_ratio == doctest::Approx(0.505));
  CHECK(agg[0].nmse_db == doctest::Approx(10.0 * std::log10(0.505)));
}

TEST_CASE("complexity report matches the instrumented counter on the real shape") {
  ExperimentConfig cfg;  // table-scale defaults
  const auto rows = complexity_report(cfg.model_shape());
  unsigned long long total = 0;
  for (const auto& r : rows)
    if (r.module != "total") total += r.macs;
  CHECK(total == rows.back().macs);
  CHECK(rows.back().macs == mac_count(cfg.model_shape()).total);
}

TEST_CASE("baseline-only experiment emits classical rows and no training artifacts") {
  ExperimentConfig cfg = small_cfg();
  cfg.experiment = "baseline-only";
  cfg.test_samples = 6;
  cfg.samples_per_user = 12;
  cfg.write_dataset = false;
  const std::string dir = tmp_path("riscade_baseline_out");
  const ExperimentResult res = run_experiment(cfg, dir);
  CHECK(!res.rows.empty());
  for (const auto& r : res.rows) CHECK(r.method != "nn");
  CHECK(std::filesystem::exists(dir + "/results.csv"));
  CHECK(std::filesystem::exists(dir + "/complexity.csv"));
  CHECK(!std::filesystem::exists(dir + "/model.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("end-to-end tiny experiment produces a self-describing artifact directory") {
  ExperimentConfig cfg = small_cfg();
  cfg.experiment = "grouped-dml";
  cfg.epochs = 2;
  cfg.write_dataset = true;
  const std::string dir = tmp_path("riscade_e2e_out");
  const ExperimentResult res = run_experiment(cfg, dir);
  CHECK(std::filesystem::exists(dir + "/config.json"));
  CHECK(std::filesystem::exists(dir + "/dataset.bin"));
  CHECK(std::filesystem::exists(dir + "/gate_pretrained.ckpt"));
  CHECK(std::filesystem::exists(dir + "/model.ckpt"));
  CHECK(std::filesystem::exists(dir + "/train_log.csv"));
  CHECK(std::filesystem::exists(dir + "/results.csv"));
  CHECK(std::filesystem::exists(dir + "/summary.csv"));
  CHECK(std::filesystem::exists(dir + "/per_region_summary.csv"));
  CHECK(std::filesystem::exists(dir + "/manifest.json"));

  // lineage: checkpoint loads against the config hash; model hash matches
  const ModelParams model = load_checkpoint(dir + "/model.ckpt", cfg.hash());
  CHECK(checkpoint_hash(model) == res.model_hash);

  // the dataset archive carries the same config hash
  const DatasetArchive a = read_dataset_archive(dir + "/dataset.bin");
  CHECK(a.config_hash == cfg.hash());
  std::filesystem::remove_all(dir);
}
