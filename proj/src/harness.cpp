#include "riscade/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace riscade {

namespace {

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

void write_rows(std::ofstream& out, const std::vector<ResultRow>& rows, bool with_region) {
  out << "method,Q,grouped," << (with_region ? "region," : "") << "snr_db,nmse_db,n,seed\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.method << ',' << r.q << ',' << (r.grouped ? 1 : 0) << ',';
    if (with_region) out << r.region << ',';
    std::snprintf(buf, sizeof(buf), "%.4f", r.snr_db);
    out << buf << ',';
    std::snprintf(buf, sizeof(buf), "%.4f", r.nmse_db);
    out << buf << ',' << r.n << ',' << r.seed << "\n";
  }
}

}  // namespace

void write_result_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_rows(out, rows, false);
  if (!out) throw std::runtime_error("write failure on " + path);
}

void write_region_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_rows(out, rows, true);
  if (!out) throw std::runtime_error("write failure on " + path);
}

std::vector<ResultRow> aggregate_rows(const std::vector<ResultRow>& rows, bool by_region) {
  struct Key {
    std::string method;
    int q;
    bool grouped;
    long long snr_milli;
    int region;
    bool operator<(const Key& o) const {
      return std::tie(method, q, grouped, snr_milli, region) <
             std::tie(o.method, o.q, o.grouped, o.snr_milli, o.region);
    }
  };
  std::map<Key, std::pair<double, long>> acc;
  std::uint64_t seed = rows.empty() ? 0 : rows.front().seed;
  for (const auto& r : rows) {
    Key k{r.method, r.q, r.grouped, static_cast<long long>(std::llround(r.snr_db * 1000)),
          by_region ? r.region : 0};
    auto& slot = acc[k];
    slot.first += r.nmse_ratio * r.n;
    slot.second += r.n;
  }
  std::vector<ResultRow> out;
  out.reserve(acc.size());
  for (const auto& [k, v] : acc) {
    ResultRow r;
    r.method = k.method;
    r.q = k.q;
    r.grouped = k.grouped;
    r.snr_db = static_cast<double>(k.snr_milli) / 1000.0;
    r.region = k.region;
    r.n = v.second;
    r.nmse_ratio = v.first / static_cast<double>(v.second);
    r.nmse_db = nmse_db(r.nmse_ratio);
    r.seed = seed;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

std::vector<ResultRow> run_eval(const ModelParams& model, const TestSet& test,
                                const EvalContext& ctx) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const PilotSetup& setup = *ctx.setup;
  cfg.validate();
  if (test.size() == 0) return {};
  const bool per_sample_w =
      cfg.schedule() == PrecoderSchedule::kFixed && cfg.precoder_mode == "per_sample";

  const Rng root(cfg.seed);
  const int users = cfg.users_per_region;
  std::vector<ResultRow> rows;
  const Gating gating = cfg.gating_eval_mode();

  // short-design solvers (per distinct config)
  std::vector<Eigen::MatrixXcd> short_psi(setup.short_configs.size());
  std::vector<LsSolver> short_ls;
  short_ls.reserve(setup.short_configs.size());
  for (std::size_t i = 0; i < setup.short_configs.size(); ++i) {
    short_psi[i] = measurement_matrix(setup.short_configs[i]);
    short_ls.emplace_back(short_psi[i]);
  }
  const Eigen::MatrixXcd label_psi = measurement_matrix(setup.label_config);
  const LsSolver long_ls(label_psi);

  auto config_index = [&](int region, int user) -> std::size_t {
    if (!setup.per_user) return 0;
    return static_cast<std::size_t>(region - 1) * users + (user - 1);
  };
  auto region_cov = [&](int region) -> const CovarianceModel& {
    if (ctx.region_covs != nullptr && !ctx.region_covs->empty())
      return (*ctx.region_covs)[static_cast<std::size_t>(region - 1)];
    return *ctx.pooled_cov;
  };

  auto push = [&](const std::string& method, int q, double snr_db, int region, double ratio) {
    ResultRow r;
    r.method = method;
    r.q = q;
    r.grouped = cfg.grouped;
    r.snr_db = snr_db;
    r.nmse_ratio = ratio;
    r.nmse_db = nmse_db(ratio);
    r.n = 1;
    r.seed = cfg.seed;
    r.region = region;
    rows.push_back(std::move(r));
  };

  for (std::size_t si = 0; si < cfg.snr_grid_db.size(); ++si) {
    const double snr_db_point = cfg.snr_grid_db[si];
    const double snr = db_to_linear(snr_db_point);
    const double sigma2 = 1.0 / snr;

    // MMSE gains for this noise level
    std::vector<MmseSolver> short_mmse;
    if (!per_sample_w) {
      short_mmse.reserve(setup.short_configs.size());
      for (std::size_t i = 0; i < setup.short_configs.size(); ++i) {
        // per-user configs belong to region (i / users) + 1
        const int region = setup.per_user ? static_cast<int>(i) / users + 1 : 1;
        short_mmse.emplace_back(short_psi[i], region_cov(region), sigma2);
      }
    }
    std::vector<MmseSolver> long_mmse;
    if (ctx.region_covs != nullptr && !ctx.region_covs->empty()) {
      for (int r = 1; r <= cfg.regions(); ++r)
        long_mmse.emplace_back(label_psi, region_cov(r), sigma2);
    } else {
      long_mmse.emplace_back(label_psi, *ctx.pooled_cov, sigma2);
    }

    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < test.size(); start += kChunk) {
      const std::size_t count = std::min(kChunk, test.size() - start);
      Batch3 in;
      in.resize(static_cast<int>(count), cfg.q1, cfg.q2, 2);
      std::vector<Eigen::VectorXcd> raws(count);

      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t idx = start + j;
        const int region = test.region[idx];
        const int user = test.user[idx];
        Rng obs_rng = root.split(kTagEvalNoise, si, idx);
        const PilotConfig& pc = setup.short_configs[config_index(region, user)];
        if (per_sample_w) {
          PilotConfig local = pc;
          Rng w_rng = root.split(kTagEvalNoise, si, idx, 1);
          local.precoders.rowwise() =
              random_unit_precoder(cfg.bs_antennas(), w_rng).transpose();
          raws[j] = observe_vec(test.truth[idx], local, snr, obs_rng);
        } else {
          raws[j] = observe_vec(test.truth[idx], pc, snr, obs_rng);
        }
        const double scale =
            pc.normalize_by_sqrt_q ? 1.0 / std::sqrt(static_cast<double>(cfg.q)) : 1.0;
        in.set_sample(static_cast<int>(j), encode_tensor(raws[j] * scale, cfg.q1, cfg.q2));
      }

      if (ctx.include_nn) {
        const auto res =
            estimator_forward_batch(model, in, gating, Mode::kEval, Mode::kEval, nullptr, nullptr);
        for (std::size_t j = 0; j < count; ++j) {
          const std::size_t idx = start + j;
          push("nn", cfg.q, snr_db_point, test.region[idx],
               nmse(unpack_complex(res.outputs.row(static_cast<Eigen::Index>(j))),
                    test.truth[idx]));
        }
      }

      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t idx = start + j;
        const int region = test.region[idx];
        const int user = test.user[idx];
        const std::size_t ci = config_index(region, user);

        if (per_sample_w) {
          // fresh design per sample: factorize on the fly (LS only)
          PilotConfig local = setup.short_configs[ci];
          Rng w_rng = root.split(kTagEvalNoise, si, idx, 1);
          local.precoders.rowwise() =
              random_unit_precoder(cfg.bs_antennas(), w_rng).transpose();
          push("ls", cfg.q, snr_db_point, region,
               nmse(ls_estimate(raws[j], measurement_matrix(local)), test.truth[idx]));
        } else {
          push("ls", cfg.q, snr_db_point, region,
               nmse(short_ls[ci].solve(raws[j]), test.truth[idx]));
          push("mmse", cfg.q, snr_db_point, region,
               nmse(short_mmse[ci].solve(raws[j]), test.truth[idx]));
        }

        // long-pilot baselines at the label budget
        Rng long_rng = root.split(kTagEvalNoise, si, idx, 2);
        const Eigen::VectorXcd y_long =
            observe_vec(test.truth[idx], setup.label_config, snr, long_rng);
        push("ls", setup.label_config.q(), snr_db_point, region,
             nmse(long_ls.solve(y_long), test.truth[idx]));
        const MmseSolver& mm =
            long_mmse[long_mmse.size() == 1 ? 0 : static_cast<std::size_t>(region - 1)];
        push("mmse", setup.label_config.q(), snr_db_point, region,
             nmse(mm.solve(y_long), test.truth[idx]));
      }
    }
  }

  if (ctx.include_label_oracle) {
    const double snr = db_to_linear(cfg.label_snr_db);
    for (std::size_t idx = 0; idx < test.size(); ++idx) {
      Rng rng = root.split(kTagEvalNoise, idx, std::size_t{3});
      const Eigen::VectorXcd label =
          generate_label(test.truth[idx], setup.label_config, long_ls, snr, rng);
      push("label", setup.label_config.q(), cfg.label_snr_db, test.region[idx],
           nmse(label, test.truth[idx]));
    }
  }

  return rows;
}

// ---------------------------------------------------------------------------
// complexity

std::vector<ComplexityRow> complexity_report(const ModelShape& shape) {
  const MacBreakdown b = mac_count(shape);
  return {
      {"classifier", "conv", b.classifier_conv},
      {"classifier", "dense", b.classifier_dense},
      {"expert", "conv", b.expert_conv},
      {"mapper", "pointwise_conv", b.mapper_pointwise},
      {"mapper", "dense", b.mapper_dense},
      {"total", "all", b.total},
  };
}

void write_complexity_csv(const std::string& path, const std::vector<ComplexityRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "module,term,macs\n";
  for (const auto& r : rows) out << r.module << ',' << r.term << ',' << r.macs << "\n";
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kCkptMagic[8] = {'R', 'I', 'S', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, const ModelParams& model, std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kCkptMagic, 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&config_hash), 8);
  const std::int32_t dims[6] = {model.shape.q1, model.shape.q2, model.shape.regions,
                                model.shape.d, model.shape.expert_channels,
                                model.shape.classifier_channels};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const std::vector<double> flat = flatten_all(model);
  const std::uint64_t count = flat.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(8 * count));
  if (!out) throw std::runtime_error("checkpoint write failure: " + path);
}

ModelParams load_checkpoint(const std::string& path, std::uint64_t expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  std::uint64_t hash = 0;
  in.read(reinterpret_cast<char*>(&hash), 8);
  if (expected_hash != 0 && hash != expected_hash)
    throw std::invalid_argument("checkpoint config-hash mismatch");
  std::int32_t dims[6];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  ModelShape shape;
  shape.q1 = dims[0];
  shape.q2 = dims[1];
  shape.regions = dims[2];
  shape.d = dims[3];
  shape.expert_channels = dims[4];
  shape.classifier_channels = dims[5];
  ModelParams model = zero_model(shape);
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  std::vector<double> flat(count);
  in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(8 * count));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  assign_all(model, flat);
  return model;
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "round,epoch,lr,mean_client_loss,val_nmse_db,classifier_accuracy\n";
  out.precision(10);
  for (const auto& r : log.rows) {
    out << r.round << ',' << r.epoch << ',' << r.lr << ',' << r.mean_client_loss << ','
        << r.val_nmse_db << ',' << r.classifier_accuracy << "\n";
  }
}

// ---------------------------------------------------------------------------
// experiment orchestration

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  ExperimentResult result;
  result.out_dir = out_dir;

  {
    std::ofstream cfg_out(out_dir + "/config.json");
    cfg_out << cfg.to_json_string() << "\n";
  }

  const PilotSetup setup = build_pilot_setup(cfg);
  BuiltDataset data = build_dataset(cfg, setup);
  result.label_nmse_db = nmse_db(data.label_nmse);
  if (cfg.write_dataset) {
    const std::string ext = cfg.archive_format == "binary" ? ".bin" : ".csv";
    write_dataset_archive(out_dir + "/dataset" + ext, cfg, setup);
  }

  ModelParams model = init_model(cfg.model_shape(), cfg.seed);
  const bool train = cfg.experiment != "baseline-only";

  if (train) {
    result.pretrain_accuracy =
        pretrain_classifier(data.clients, cfg.pretrain_epochs, cfg.batch_size, cfg.pretrain_lr,
                            1.0 - cfg.train_fraction, cfg.seed, model);
    save_checkpoint(out_dir + "/gate_pretrained.ckpt", model, cfg.hash());

    std::vector<ClientDataset> subset;
    if (cfg.experiment == "single-region") {
      for (auto& c : data.clients)
        if (c.region == 1) subset.push_back(std::move(c));
    } else {
      subset = std::move(data.clients);
    }

    FedConfig fed;
    fed.epochs = cfg.epochs;
    fed.batch_size = cfg.batch_size;
    fed.base_lr = cfg.lr;
    fed.lr_halve_every_epochs = cfg.lr_halve_every_epochs;
    fed.server_opt =
        cfg.server_optimizer == "adam" ? ServerOptimizer::kAdam : ServerOptimizer::kSgd;
    fed.gating = cfg.gating_train_mode();
    fed.local_steps = cfg.local_steps;
    fed.threads = cfg.effective_threads();
    fed.seed = cfg.seed;
    result.train_log = train_federated(subset, fed, model, &data.validation);
    write_train_log_csv(out_dir + "/train_log.csv", result.train_log);
    save_checkpoint(out_dir + "/model.ckpt", model, cfg.hash());
  }

  EvalContext ctx;
  ctx.cfg = &cfg;
  ctx.setup = &setup;
  ctx.pooled_cov = &data.pooled_cov;
  ctx.region_covs = &data.region_covs;
  ctx.include_nn = train;
  result.rows = run_eval(model, data.test, ctx);
  result.aggregates = aggregate_rows(result.rows, false);
  result.per_region = aggregate_rows(result.rows, true);
  result.model_hash = checkpoint_hash(model);

  write_result_csv(out_dir + "/results.csv", result.rows);
  write_result_csv(out_dir + "/summary.csv", result.aggregates);
  write_region_csv(out_dir + "/per_region_summary.csv", result.per_region);
  write_complexity_csv(out_dir + "/complexity.csv", complexity_report(cfg.model_shape()));

  {
    std::ofstream manifest(out_dir + "/manifest.json");
    manifest << "{\n";
    manifest << "  \"config_hash\": " << cfg.hash() << ",\n";
    manifest << "  \"model_hash\": " << result.model_hash << ",\n";
    manifest << "  \"pretrain_accuracy\": " << result.pretrain_accuracy << ",\n";
    manifest << "  \"label_nmse_db\": " << result.label_nmse_db << ",\n";
    manifest << "  \"experiment\": \"" << cfg.experiment << "\",\n";
    manifest << "  \"seed\": " << cfg.seed << "\n";
    manifest << "}\n";
  }

  return result;
}

}  // namespace riscade
