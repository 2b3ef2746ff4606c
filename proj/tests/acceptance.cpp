// Acceptance suite: one criterion per numbered case, each printing a
// single [PASS]/[FAIL] line. Run with a list of criterion numbers, or
// "ci" for the continuous set (everything but the full-scale 7, which is
// a long job intended for nightly/manual runs).

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "riscade/dataset.hpp"
#include "riscade/harness.hpp"

using namespace riscade;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

// Table-scale grouped geometry: 8x8 RIS grouped by 4 against a 4x4 BS.
ExperimentConfig table_grouped() {
  ExperimentConfig c;  // defaults are the table configuration
  return c;
}

Eigen::VectorXcd grouped_truth(const ExperimentConfig& cfg, int region, int user, int index,
                               std::uint64_t seed) {
  const GroupingOperator grouping = make_grouping(cfg.ris_geometry(), cfg.group_size);
  std::vector<ChannelRealization> out;
  generate_realizations(cfg.channel_config(), &grouping, region, user, index, 1, seed, out);
  const auto& h = out.front().grouped;
  return Eigen::Map<const Eigen::VectorXcd>(h.data(), h.size());
}

// --- criterion 1: LS exactness on the grouped Q = N'M budget ---------------

void criterion_1() {
  const ExperimentConfig cfg = table_grouped();
  double worst = 0.0;
  bool pass = true;
  for (int seed = 1; seed <= 100; ++seed) {
    Rng design_rng = Rng(seed).split(kTagLabelDesign);
    const PilotConfig design =
        make_pilot_config(cfg.channel_dim(), cfg.channel_dim(), 1, cfg.width(), cfg.bs_antennas(),
                          PilotAlphabet::kPm1, PrecoderSchedule::kOrthogonalBlocks, false,
                          std::nullopt, design_rng);
    const Eigen::VectorXcd h = grouped_truth(cfg, 1 + seed % 3, 1, seed, seed);
    Rng none(0);
    const Eigen::VectorXcd y =
        observe_vec(h, design, std::numeric_limits<double>::infinity(), none);
    const Eigen::VectorXcd est = ls_estimate(y, measurement_matrix(design));
    const double rel = (est - h).norm() / h.norm();
    worst = std::max(worst, rel);
    if (rel > 1e-8) pass = false;
  }
  report(1, pass, "LS exact recovery, grouped Q=256, 100 seeds",
         fmt("worst relative error %.3e, tolerance 1e-8", worst));
}

// --- criterion 2: LS noise law ---------------------------------------------

void criterion_2() {
  const ExperimentConfig cfg = table_grouped();
  Rng design_rng = Rng(2024).split(kTagLabelDesign);
  const PilotConfig design =
      make_pilot_config(cfg.channel_dim(), cfg.channel_dim(), 1, cfg.width(), cfg.bs_antennas(),
                        PilotAlphabet::kPm1, PrecoderSchedule::kOrthogonalBlocks, false,
                        std::nullopt, design_rng);
  const Eigen::MatrixXcd psi = measurement_matrix(design);
  const LsSolver solver(psi);
  const double trace = (psi.adjoint() * psi).inverse().real().trace();
  const double sigma2 = db_to_linear(-10.0);  // SNR 10 dB

  const int trials = 10000;
  const GroupingOperator grouping = make_grouping(cfg.ris_geometry(), cfg.group_size);
  const ChannelConfig ch = cfg.channel_config();
  double err_energy = 0.0, chan_energy = 0.0;
  const Rng root(777);
  for (int t = 0; t < trials; ++t) {
    std::vector<ChannelRealization> cr;
    generate_realizations(ch, &grouping, 1 + t % 3, 1, t, 1, 777, cr);
    const Eigen::VectorXcd h =
        Eigen::Map<const Eigen::VectorXcd>(cr[0].grouped.data(), cr[0].grouped.size());
    Rng noise = root.split(kTagEvalNoise, t);
    const Eigen::VectorXcd y = observe_vec(h, design, 1.0 / sigma2, noise);
    err_energy += (solver.solve(y) - h).squaredNorm();
    chan_energy += h.squaredNorm();
  }
  const double empirical = err_energy / chan_energy;      // mean error power over mean channel power
  const double oracle = sigma2 * trace * trials / chan_energy;  // sigma^2 tr(G^-1) / mean ||h||^2
  const double rel_dev = std::abs(empirical - oracle) / oracle;
  report(2, rel_dev <= 0.10, "LS noise law vs analytic trace oracle, 1e4 trials",
         fmt("empirical %.5f vs oracle %.5f, deviation %.1f%%", empirical, oracle,
             100.0 * rel_dev));
}

// --- criterion 3: gradient oracle on the tiny model ------------------------

struct FdOutcome {
  std::size_t checked = 0, failed = 0;
  double worst_rel = 0.0;
};

bool grads_agree(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < 1e-8) return std::abs(a - b) < 1e-8;
  return std::abs(a - b) / scale <= 1e-4;
}

template <typename LossFn>
FdOutcome fd_check(ModelParams& model, const std::vector<double>& analytic, LossFn&& loss) {
  FdOutcome out;
  std::vector<double> flat = flatten_trainable(model);
  const double step = 1e-4;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + step;
    assign_trainable(model, flat);
    const double lp = loss(model);
    flat[i] = keep - step;
    assign_trainable(model, flat);
    const double lm = loss(model);
    flat[i] = keep;
    const double numeric = (lp - lm) / (2 * step);
    ++out.checked;
    if (!grads_agree(analytic[i], numeric)) {
      ++out.failed;
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-300});
      out.worst_rel = std::max(out.worst_rel, std::abs(analytic[i] - numeric) / scale);
    }
  }
  assign_trainable(model, flat);
  return out;
}

void criterion_3() {
  ModelShape shape;
  shape.q1 = 2;
  shape.q2 = 2;
  shape.regions = 2;
  shape.d = 4;
  shape.expert_channels = 4;
  shape.classifier_channels = 3;

  Rng rng(11);
  Batch3 in;
  in.resize(3, shape.q1, shape.q2, 2);
  for (Eigen::Index i = 0; i < in.m.size(); ++i) in.m.data()[i] = rng.normal();
  RowMat targets(3, 2 * shape.d);
  for (Eigen::Index i = 0; i < targets.size(); ++i) targets.data()[i] = rng.normal() + 0.1;
  const std::vector<int> labels = {1, 2, 1};

  std::size_t total = 0, failed = 0;
  for (Gating gating : {Gating::kHard, Gating::kSoft}) {
    ModelParams model = init_model(shape, 41);
    ModelParams grads = zero_model(shape);
    estimation_loss_gradients(model, in, targets, gating, Mode::kTrain, grads, nullptr);
    const auto analytic = flatten_trainable(grads);
    const FdOutcome out = fd_check(model, analytic, [&](const ModelParams& m) {
      return estimation_loss(
          estimator_forward_batch(m, in, gating, Mode::kTrain, Mode::kTrain, nullptr, nullptr)
              .outputs,
          targets);
    });
    total += out.checked;
    failed += out.failed;
  }
  {
    ModelParams model = init_model(shape, 43);
    ModelParams grads = zero_model(shape);
    classification_loss_gradients(model, in, labels, grads, nullptr);
    const auto analytic = flatten_trainable(grads);
    const FdOutcome out = fd_check(model, analytic, [&](const ModelParams& m) {
      return classification_loss(
          classifier_forward_batch(m.classifier, in, Mode::kTrain, nullptr, nullptr), labels);
    });
    total += out.checked;
    failed += out.failed;
  }
  report(3, failed == 0, "backprop vs central finite differences, both losses, both gatings",
         fmt("%zu/%zu parameters agree within 1e-4", total - failed, total));
}

// --- criterion 4: FedAvg degeneracy ----------------------------------------

void criterion_4() {
  ExperimentConfig cfg;
  cfg.bs_rows = cfg.bs_cols = 2;
  cfg.ris_rows = cfg.ris_cols = 4;
  cfg.group_size = 4;
  cfg.q = 8;
  cfg.q1 = 4;
  cfg.q2 = 2;
  cfg.region_boundaries = {};  // single region
  cfg.users_per_region = 1;
  cfg.samples_per_user = 600;
  cfg.test_samples = 0;
  cfg.expert_channels = 8;
  cfg.classifier_channels = 4;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.threads = 1;
  cfg.seed = 9;
  cfg.validate();

  const PilotSetup setup = build_pilot_setup(cfg);
  BuiltDataset data = build_dataset(cfg, setup);

  ModelParams start = init_model(cfg.model_shape(), cfg.seed);
  pretrain_classifier(data.clients, 1, cfg.batch_size, cfg.pretrain_lr, 0.1, cfg.seed, start);

  FedConfig fed;
  fed.epochs = cfg.epochs;
  fed.batch_size = cfg.batch_size;
  fed.base_lr = cfg.lr;
  fed.seed = cfg.seed;
  fed.threads = 1;

  ModelParams fed_model = start;
  train_federated(data.clients, fed, fed_model, nullptr);
  ModelParams cen_model = start;
  train_centralized(data.clients.front(), fed, cen_model, nullptr);

  const std::uint64_t ha = checkpoint_hash(fed_model);
  const std::uint64_t hb = checkpoint_hash(cen_model);
  report(4, ha == hb, "single-client FedAvg bit-identical to centralized training",
         fmt("checkpoint hashes %016llx vs %016llx", static_cast<unsigned long long>(ha),
             static_cast<unsigned long long>(hb)));
}

// --- criterion 5: MAC accounting -------------------------------------------

void criterion_5() {
  const ExperimentConfig cfg = table_grouped();
  const ModelShape shape = cfg.model_shape();
  const MacBreakdown b = mac_count(shape);

  ModelParams model = init_model(shape, 3);
  Batch3 in;
  in.resize(1, shape.q1, shape.q2, 2);
  Rng rng(4);
  for (Eigen::Index i = 0; i < in.m.size(); ++i) in.m.data()[i] = rng.normal();
  Instrumentation instr;
  estimator_forward_batch(model, in, Gating::kHard, Mode::kEval, Mode::kEval, nullptr, &instr);

  const bool exact = instr.macs == b.total;
  const double rel = std::abs(static_cast<double>(b.total) - 1.22e6) / 1.22e6;
  report(5, exact && rel <= 0.05, "analytic MACs equal instrumented count; total near 1.22e6",
         fmt("analytic %llu, instrumented %llu, vs paper budget %.2f%%",
             static_cast<unsigned long long>(b.total),
             static_cast<unsigned long long>(instr.macs), 100.0 * rel));
}

// --- criteria 6-8: training regimes ----------------------------------------

// Reduced-scale regime shared by criteria 6 and 8: 2,000 samples per user,
// 20 epochs. Batch 32 (more synchronous rounds at the pinned epoch count)
// with a matching step size; everything else is the table configuration.
ExperimentConfig desk_cfg(bool grouped) {
  ExperimentConfig c;
  c.grouped = grouped;
  c.experiment = grouped ? "grouped-dml" : "ungrouped";
  c.samples_per_user = 2000;
  c.test_samples = 900;
  c.epochs = 20;
  c.batch_size = 32;
  c.lr = 2e-3;
  c.pretrain_epochs = 10;
  c.snr_grid_db = {10.0};
  c.write_dataset = false;
  c.threads = 0;  // all cores
  c.seed = 1;
  return c;
}

double aggregate_for(const std::vector<ResultRow>& aggs, const std::string& method, int q,
                     double snr, int region = 0) {
  for (const auto& r : aggs)
    if (r.method == method && r.q == q && std::abs(r.snr_db - snr) < 1e-9 &&
        (region == 0 || r.region == region))
      return r.nmse_db;
  return std::numeric_limits<double>::quiet_NaN();
}

void criterion_6(const std::string& work_dir) {
  ExperimentConfig cfg = desk_cfg(false);
  const ExperimentResult res = run_experiment(cfg, work_dir + "/c6_ungrouped");
  const double nn = aggregate_for(res.aggregates, "nn", cfg.q, 10.0);
  const double ls = aggregate_for(res.aggregates, "ls", cfg.q, 10.0);
  const double margin = ls - nn;
  report(6, margin >= 10.0,
         "short-pilot superiority, ungrouped desk scale (2000/user, 20 epochs)",
         fmt("nn %.2f dB vs ls@Q=32 %.2f dB, margin %.2f dB (need >= 10)", nn, ls, margin));
}

double median_nn_nmse_db(const std::vector<ResultRow>& rows, int q, double snr) {
  std::vector<double> vals;
  for (const auto& r : rows)
    if (r.method == "nn" && r.q == q && std::abs(r.snr_db - snr) < 1e-9)
      vals.push_back(r.nmse_db);
  if (vals.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
  return vals[vals.size() / 2];
}

void criterion_7(const std::string& work_dir) {
  // Full table scale; hours of runtime. Median per-sample NMSE at 10 dB.
  ExperimentConfig cfg;  // table defaults: 20,000/user, 100 epochs
  cfg.snr_grid_db = {-5, 0, 5, 10, 15, 20, 25};
  cfg.write_dataset = false;  // keep the nightly artifact light
  cfg.threads = 0;
  const ExperimentResult res = run_experiment(cfg, work_dir + "/c7_full");
  const double median = median_nn_nmse_db(res.rows, cfg.q, 10.0);
  report(7, median <= -15.5, "grouping gain at full scale (nightly)",
         fmt("median nn NMSE at 10 dB = %.2f dB (need <= -15.5, target -18.5 +- 3)", median));
}

void criterion_8(const std::string& work_dir) {
  ExperimentConfig single = desk_cfg(true);
  single.experiment = "single-region";
  const ExperimentResult res_single = run_experiment(single, work_dir + "/c8_single");

  ExperimentConfig dml = desk_cfg(true);
  const ExperimentResult res_dml = run_experiment(dml, work_dir + "/c8_dml");

  auto region_nmse = [&](const ExperimentResult& r, int region) {
    return aggregate_for(r.per_region, "nn", 32, 10.0, region);
  };
  const double s1 = region_nmse(res_single, 1);
  const double s2 = region_nmse(res_single, 2);
  const double s3 = region_nmse(res_single, 3);
  const double gap = std::min(s2, s3) - s1;

  const double d1 = region_nmse(res_dml, 1);
  const double d2 = region_nmse(res_dml, 2);
  const double d3 = region_nmse(res_dml, 3);
  const double spread = std::max({d1, d2, d3}) - std::min({d1, d2, d3});

  report(8, gap >= 2.0 && spread <= 1.0,
         "generalization gap: region-1 training degrades elsewhere; DML stays flat",
         fmt("single-region per-region %.2f/%.2f/%.2f dB (gap %.2f, need >= 2); "
             "dml %.2f/%.2f/%.2f dB (spread %.2f, need <= 1)",
             s1, s2, s3, gap, d1, d2, d3, spread));
}

// --- criterion 9: invariants suite -----------------------------------------

void criterion_9() {
  int failures = 0;
  Rng rng(99);

  // steering-vector norm across geometries and angles
  for (int t = 0; t < 200; ++t) {
    ArrayGeometry g{1 + static_cast<int>(rng.below(8)), 1 + static_cast<int>(rng.below(8)), 0.5};
    const double az = rng.uniform(-1.5, 1.5), el = rng.uniform(-1.5, 1.5);
    if (std::abs(steering_vector(g, az, el).norm() - 1.0) > 1e-12) ++failures;
  }

  // grouping row/column sums
  const auto s = make_grouping({8, 8, 0.5}, 4);
  const Eigen::MatrixXd sm = s.matrix();
  for (int r = 0; r < sm.rows(); ++r)
    if (sm.row(r).sum() != 4.0) ++failures;
  for (int c = 0; c < sm.cols(); ++c)
    if (sm.col(c).sum() != 1.0) ++failures;

  // simplex outputs for random classifiers and inputs
  {
    ModelShape shape;
    shape.q1 = 4;
    shape.q2 = 2;
    shape.regions = 3;
    shape.d = 8;
    shape.expert_channels = 4;
    shape.classifier_channels = 4;
    ModelParams model = init_model(shape, 5);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> tensor(static_cast<std::size_t>(shape.q1) * shape.q2 * 2);
      for (auto& v : tensor) v = rng.normal() * 100.0;
      const GateOutput gate = classifier_forward(tensor, shape, model.classifier, Mode::kEval);
      const double sum = gate.probabilities.sum();
      if (std::abs(sum - 1.0) > 1e-6 || gate.probabilities.minCoeff() < 0.0 ||
          !std::isfinite(sum))
        ++failures;
    }
  }

  // nmse scale invariance
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXcd h(6), e(6);
    for (int i = 0; i < 6; ++i) {
      h[i] = rng.cgauss();
      e[i] = rng.cgauss();
    }
    const std::complex<double> c(rng.normal(), rng.normal());
    if (std::abs(nmse(c * e, c * h) - nmse(e, h)) > 1e-12 * std::max(1.0, nmse(e, h))) ++failures;
  }

  // encode/decode bijection
  for (int t = 0; t < 20; ++t) {
    const int q1 = 1 + static_cast<int>(rng.below(5)), q2 = 1 + static_cast<int>(rng.below(5));
    Eigen::VectorXcd raw(q1 * q2);
    for (int i = 0; i < raw.size(); ++i) raw[i] = rng.cgauss();
    if ((decode_tensor(encode_tensor(raw, q1, q2), q1, q2) - raw).norm() != 0.0) ++failures;
  }

  // determinism under seed: dataset and model init
  {
    ExperimentConfig cfg;
    cfg.ris_rows = cfg.ris_cols = 4;
    cfg.bs_rows = cfg.bs_cols = 2;
    cfg.q = 8;
    cfg.q1 = 4;
    cfg.q2 = 2;
    cfg.samples_per_user = 12;
    cfg.test_samples = 3;
    cfg.users_per_region = 1;
    cfg.expert_channels = 4;
    cfg.classifier_channels = 3;
    const PilotSetup s1 = build_pilot_setup(cfg), s2 = build_pilot_setup(cfg);
    const BuiltDataset d1 = build_dataset(cfg, s1), d2 = build_dataset(cfg, s2);
    for (std::size_t i = 0; i < d1.clients.size(); ++i)
      for (std::size_t j = 0; j < d1.clients[i].samples.size(); ++j)
        if (d1.clients[i].samples[j].tensor != d2.clients[i].samples[j].tensor) ++failures;
    if (checkpoint_hash(init_model(cfg.model_shape(), 7)) !=
        checkpoint_hash(init_model(cfg.model_shape(), 7)))
      ++failures;
  }

  report(9, failures == 0, "invariants: steering norm, grouping sums, simplex, nmse scale, "
                           "tensor bijection, determinism",
         fmt("%d violations", failures));
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  std::string work_dir = std::filesystem::temp_directory_path() / "riscade_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "ci") {
      selected = {1, 2, 3, 4, 5, 6, 8, 9};
    } else if (arg == "all") {
      selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    } else if (arg == "--work-dir" && i + 1 < argc) {
      work_dir = argv[++i];
    } else {
      selected.push_back(std::atoi(arg.c_str()));
    }
  }
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 8, 9};
  std::filesystem::create_directories(work_dir);

  for (int c : selected) {
    switch (c) {
      case 1: criterion_1(); break;
      case 2: criterion_2(); break;
      case 3: criterion_3(); break;
      case 4: criterion_4(); break;
      case 5: criterion_5(); break;
      case 6: criterion_6(work_dir); break;
      case 7: criterion_7(work_dir); break;
      case 8: criterion_8(work_dir); break;
      case 9: criterion_9(); break;
      default:
        std::fprintf(stderr, "unknown criterion %d\n", c);
        return 2;
    }
  }
  return g_failures == 0 ? 0 : 1;
}
