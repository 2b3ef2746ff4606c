#ifndef RISCADE_HARNESS_HPP
#define RISCADE_HARNESS_HPP

#include <string>
#include <vector>

#include "riscade/config.hpp"
#include "riscade/dataset.hpp"
#include "riscade/federated.hpp"

namespace riscade {

// One evaluated sample (or aggregate when n > 1). The CSV projection is
// the fixed schema method,Q,grouped,snr_db,nmse_db,n,seed.
struct ResultRow {
  std::string method;
  int q = 0;
  bool grouped = false;
  double snr_db = 0.0;
  double nmse_db = 0.0;
  long n = 1;
  std::uint64_t seed = 0;
  int region = 0;  // 1-based; 0 for aggregates over regions (extended CSV only)
  double nmse_ratio = 0.0;
};

// Fixed schema; dB values to 4 decimals.
void write_result_csv(const std::string& path, const std::vector<ResultRow>& rows);
// Extended schema with a region column (same formatting).
void write_region_csv(const std::string& path, const std::vector<ResultRow>& rows);

// Mean-over-ratio aggregates per (method, q, grouped, snr), and per
// region when by_region is set.
std::vector<ResultRow> aggregate_rows(const std::vector<ResultRow>& rows, bool by_region);

struct EvalContext {
  const ExperimentConfig* cfg = nullptr;
  const PilotSetup* setup = nullptr;
  const CovarianceModel* pooled_cov = nullptr;
  const std::vector<CovarianceModel>* region_covs = nullptr;  // optional
  bool include_nn = true;
  bool include_label_oracle = false;  // identity estimator: hhat := fresh LS label
};

// Alg.-2-style evaluation: per SNR point, fresh short-pilot observations
// of every test truth (classifier -> gated expert -> mapper), NMSE
// against ground truth, plus LS/MMSE on the same short observations and
// on the long-pilot label design. One row per (sample, method, SNR).
std::vector<ResultRow> run_eval(const ModelParams& model, const TestSet& test,
                                const EvalContext& ctx);

// MAC accounting table: module,term,macs rows plus the total.
struct ComplexityRow {
  std::string module, term;
  unsigned long long macs = 0;
};
std::vector<ComplexityRow> complexity_report(const ModelShape& shape);
void write_complexity_csv(const std::string& path, const std::vector<ComplexityRow>& rows);

// --- checkpoints ---

void save_checkpoint(const std::string& path, const ModelParams& model, std::uint64_t config_hash);
// Throws on a config-hash mismatch unless expected_hash is 0.
ModelParams load_checkpoint(const std::string& path, std::uint64_t expected_hash);

void write_train_log_csv(const std::string& path, const TrainLog& log);

// --- experiment orchestration ---

struct ExperimentResult {
  double pretrain_accuracy = 0.0;
  double label_nmse_db = 0.0;
  TrainLog train_log;
  std::vector<ResultRow> rows;        // per-sample
  std::vector<ResultRow> aggregates;  // mean per (method, q, snr)
  std::vector<ResultRow> per_region;  // mean per (method, q, snr, region)
  std::uint64_t model_hash = 0;
  std::string out_dir;
};

// Executes the configured regime end to end: dataset -> classifier
// pretraining -> federated training (regime-dependent client subset) ->
// evaluation -> CSV/checkpoint artifacts under out_dir. baseline-only
// skips all training and emits classical rows only.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace riscade

#endif  // RISCADE_HARNESS_HPP
