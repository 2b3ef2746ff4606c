#ifndef RISCADE_DATASET_HPP
#define RISCADE_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "riscade/config.hpp"
#include "riscade/estimators.hpp"
#include "riscade/federated.hpp"
#include "riscade/pilots.hpp"

namespace riscade {

// Ground-truth channels for evaluation; observations are generated fresh
// per SNR point at evaluation time.
struct TestSet {
  std::vector<Eigen::VectorXcd> truth;  // vec of the target channel
  std::vector<int> region;              // 1-based
  std::vector<int> user;                // 1-based

  std::size_t size() const { return truth.size(); }
};

// The full pilot/grouping context of one experiment: everything the NN,
// LS and MMSE consume, frozen per (config, seed).
struct PilotSetup {
  std::optional<GroupingOperator> grouping;
  // One short-pilot config per (region, user) under the fixed per-user
  // schedule; a single shared entry otherwise.
  std::vector<PilotConfig> short_configs;
  bool per_user = false;
  PilotConfig label_config;  // long-pilot design (normalize off, q2 = 1)

  const PilotConfig& short_config(int region, int user, int users_per_region) const {
    if (!per_user) return short_configs.front();
    return short_configs[static_cast<std::size_t>(region - 1) * users_per_region + (user - 1)];
  }
};

PilotSetup build_pilot_setup(const ExperimentConfig& cfg);

// Train clients, fixed-tensor validation split, test truths, and the
// covariance models fitted from the training channels.
struct BuiltDataset {
  std::vector<ClientDataset> clients;  // train split, one per (region, user)
  EvalSet validation;                  // held-out tensors with ground truth
  TestSet test;
  CovarianceModel pooled_cov;
  std::vector<CovarianceModel> region_covs;  // per 1-based region (empty unless configured)
  double label_nmse = 0.0;                   // mean label-vs-truth ratio over train samples
};

// Deterministic in (cfg, cfg.seed): realizations, observations at
// train_snr_db, LS labels at label_snr_db over the shared long-pilot
// design (fresh noise per sample), split train/validation per user, plus
// test-set truths drawn from the sample-index range beyond the training
// block (so a frozen BS-RIS channel carries over).
BuiltDataset build_dataset(const ExperimentConfig& cfg, const PilotSetup& setup);

// LS labels for a batch of truth vectors over a prefactored label design.
Eigen::VectorXcd generate_label(const Eigen::VectorXcd& truth, const PilotConfig& label_config,
                                const LsSolver& solver, double snr_linear, Rng& noise_rng);

// --- archives ---

// Binary (interleaved re/im, column-major per matrix) or CSV, per
// cfg.archive_format. Stores per-sample target channel vectors with
// region/user tags; store_full additionally keeps G, f and the ungrouped
// H in the binary format. The pilot setup rides along in the binary
// format so consumers see the exact same Theta and precoders.
void write_dataset_archive(const std::string& path, const ExperimentConfig& cfg,
                           const PilotSetup& setup);

struct ArchiveRecord {
  int region = 1, user = 1;
  std::uint64_t index = 0;
  Eigen::VectorXcd target;  // vec(H) or vec(S H)
  Eigen::MatrixXcd bs_ris;  // store_full only
  Eigen::VectorXcd ris_user;
  Eigen::MatrixXcd cascaded;
};

struct DatasetArchive {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  bool grouped = false;
  bool store_full = false;
  std::vector<ArchiveRecord> records;
  PilotConfig pilots;      // binary format only
  bool has_pilots = false;
};

DatasetArchive read_dataset_archive(const std::string& path);

}  // namespace riscade

#endif  // RISCADE_DATASET_HPP
