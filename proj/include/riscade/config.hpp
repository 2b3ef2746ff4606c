#ifndef RISCADE_CONFIG_HPP
#define RISCADE_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "riscade/channel.hpp"
#include "riscade/nn/model.hpp"
#include "riscade/pilots.hpp"

namespace riscade {

// Full experiment parameterization. Defaults reproduce the reference
// configuration (4x4 BS, 8x8 RIS, g=4 grouping, Q=32 pilots stacked 8x4,
// three elevation regions with three users each, LS labels at 10 dB,
// Adam at 1e-3 halved every 30 epochs for 100 epochs).
struct ExperimentConfig {
  // arrays and carrier
  int bs_rows = 4, bs_cols = 4;
  int ris_rows = 8, ris_cols = 8;
  double spacing_over_wavelength = 0.5;
  double carrier_ghz = 28.0;  // informational; geometry is in wavelengths

  // grouping
  bool grouped = true;
  int group_size = 4;

  // short-pilot session
  int q = 32, q1 = 8, q2 = 4;
  std::string pilot_alphabet = "pm1";            // pm1 | unit_circle
  std::string precoder_schedule = "per_slot";    // fixed | per_slot | orthogonal_blocks
  std::string precoder_mode = "per_user";        // fixed schedule only: per_user | per_sample
  bool normalize_by_sqrt_q = true;

  // channel model
  int paths_bs_ris = 3, paths_ris_user = 3;
  std::vector<double> region_boundaries = {-0.5235987755982988, 0.5235987755982988};
  int users_per_region = 3;
  bool freeze_bs_ris = true;

  // dataset
  int samples_per_user = 20000;
  double train_fraction = 0.9;
  int test_samples = 10000;
  double train_snr_db = 10.0;

  // supervision
  double label_snr_db = 10.0;
  int label_q = 0;                                    // 0 -> width * M
  std::string label_schedule = "orthogonal_blocks";   // orthogonal_blocks | per_slot
  bool labels_use_truth = false;

  // model
  int expert_channels = 32;
  int classifier_channels = 16;

  // training
  int epochs = 100;
  int batch_size = 256;
  double lr = 1e-3;
  int lr_halve_every_epochs = 30;
  std::string server_optimizer = "adam";  // adam | sgd
  std::string gating_train = "hard";      // hard | soft
  std::string gating_eval = "hard";
  int local_steps = 1;
  int pretrain_epochs = 5;
  double pretrain_lr = 1e-3;

  // evaluation
  std::vector<double> snr_grid_db = {-5, 0, 5, 10, 15, 20, 25};
  std::string covariance = "pooled";  // pooled | per_region
  double cov_loading_rel = 1e-6;

  // run control
  std::string experiment = "grouped-dml";  // ungrouped | single-region | grouped-dml | baseline-only
  std::uint64_t seed = 1;
  int threads = 0;                      // 0 -> hardware concurrency
  std::string archive_format = "binary";  // binary | csv
  bool store_full = false;
  bool write_dataset = true;
  int checkpoint_every_epochs = 0;  // 0 -> final checkpoint only

  // --- derived quantities ---
  int bs_antennas() const { return bs_rows * bs_cols; }
  int ris_elements() const { return ris_rows * ris_cols; }
  int width() const { return grouped ? ris_elements() / group_size : ris_elements(); }
  int channel_dim() const { return width() * bs_antennas(); }  // D
  int label_budget() const { return label_q > 0 ? label_q : channel_dim(); }
  int regions() const { return static_cast<int>(region_boundaries.size()) + 1; }
  ArrayGeometry bs_geometry() const { return {bs_rows, bs_cols, spacing_over_wavelength}; }
  ArrayGeometry ris_geometry() const { return {ris_rows, ris_cols, spacing_over_wavelength}; }
  RegionPartition partition() const {
    return RegionPartition::from_interior_boundaries(region_boundaries);
  }
  ChannelConfig channel_config() const;
  ModelShape model_shape() const;
  PilotAlphabet alphabet() const;
  PrecoderSchedule schedule() const;
  Gating gating_train_mode() const;
  Gating gating_eval_mode() const;
  int effective_threads() const;

  // Throws std::invalid_argument with a diagnostic on any inconsistency.
  void validate() const;

  std::string to_json_string() const;  // canonical (sorted keys, 2-space indent)
  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig from_json_file(const std::string& path);

  // FNV-1a over the canonical JSON; identifies datasets/checkpoints.
  std::uint64_t hash() const;
};

std::uint64_t fnv1a(const void* data, std::size_t bytes);

}  // namespace riscade

#endif  // RISCADE_CONFIG_HPP
