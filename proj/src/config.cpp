#include "riscade/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace riscade {

using nlohmann::json;

ChannelConfig ExperimentConfig::channel_config() const {
  ChannelConfig c;
  c.bs = bs_geometry();
  c.ris = ris_geometry();
  c.paths_bs_ris = paths_bs_ris;
  c.paths_ris_user = paths_ris_user;
  c.regions = partition();
  c.users_per_region = users_per_region;
  c.freeze_bs_ris = freeze_bs_ris;
  return c;
}

ModelShape ExperimentConfig::model_shape() const {
  ModelShape s;
  s.q1 = q1;
  s.q2 = q2;
  s.regions = regions();
  s.d = channel_dim();
  s.expert_channels = expert_channels;
  s.classifier_channels = classifier_channels;
  return s;
}

PilotAlphabet ExperimentConfig::alphabet() const {
  if (pilot_alphabet == "pm1") return PilotAlphabet::kPm1;
  if (pilot_alphabet == "unit_circle") return PilotAlphabet::kUnitCircle;
  throw std::invalid_argument("config: pilot_alphabet must be pm1 or unit_circle");
}

PrecoderSchedule ExperimentConfig::schedule() const {
  if (precoder_schedule == "fixed") return PrecoderSchedule::kFixed;
  if (precoder_schedule == "per_slot") return PrecoderSchedule::kPerSlot;
  if (precoder_schedule == "orthogonal_blocks") return PrecoderSchedule::kOrthogonalBlocks;
  throw std::invalid_argument("config: precoder_schedule must be fixed, per_slot or orthogonal_blocks");
}

namespace {
Gating parse_gating(const std::string& s, const char* field) {
  if (s == "hard") return Gating::kHard;
  if (s == "soft") return Gating::kSoft;
  throw std::invalid_argument(std::string("config: ") + field + " must be hard or soft");
}
}  // namespace

Gating ExperimentConfig::gating_train_mode() const { return parse_gating(gating_train, "gating_train"); }
Gating ExperimentConfig::gating_eval_mode() const { return parse_gating(gating_eval, "gating_eval"); }

int ExperimentConfig::effective_threads() const {
  if (threads > 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

void ExperimentConfig::validate() const {
  bs_geometry().validate();
  ris_geometry().validate();
  if (q < 1 || q1 < 1 || q2 < 1 || q1 * q2 != q)
    throw std::invalid_argument("config: q1*q2 must equal q");
  if (grouped) {
    if (group_size < 1 || ris_elements() % group_size != 0)
      throw std::invalid_argument("config: group_size must divide the RIS element count");
  }
  alphabet();
  schedule();
  if (precoder_mode != "per_user" && precoder_mode != "per_sample")
    throw std::invalid_argument("config: precoder_mode must be per_user or per_sample");
  if (paths_bs_ris < 1 || paths_ris_user < 1)
    throw std::invalid_argument("config: path counts must be >= 1");
  partition();  // validates boundaries
  if (users_per_region < 1) throw std::invalid_argument("config: users_per_region must be >= 1");
  if (samples_per_user < 1) throw std::invalid_argument("config: samples_per_user must be >= 1");
  if (!(train_fraction > 0.0) || !(train_fraction <= 1.0))
    throw std::invalid_argument("config: train_fraction must be in (0, 1]");
  if (test_samples < 0) throw std::invalid_argument("config: test_samples must be >= 0");
  if (label_budget() < channel_dim())
    throw std::invalid_argument("config: label pilot budget must be at least width*M");
  if (label_schedule != "orthogonal_blocks" && label_schedule != "per_slot")
    throw std::invalid_argument("config: label_schedule must be orthogonal_blocks or per_slot");
  if (expert_channels < 1 || classifier_channels < 1)
    throw std::invalid_argument("config: channel widths must be >= 1");
  if (epochs < 0 || batch_size < 2)
    throw std::invalid_argument("config: epochs >= 0 and batch_size >= 2 required");
  if (!(lr > 0.0) || !(pretrain_lr > 0.0)) throw std::invalid_argument("config: learning rates must be positive");
  if (server_optimizer != "adam" && server_optimizer != "sgd")
    throw std::invalid_argument("config: server_optimizer must be adam or sgd");
  gating_train_mode();
  gating_eval_mode();
  if (local_steps < 1) throw std::invalid_argument("config: local_steps must be >= 1");
  if (snr_grid_db.empty()) throw std::invalid_argument("config: snr_grid_db must be nonempty");
  if (covariance != "pooled" && covariance != "per_region")
    throw std::invalid_argument("config: covariance must be pooled or per_region");
  if (cov_loading_rel < 0.0) throw std::invalid_argument("config: cov_loading_rel must be >= 0");
  if (experiment != "ungrouped" && experiment != "single-region" && experiment != "grouped-dml" &&
      experiment != "baseline-only")
    throw std::invalid_argument(
        "config: experiment must be ungrouped, single-region, grouped-dml or baseline-only");
  if (experiment == "ungrouped" && grouped)
    throw std::invalid_argument("config: the ungrouped experiment requires grouped=false");
  if ((experiment == "single-region" || experiment == "grouped-dml") && !grouped)
    throw std::invalid_argument("config: this experiment regime requires grouped=true");
  if (archive_format != "binary" && archive_format != "csv")
    throw std::invalid_argument("config: archive_format must be binary or csv");
  if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
}

namespace {

template <typename T>
void get_to_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

std::string ExperimentConfig::to_json_string() const {
  json j;
  j["bs_rows"] = bs_rows;
  j["bs_cols"] = bs_cols;
  j["ris_rows"] = ris_rows;
  j["ris_cols"] = ris_cols;
  j["spacing_over_wavelength"] = spacing_over_wavelength;
  j["carrier_ghz"] = carrier_ghz;
  j["grouped"] = grouped;
  j["group_size"] = group_size;
  j["q"] = q;
  j["q1"] = q1;
  j["q2"] = q2;
  j["pilot_alphabet"] = pilot_alphabet;
  j["precoder_schedule"] = precoder_schedule;
  j["precoder_mode"] = precoder_mode;
  j["normalize_by_sqrt_q"] = normalize_by_sqrt_q;
  j["paths_bs_ris"] = paths_bs_ris;
  j["paths_ris_user"] = paths_ris_user;
  j["region_boundaries"] = region_boundaries;
  j["users_per_region"] = users_per_region;
  j["freeze_bs_ris"] = freeze_bs_ris;
  j["samples_per_user"] = samples_per_user;
  j["train_fraction"] = train_fraction;
  j["test_samples"] = test_samples;
  j["train_snr_db"] = train_snr_db;
  j["label_snr_db"] = label_snr_db;
  j["label_q"] = label_q;
  j["label_schedule"] = label_schedule;
  j["labels_use_truth"] = labels_use_truth;
  j["expert_channels"] = expert_channels;
  j["classifier_channels"] = classifier_channels;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["lr_halve_every_epochs"] = lr_halve_every_epochs;
  j["server_optimizer"] = server_optimizer;
  j["gating_train"] = gating_train;
  j["gating_eval"] = gating_eval;
  j["local_steps"] = local_steps;
  j["pretrain_epochs"] = pretrain_epochs;
  j["pretrain_lr"] = pretrain_lr;
  j["snr_grid_db"] = snr_grid_db;
  j["covariance"] = covariance;
  j["cov_loading_rel"] = cov_loading_rel;
  j["experiment"] = experiment;
  j["seed"] = seed;
  j["threads"] = threads;
  j["archive_format"] = archive_format;
  j["store_full"] = store_full;
  j["write_dataset"] = write_dataset;
  j["checkpoint_every_epochs"] = checkpoint_every_epochs;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: JSON parse error: ") + e.what());
  }
  ExperimentConfig c;
  get_to_if(j, "bs_rows", c.bs_rows);
  get_to_if(j, "bs_cols", c.bs_cols);
  get_to_if(j, "ris_rows", c.ris_rows);
  get_to_if(j, "ris_cols", c.ris_cols);
  get_to_if(j, "spacing_over_wavelength", c.spacing_over_wavelength);
  get_to_if(j, "carrier_ghz", c.carrier_ghz);
  get_to_if(j, "grouped", c.grouped);
  get_to_if(j, "group_size", c.group_size);
  get_to_if(j, "q", c.q);
  get_to_if(j, "q1", c.q1);
  get_to_if(j, "q2", c.q2);
  get_to_if(j, "pilot_alphabet", c.pilot_alphabet);
  get_to_if(j, "precoder_schedule", c.precoder_schedule);
  get_to_if(j, "precoder_mode", c.precoder_mode);
  get_to_if(j, "normalize_by_sqrt_q", c.normalize_by_sqrt_q);
  get_to_if(j, "paths_bs_ris", c.paths_bs_ris);
  get_to_if(j, "paths_ris_user", c.paths_ris_user);
  get_to_if(j, "region_boundaries", c.region_boundaries);
  get_to_if(j, "users_per_region", c.users_per_region);
  get_to_if(j, "freeze_bs_ris", c.freeze_bs_ris);
  get_to_if(j, "samples_per_user", c.samples_per_user);
  get_to_if(j, "train_fraction", c.train_fraction);
  get_to_if(j, "test_samples", c.test_samples);
  get_to_if(j, "train_snr_db", c.train_snr_db);
  get_to_if(j, "label_snr_db", c.label_snr_db);
  get_to_if(j, "label_q", c.label_q);
  get_to_if(j, "label_schedule", c.label_schedule);
  get_to_if(j, "labels_use_truth", c.labels_use_truth);
  get_to_if(j, "expert_channels", c.expert_channels);
  get_to_if(j, "classifier_channels", c.classifier_channels);
  get_to_if(j, "epochs", c.epochs);
  get_to_if(j, "batch_size", c.batch_size);
  get_to_if(j, "lr", c.lr);
  get_to_if(j, "lr_halve_every_epochs", c.lr_halve_every_epochs);
  get_to_if(j, "server_optimizer", c.server_optimizer);
  get_to_if(j, "gating_train", c.gating_train);
  get_to_if(j, "gating_eval", c.gating_eval);
  get_to_if(j, "local_steps", c.local_steps);
  get_to_if(j, "pretrain_epochs", c.pretrain_epochs);
  get_to_if(j, "pretrain_lr", c.pretrain_lr);
  get_to_if(j, "snr_grid_db", c.snr_grid_db);
  get_to_if(j, "covariance", c.covariance);
  get_to_if(j, "cov_loading_rel", c.cov_loading_rel);
  get_to_if(j, "experiment", c.experiment);
  get_to_if(j, "seed", c.seed);
  get_to_if(j, "threads", c.threads);
  get_to_if(j, "archive_format", c.archive_format);
  get_to_if(j, "store_full", c.store_full);
  get_to_if(j, "write_dataset", c.write_dataset);
  get_to_if(j, "checkpoint_every_epochs", c.checkpoint_every_epochs);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

std::uint64_t fnv1a(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ExperimentConfig::hash() const {
  const std::string canon = to_json_string();
  return fnv1a(canon.data(), canon.size());
}

}  // namespace riscade
