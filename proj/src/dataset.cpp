#include "riscade/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

namespace riscade {

namespace {

constexpr char kBinaryMagic[8] = {'R', 'I', 'S', 'D', 'S', '0', '0', '1'};

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

// Chunked zero-mean covariance accumulator (rank updates via GEMM).
class CovAccumulator {
 public:
  void init(Eigen::Index d) {
    sum_.setZero(d, d);
    buf_.resize(d, 256);
    nbuf_ = 0;
    count_ = 0;
  }
  bool ready() const { return sum_.size() > 0; }
  void add(const Eigen::VectorXcd& h) {
    buf_.col(nbuf_++) = h;
    ++count_;
    if (nbuf_ == buf_.cols()) flush();
  }
  CovarianceModel finalize(double loading_rel) {
    flush();
    if (count_ == 0) throw std::logic_error("CovAccumulator: no samples");
    CovarianceModel model;
    model.sample_count = count_;
    model.matrix = (sum_ / static_cast<double>(count_)).selfadjointView<Eigen::Lower>();
    model.loading = loading_rel * model.matrix.real().trace() / static_cast<double>(sum_.rows());
    model.matrix.diagonal().array() += model.loading;
    return model;
  }

 private:
  void flush() {
    if (nbuf_ == 0) return;
    sum_.selfadjointView<Eigen::Lower>().rankUpdate(buf_.leftCols(nbuf_), 1.0);
    nbuf_ = 0;
  }
  Eigen::MatrixXcd sum_, buf_;
  Eigen::Index nbuf_ = 0;
  long count_ = 0;
};

Eigen::VectorXcd vec_of(const Eigen::MatrixXcd& m) {
  return Eigen::Map<const Eigen::VectorXcd>(m.data(), m.size());
}

void write_raw(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::ifstream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("dataset archive: truncated file");
}

void write_cmat(std::ofstream& out, const Eigen::MatrixXcd& m) {
  write_raw(out, m.data(), sizeof(std::complex<double>) * m.size());
}

void read_cmat(std::ifstream& in, Eigen::MatrixXcd& m) {
  read_raw(in, m.data(), sizeof(std::complex<double>) * m.size());
}

}  // namespace

PilotSetup build_pilot_setup(const ExperimentConfig& cfg) {
  cfg.validate();
  PilotSetup setup;
  if (cfg.grouped) setup.grouping = make_grouping(cfg.ris_geometry(), cfg.group_size);

  const Rng root(cfg.seed);
  Rng pilot_rng = root.split(kTagPilots);
  const int width = cfg.width();
  const int m = cfg.bs_antennas();

  if (cfg.schedule() == PrecoderSchedule::kFixed && cfg.precoder_mode == "per_user") {
    // shared phase matrix, one fixed precoder per (region, user)
    const Eigen::MatrixXcd phases = gen_pilots(cfg.q, width, cfg.alphabet(), pilot_rng);
    setup.per_user = true;
    for (int r = 1; r <= cfg.regions(); ++r) {
      for (int k = 1; k <= cfg.users_per_region; ++k) {
        PilotConfig pc;
        pc.phases = phases;
        Rng w_rng = root.split(kTagPrecoder, r, k);
        pc.precoders.resize(cfg.q, m);
        pc.precoders.rowwise() = random_unit_precoder(m, w_rng).transpose();
        pc.q1 = cfg.q1;
        pc.q2 = cfg.q2;
        pc.grouping = setup.grouping;
        pc.normalize_by_sqrt_q = cfg.normalize_by_sqrt_q;
        pc.validate();
        setup.short_configs.push_back(std::move(pc));
      }
    }
  } else {
    setup.per_user = false;
    setup.short_configs.push_back(make_pilot_config(cfg.q, cfg.q1, cfg.q2, width, m,
                                                    cfg.alphabet(), cfg.schedule(),
                                                    cfg.normalize_by_sqrt_q, setup.grouping,
                                                    pilot_rng));
  }

  Rng label_rng = root.split(kTagLabelDesign);
  const auto label_sched = cfg.label_schedule == "orthogonal_blocks"
                               ? PrecoderSchedule::kOrthogonalBlocks
                               : PrecoderSchedule::kPerSlot;
  setup.label_config = make_pilot_config(cfg.label_budget(), cfg.label_budget(), 1, width, m,
                                         cfg.alphabet(), label_sched, false, setup.grouping,
                                         label_rng);
  return setup;
}

Eigen::VectorXcd generate_label(const Eigen::VectorXcd& truth, const PilotConfig& label_config,
                                const LsSolver& solver, double snr_linear, Rng& noise_rng) {
  const Eigen::VectorXcd y = observe_vec(truth, label_config, snr_linear, noise_rng);
  return solver.solve(y);
}

BuiltDataset build_dataset(const ExperimentConfig& cfg, const PilotSetup& setup) {
  cfg.validate();
  const ChannelConfig ch = cfg.channel_config();
  const GroupingOperator* grouping = setup.grouping ? &*setup.grouping : nullptr;
  const Rng root(cfg.seed);
  const double train_snr = db_to_linear(cfg.train_snr_db);
  const double label_snr = db_to_linear(cfg.label_snr_db);
  const int regions = cfg.regions();
  const int users = cfg.users_per_region;
  const int spu = cfg.samples_per_user;
  const int n_train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * spu)));
  const int n_val = spu - n_train;
  const int test_per_user =
      cfg.test_samples > 0
          ? (cfg.test_samples + regions * users - 1) / (regions * users)
          : 0;

  const LsSolver label_solver(measurement_matrix(setup.label_config));

  struct PerUser {
    ClientDataset client;
    std::vector<std::vector<double>> val_tensors;
    std::vector<Eigen::VectorXcd> val_truth;
    std::vector<Eigen::VectorXcd> test_truth;
    double label_err = 0.0;
    std::vector<Eigen::VectorXcd> train_truth;  // for covariance fitting
  };
  std::vector<PerUser> per_user(static_cast<std::size_t>(regions) * users);

  auto build_user = [&](int r, int k) {
    PerUser& pu = per_user[static_cast<std::size_t>(r - 1) * users + (k - 1)];
    pu.client.region = r;
    pu.client.user = k;
    pu.client.samples.reserve(n_train);
    pu.train_truth.reserve(n_train);

    const PilotConfig& base = setup.short_config(r, k, users);
    const bool per_sample_w =
        cfg.schedule() == PrecoderSchedule::kFixed && cfg.precoder_mode == "per_sample";

    constexpr int kChunk = 512;
    for (int first = 0; first < spu + test_per_user; first += kChunk) {
      const int count = std::min(kChunk, spu + test_per_user - first);
      std::vector<ChannelRealization> chunk;
      generate_realizations(ch, grouping, r, k, first, count, cfg.seed, chunk);
      for (int j = 0; j < count; ++j) {
        const int i = first + j;
        const ChannelRealization& cr = chunk[static_cast<std::size_t>(j)];
        const Eigen::VectorXcd truth = vec_of(cr.has_grouped() ? cr.grouped : cr.cascaded);

        if (i >= spu) {  // test block
          pu.test_truth.push_back(truth);
          continue;
        }

        Rng obs_rng = root.split(kTagObservationNoise, r, k, i);
        Observation obs;
        if (per_sample_w) {
          PilotConfig pc = base;
          Rng w_rng = root.split(kTagPrecoder, r, k, i);
          pc.precoders.rowwise() = random_unit_precoder(cfg.bs_antennas(), w_rng).transpose();
          obs = observe(cr, pc, train_snr, obs_rng);
        } else {
          obs = observe(cr, base, train_snr, obs_rng);
        }

        if (i < n_train) {
          TrainSample s;
          s.tensor = std::move(obs.tensor);
          s.region = r;
          if (cfg.labels_use_truth) {
            s.target = truth;
          } else {
            Rng label_rng = root.split(kTagLabelNoise, r, k, i);
            s.target = generate_label(truth, setup.label_config, label_solver, label_snr, label_rng);
          }
          pu.label_err += nmse(s.target, truth);
          pu.train_truth.push_back(truth);
          pu.client.samples.push_back(std::move(s));
        } else {
          pu.val_tensors.push_back(std::move(obs.tensor));
          pu.val_truth.push_back(truth);
        }
      }
    }
  };

  const int threads = cfg.effective_threads();
  if (threads > 1) {
    std::vector<std::future<void>> futures;
    for (int r = 1; r <= regions; ++r)
      for (int k = 1; k <= users; ++k)
        futures.push_back(std::async(std::launch::async, build_user, r, k));
    for (auto& f : futures) f.get();
  } else {
    for (int r = 1; r <= regions; ++r)
      for (int k = 1; k <= users; ++k) build_user(r, k);
  }

  BuiltDataset out;
  CovAccumulator pooled;
  std::vector<CovAccumulator> per_region(cfg.covariance == "per_region" ? regions : 0);
  pooled.init(cfg.channel_dim());
  for (auto& acc : per_region) acc.init(cfg.channel_dim());

  double label_err = 0.0;
  long label_count = 0;
  for (auto& pu : per_user) {
    label_err += pu.label_err;
    label_count += static_cast<long>(pu.client.samples.size());
    for (const auto& h : pu.train_truth) {
      pooled.add(h);
      if (!per_region.empty()) per_region[static_cast<std::size_t>(pu.client.region - 1)].add(h);
    }
    pu.train_truth.clear();
    for (std::size_t i = 0; i < pu.val_tensors.size(); ++i) {
      out.validation.tensors.push_back(std::move(pu.val_tensors[i]));
      out.validation.truth.push_back(std::move(pu.val_truth[i]));
      out.validation.regions.push_back(pu.client.region);
    }
    for (auto& h : pu.test_truth) {
      out.test.truth.push_back(std::move(h));
      out.test.region.push_back(pu.client.region);
      out.test.user.push_back(pu.client.user);
    }
    out.clients.push_back(std::move(pu.client));
  }
  (void)n_val;
  out.label_nmse = label_count > 0 ? label_err / label_count : 0.0;
  out.pooled_cov = pooled.finalize(cfg.cov_loading_rel);
  for (auto& acc : per_region) out.region_covs.push_back(acc.finalize(cfg.cov_loading_rel));
  return out;
}

// ---------------------------------------------------------------------------
// archives

namespace {

void write_binary_archive(const std::string& path, const ExperimentConfig& cfg,
                          const PilotSetup& setup) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset archive: cannot open " + path + " for writing");

  const ChannelConfig ch = cfg.channel_config();
  const GroupingOperator* grouping = setup.grouping ? &*setup.grouping : nullptr;

  write_raw(out, kBinaryMagic, sizeof(kBinaryMagic));
  const std::uint64_t hash = cfg.hash(), seed = cfg.seed;
  write_raw(out, &hash, 8);
  write_raw(out, &seed, 8);
  const std::uint8_t grouped = cfg.grouped ? 1 : 0, full = cfg.store_full ? 1 : 0;
  write_raw(out, &grouped, 1);
  write_raw(out, &full, 1);
  const std::uint32_t dims[6] = {static_cast<std::uint32_t>(cfg.regions()),
                                 static_cast<std::uint32_t>(cfg.users_per_region),
                                 static_cast<std::uint32_t>(cfg.samples_per_user),
                                 static_cast<std::uint32_t>(cfg.ris_elements()),
                                 static_cast<std::uint32_t>(cfg.bs_antennas()),
                                 static_cast<std::uint32_t>(cfg.width())};
  write_raw(out, dims, sizeof(dims));
  const std::uint64_t count = static_cast<std::uint64_t>(cfg.regions()) * cfg.users_per_region *
                              cfg.samples_per_user;
  write_raw(out, &count, 8);

  constexpr int kChunk = 512;
  for (int r = 1; r <= cfg.regions(); ++r) {
    for (int k = 1; k <= cfg.users_per_region; ++k) {
      for (int first = 0; first < cfg.samples_per_user; first += kChunk) {
        const int n = std::min(kChunk, cfg.samples_per_user - first);
        std::vector<ChannelRealization> chunk;
        generate_realizations(ch, grouping, r, k, first, n, cfg.seed, chunk);
        for (int j = 0; j < n; ++j) {
          const auto& cr = chunk[static_cast<std::size_t>(j)];
          const std::uint32_t rr = r, kk = k;
          const std::uint64_t idx = static_cast<std::uint64_t>(first) + j;
          write_raw(out, &rr, 4);
          write_raw(out, &kk, 4);
          write_raw(out, &idx, 8);
          const Eigen::MatrixXcd& target = cr.has_grouped() ? cr.grouped : cr.cascaded;
          write_cmat(out, target);
          if (cfg.store_full) {
            write_cmat(out, cr.bs_ris);
            write_cmat(out, cr.ris_user);
            write_cmat(out, cr.cascaded);
          }
        }
      }
    }
  }

  // pilot block: the short design (first config) and the label design
  const std::uint8_t has_pilots = 1;
  write_raw(out, &has_pilots, 1);
  auto write_pilot = [&](const PilotConfig& pc) {
    const std::uint32_t pdims[5] = {static_cast<std::uint32_t>(pc.q()),
                                    static_cast<std::uint32_t>(pc.q1),
                                    static_cast<std::uint32_t>(pc.q2),
                                    static_cast<std::uint32_t>(pc.width()),
                                    static_cast<std::uint32_t>(pc.bs_antennas())};
    write_raw(out, pdims, sizeof(pdims));
    const std::uint8_t norm = pc.normalize_by_sqrt_q ? 1 : 0;
    write_raw(out, &norm, 1);
    write_cmat(out, pc.phases);
    write_cmat(out, pc.precoders);
  };
  write_pilot(setup.short_configs.front());
  if (!out) throw std::runtime_error("dataset archive: write failure");
}

void write_csv_archive(const std::string& path, const ExperimentConfig& cfg,
                       const PilotSetup& setup) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset archive: cannot open " + path + " for writing");
  const ChannelConfig ch = cfg.channel_config();
  const GroupingOperator* grouping = setup.grouping ? &*setup.grouping : nullptr;
  const int d = cfg.channel_dim();

  out << "region,user,index";
  for (int i = 0; i < d; ++i) out << ",target_re_" << i << ",target_im_" << i;
  out << "\n";
  out.precision(17);

  constexpr int kChunk = 512;
  for (int r = 1; r <= cfg.regions(); ++r) {
    for (int k = 1; k <= cfg.users_per_region; ++k) {
      for (int first = 0; first < cfg.samples_per_user; first += kChunk) {
        const int n = std::min(kChunk, cfg.samples_per_user - first);
        std::vector<ChannelRealization> chunk;
        generate_realizations(ch, grouping, r, k, first, n, cfg.seed, chunk);
        for (int j = 0; j < n; ++j) {
          const auto& cr = chunk[static_cast<std::size_t>(j)];
          out << r << ',' << k << ',' << (first + j);
          const Eigen::MatrixXcd& target = cr.has_grouped() ? cr.grouped : cr.cascaded;
          const auto* data = target.data();
          for (int i = 0; i < d; ++i)
            out << ',' << data[i].real() << ',' << data[i].imag();
          out << "\n";
        }
      }
    }
  }
  if (!out) throw std::runtime_error("dataset archive: write failure");
}

}  // namespace

void write_dataset_archive(const std::string& path, const ExperimentConfig& cfg,
                           const PilotSetup& setup) {
  if (cfg.archive_format == "binary")
    write_binary_archive(path, cfg, setup);
  else
    write_csv_archive(path, cfg, setup);
}

DatasetArchive read_dataset_archive(const std::string& path) {
  // binary sniff: the magic header
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset archive: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  DatasetArchive a;

  if (in && std::memcmp(magic, kBinaryMagic, 8) == 0) {
    read_raw(in, &a.config_hash, 8);
    read_raw(in, &a.seed, 8);
    std::uint8_t grouped = 0, full = 0;
    read_raw(in, &grouped, 1);
    read_raw(in, &full, 1);
    a.grouped = grouped != 0;
    a.store_full = full != 0;
    std::uint32_t dims[6];
    read_raw(in, dims, sizeof(dims));
    const int n = static_cast<int>(dims[3]);
    const int m = static_cast<int>(dims[4]);
    const int width = static_cast<int>(dims[5]);
    std::uint64_t count = 0;
    read_raw(in, &count, 8);
    a.records.resize(count);
    for (auto& rec : a.records) {
      std::uint32_t r = 0, k = 0;
      read_raw(in, &r, 4);
      read_raw(in, &k, 4);
      read_raw(in, &rec.index, 8);
      rec.region = static_cast<int>(r);
      rec.user = static_cast<int>(k);
      Eigen::MatrixXcd target(width, m);
      read_cmat(in, target);
      rec.target = Eigen::Map<const Eigen::VectorXcd>(target.data(), target.size());
      if (a.store_full) {
        rec.bs_ris.resize(n, m);
        read_cmat(in, rec.bs_ris);
        Eigen::MatrixXcd f(n, 1);
        read_cmat(in, f);
        rec.ris_user = f.col(0);
        rec.cascaded.resize(n, m);
        read_cmat(in, rec.cascaded);
      }
    }
    std::uint8_t has_pilots = 0;
    read_raw(in, &has_pilots, 1);
    if (has_pilots) {
      std::uint32_t pdims[5];
      read_raw(in, pdims, sizeof(pdims));
      std::uint8_t norm = 0;
      read_raw(in, &norm, 1);
      a.pilots.phases.resize(pdims[0], pdims[3]);
      read_cmat(in, a.pilots.phases);
      a.pilots.precoders.resize(pdims[0], pdims[4]);
      read_cmat(in, a.pilots.precoders);
      a.pilots.q1 = static_cast<int>(pdims[1]);
      a.pilots.q2 = static_cast<int>(pdims[2]);
      a.pilots.normalize_by_sqrt_q = norm != 0;
      a.has_pilots = true;
    }
    return a;
  }

  // CSV fallback
  in.close();
  std::ifstream csv(path);
  if (!csv) throw std::runtime_error("dataset archive: cannot open " + path);
  std::string line;
  if (!std::getline(csv, line)) throw std::runtime_error("dataset archive: empty CSV");
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 5 || (cols - 3) % 2 != 0) throw std::runtime_error("dataset archive: bad CSV header");
  const Eigen::Index d = static_cast<Eigen::Index>((cols - 3) / 2);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    ArchiveRecord rec;
    rec.target.resize(d);
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    rec.region = std::stoi(cell);
    std::getline(ss, cell, ',');
    rec.user = std::stoi(cell);
    std::getline(ss, cell, ',');
    rec.index = std::stoull(cell);
    for (Eigen::Index i = 0; i < d; ++i) {
      std::getline(ss, cell, ',');
      const double re = std::stod(cell);
      std::getline(ss, cell, ',');
      const double im = std::stod(cell);
      rec.target[i] = {re, im};
    }
    a.records.push_back(std::move(rec));
  }
  return a;
}

}  // namespace riscade
