#include "riscade/pilots.hpp"

#include <cmath>
#include <stdexcept>

namespace riscade {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;

// Sylvester-Hadamard entry (r, c) of the 2^k matrix: parity of r & c.
double hadamard_entry(int r, int c) { return (__builtin_popcount(r & c) & 1) ? -1.0 : 1.0; }

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

Eigen::MatrixXcd haar_unitary(int m, Rng& rng) {
  Eigen::MatrixXcd a(m, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) a(i, j) = rng.cgauss();
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(a);
  Eigen::MatrixXcd q = qr.householderQ() * Eigen::MatrixXcd::Identity(m, m);
  const Eigen::MatrixXcd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < m; ++j) {
    const std::complex<double> d = r(j, j);
    const double mag = std::abs(d);
    if (mag > 0) q.col(j) *= d / mag;
  }
  return q;
}
}  // namespace

Eigen::MatrixXd GroupingOperator::matrix() const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(num_groups, static_cast<int>(group_of.size()));
  for (int n = 0; n < static_cast<int>(group_of.size()); ++n) s(group_of[n], n) = 1.0;
  return s;
}

Eigen::MatrixXcd GroupingOperator::apply(const Eigen::MatrixXcd& h) const {
  if (h.rows() != static_cast<Eigen::Index>(group_of.size()))
    throw std::invalid_argument("GroupingOperator::apply: row count mismatch");
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(num_groups, h.cols());
  for (int n = 0; n < static_cast<int>(group_of.size()); ++n) out.row(group_of[n]) += h.row(n);
  return out;
}

Eigen::VectorXcd GroupingOperator::expand(const Eigen::VectorXcd& bar) const {
  if (bar.size() != num_groups) throw std::invalid_argument("GroupingOperator::expand: size mismatch");
  Eigen::VectorXcd full(static_cast<Eigen::Index>(group_of.size()));
  for (int n = 0; n < static_cast<int>(group_of.size()); ++n) full[n] = bar[group_of[n]];
  return full;
}

GroupingOperator make_grouping(const ArrayGeometry& ris_geom, int group_size) {
  ris_geom.validate();
  const int n = ris_geom.total();
  if (group_size < 1 || n % group_size != 0)
    throw std::invalid_argument("make_grouping: group_size must divide the element count");

  // Pick block dimensions gr x gc = group_size tiling the grid, preferring
  // the most nearly square feasible pair (larger row extent on ties).
  int best_gr = -1, best_gc = -1;
  for (int gr = 1; gr <= group_size; ++gr) {
    if (group_size % gr != 0) continue;
    const int gc = group_size / gr;
    if (ris_geom.rows % gr != 0 || ris_geom.cols % gc != 0) continue;
    if (best_gr < 0 || std::abs(gr - gc) < std::abs(best_gr - best_gc) ||
        (std::abs(gr - gc) == std::abs(best_gr - best_gc) && gr > best_gr)) {
      best_gr = gr;
      best_gc = gc;
    }
  }
  if (best_gr < 0) throw std::invalid_argument("make_grouping: group_size does not tile the RIS grid");

  GroupingOperator op;
  op.group_size = group_size;
  op.num_groups = n / group_size;
  op.group_of.resize(n);
  const int block_rows = ris_geom.rows / best_gr;
  for (int e = 0; e < n; ++e) {
    const int row = e % ris_geom.rows;
    const int col = e / ris_geom.rows;
    op.group_of[e] = (col / best_gc) * block_rows + (row / best_gr);
  }
  return op;
}

Eigen::MatrixXcd gen_pilots(int q, int width, PilotAlphabet alphabet, Rng& rng) {
  if (q < 1 || width < 1) throw std::invalid_argument("gen_pilots: q and width must be >= 1");
  Eigen::MatrixXcd theta(q, width);
  for (int i = 0; i < q; ++i) {
    for (int j = 0; j < width; ++j) {
      theta(i, j) = alphabet == PilotAlphabet::kPm1
                        ? std::complex<double>(rng.pm1(), 0.0)
                        : std::polar(1.0, rng.uniform(0.0, kTwoPi));
    }
  }
  return theta;
}

Eigen::MatrixXcd gen_orthogonal_pilots(int q, int width, PilotAlphabet alphabet, Rng& rng) {
  if (q < 1 || width < 1)
    throw std::invalid_argument("gen_orthogonal_pilots: q and width must be >= 1");
  const bool use_hadamard = alphabet == PilotAlphabet::kPm1 && is_power_of_two(width);
  Eigen::MatrixXcd theta(q, width);
  int slot = 0;
  while (slot < q) {
    std::vector<std::complex<double>> scramble(width);
    std::vector<int> perm(width);
    for (int j = 0; j < width; ++j) {
      scramble[j] = alphabet == PilotAlphabet::kPm1 ? std::complex<double>(rng.pm1(), 0.0)
                                                    : std::polar(1.0, rng.uniform(0.0, kTwoPi));
      perm[j] = j;
    }
    for (int j = width - 1; j > 0; --j)
      std::swap(perm[j], perm[static_cast<int>(rng.below(j + 1))]);

    for (int row = 0; row < width && slot < q; ++row, ++slot) {
      const int src = perm[row];
      for (int col = 0; col < width; ++col) {
        const std::complex<double> base =
            use_hadamard ? std::complex<double>(hadamard_entry(src, col), 0.0)
                         : std::polar(1.0, -kTwoPi * src * col / width);  // DFT row
        theta(slot, col) = base * scramble[col];
      }
    }
  }
  return theta;
}

Eigen::VectorXcd random_unit_precoder(int m, Rng& rng) {
  Eigen::VectorXcd w(m);
  for (int i = 0; i < m; ++i) w[i] = rng.cgauss();
  return w / w.norm();
}

bool PilotConfig::fixed_precoder() const {
  for (Eigen::Index i = 1; i < precoders.rows(); ++i)
    if (precoders.row(i) != precoders.row(0)) return false;
  return true;
}

void PilotConfig::validate() const {
  if (phases.rows() < 1 || phases.cols() < 1) throw std::invalid_argument("PilotConfig: empty phases");
  if (q1 * q2 != q()) throw std::invalid_argument("PilotConfig: q1*q2 must equal Q");
  if (precoders.rows() != phases.rows())
    throw std::invalid_argument("PilotConfig: one precoder row per slot required");
  for (Eigen::Index i = 0; i < phases.rows(); ++i)
    for (Eigen::Index j = 0; j < phases.cols(); ++j)
      if (std::abs(std::abs(phases(i, j)) - 1.0) > 1e-12)
        throw std::invalid_argument("PilotConfig: phases must be unit modulus");
  for (Eigen::Index i = 0; i < precoders.rows(); ++i)
    if (std::abs(precoders.row(i).norm() - 1.0) > 1e-12)
      throw std::invalid_argument("PilotConfig: precoders must be unit norm");
  if (grouping && grouping->num_groups != width())
    throw std::invalid_argument("PilotConfig: phase width must match group count");
}

PilotConfig make_pilot_config(int q, int q1, int q2, int width, int bs_antennas,
                              PilotAlphabet alphabet, PrecoderSchedule schedule,
                              bool normalize_by_sqrt_q, std::optional<GroupingOperator> grouping,
                              Rng& rng) {
  PilotConfig cfg;
  cfg.q1 = q1;
  cfg.q2 = q2;
  cfg.normalize_by_sqrt_q = normalize_by_sqrt_q;
  cfg.grouping = std::move(grouping);
  cfg.phases = schedule == PrecoderSchedule::kOrthogonalBlocks
                   ? gen_orthogonal_pilots(q, width, alphabet, rng)
                   : gen_pilots(q, width, alphabet, rng);
  cfg.precoders.resize(q, bs_antennas);
  switch (schedule) {
    case PrecoderSchedule::kFixed: {
      const Eigen::VectorXcd w = random_unit_precoder(bs_antennas, rng);
      cfg.precoders.rowwise() = w.transpose();
      break;
    }
    case PrecoderSchedule::kPerSlot: {
      for (int i = 0; i < q; ++i)
        cfg.precoders.row(i) = random_unit_precoder(bs_antennas, rng).transpose();
      break;
    }
    case PrecoderSchedule::kOrthogonalBlocks: {
      const Eigen::MatrixXcd basis = haar_unitary(bs_antennas, rng);
      for (int i = 0; i < q; ++i)
        cfg.precoders.row(i) = basis.col((i / width) % bs_antennas).transpose();
      break;
    }
  }
  cfg.validate();
  return cfg;
}

Eigen::MatrixXcd measurement_matrix(const PilotConfig& config) {
  const int q = config.q();
  const int width = config.width();
  const int m = config.bs_antennas();
  Eigen::MatrixXcd psi(q, static_cast<Eigen::Index>(width) * m);
  for (int col = 0; col < m; ++col)
    psi.middleCols(static_cast<Eigen::Index>(col) * width, width) =
        config.precoders.col(col).asDiagonal() * config.phases;
  return psi;
}

Eigen::VectorXcd observe_vec(const Eigen::VectorXcd& h, const PilotConfig& config,
                             double snr_linear, Rng& rng) {
  const int width = config.width();
  const int m = config.bs_antennas();
  if (h.size() != static_cast<Eigen::Index>(width) * m)
    throw std::invalid_argument("observe_vec: channel length mismatch");
  if (!(snr_linear > 0.0)) throw std::invalid_argument("observe_vec: snr_linear must be positive");

  const Eigen::Map<const Eigen::MatrixXcd> hc(h.data(), width, m);
  // y[q] = phases.row(q) * Hc * precoders.row(q)^T, slot by slot.
  Eigen::VectorXcd y(config.q());
  const Eigen::MatrixXcd hm = config.phases * hc;  // Q x M
  for (int i = 0; i < config.q(); ++i)
    y[i] = hm.row(i).cwiseProduct(config.precoders.row(i)).sum();
  if (std::isfinite(snr_linear)) {
    const double sigma = std::sqrt(1.0 / snr_linear);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += sigma * rng.cgauss();
  }
  return y;
}

Observation observe(const ChannelRealization& realization, const PilotConfig& config,
                    double snr_linear, Rng& rng) {
  const bool want_grouped = config.grouping.has_value();
  if (want_grouped != realization.has_grouped())
    throw std::invalid_argument("observe: grouping presence mismatch between config and realization");
  const Eigen::MatrixXcd& hc = want_grouped ? realization.grouped : realization.cascaded;
  if (hc.rows() != config.width() || hc.cols() != config.precoders.cols())
    throw std::invalid_argument("observe: channel dimensions do not match the pilot config");

  Observation obs;
  obs.snr_linear = snr_linear;
  obs.truth = &realization;
  const Eigen::Map<const Eigen::VectorXcd> h(hc.data(), hc.size());
  obs.raw = observe_vec(h, config, snr_linear, rng);
  obs.q1 = config.q1;
  obs.q2 = config.q2;
  if (config.normalize_by_sqrt_q) {
    const double s = 1.0 / std::sqrt(static_cast<double>(config.q()));
    obs.tensor = encode_tensor(obs.raw * s, config.q1, config.q2);
  } else {
    obs.tensor = encode_tensor(obs.raw, config.q1, config.q2);
  }
  return obs;
}

std::vector<double> encode_tensor(const Eigen::VectorXcd& raw, int q1, int q2) {
  if (static_cast<Eigen::Index>(q1) * q2 != raw.size())
    throw std::invalid_argument("encode_tensor: q1*q2 must equal the vector length");
  std::vector<double> t(static_cast<std::size_t>(q1) * q2 * 2);
  for (Eigen::Index n = 0; n < raw.size(); ++n) {
    t[2 * n + 0] = raw[n].real();
    t[2 * n + 1] = raw[n].imag();
  }
  return t;
}

Eigen::VectorXcd decode_tensor(const std::vector<double>& tensor, int q1, int q2) {
  if (tensor.size() != static_cast<std::size_t>(q1) * q2 * 2)
    throw std::invalid_argument("decode_tensor: size mismatch");
  Eigen::VectorXcd raw(static_cast<Eigen::Index>(q1) * q2);
  for (Eigen::Index n = 0; n < raw.size(); ++n) raw[n] = {tensor[2 * n], tensor[2 * n + 1]};
  return raw;
}

}  // namespace riscade
