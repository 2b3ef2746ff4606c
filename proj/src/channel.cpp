#include "riscade/channel.hpp"

#include <cmath>
#include <stdexcept>

#include "riscade/pilots.hpp"

namespace riscade {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kHalfPi = kPi / 2.0;
}  // namespace

void ArrayGeometry::validate() const {
  if (rows < 1 || cols < 1) throw std::invalid_argument("ArrayGeometry: rows and cols must be >= 1");
  if (!(spacing_over_wavelength > 0.0))
    throw std::invalid_argument("ArrayGeometry: spacing_over_wavelength must be positive");
}

RegionPartition RegionPartition::from_interior_boundaries(const std::vector<double>& interior) {
  RegionPartition p;
  p.edges_.reserve(interior.size() + 2);
  p.edges_.push_back(-kHalfPi);
  double prev = -kHalfPi;
  for (double b : interior) {
    if (!(b > prev) || !(b < kHalfPi))
      throw std::invalid_argument("RegionPartition: boundaries must be strictly ascending inside (-pi/2, pi/2)");
    p.edges_.push_back(b);
    prev = b;
  }
  p.edges_.push_back(kHalfPi);
  return p;
}

RegionPartition RegionPartition::single_region() { return from_interior_boundaries({}); }

std::pair<double, double> RegionPartition::interval(int region) const {
  if (region < 1 || region > count()) throw std::invalid_argument("RegionPartition: region out of range");
  return {edges_[region - 1], edges_[region]};
}

int RegionPartition::region_of(double elevation) const {
  if (!(elevation > -kHalfPi) || !(elevation < kHalfPi))
    throw std::invalid_argument("region_of: elevation outside (-pi/2, pi/2)");
  for (int r = 1; r < count(); ++r) {
    if (elevation <= edges_[r]) return r;
  }
  return count();
}

Eigen::VectorXcd steering_vector(const ArrayGeometry& geom, double azimuth, double elevation) {
  geom.validate();
  if (!std::isfinite(azimuth) || !std::isfinite(elevation))
    throw std::invalid_argument("steering_vector: angles must be finite");

  const double step = -2.0 * kPi * geom.spacing_over_wavelength;
  const double row_phase = step * std::cos(elevation);
  const double col_phase = step * std::sin(elevation) * std::cos(azimuth);

  const int n = geom.total();
  Eigen::VectorXcd a(n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int c = 0; c < geom.cols; ++c) {
    for (int r = 0; r < geom.rows; ++r) {
      const double phase = col_phase * c + row_phase * r;
      a[c * geom.rows + r] = std::polar(scale, phase);
    }
  }
  return a;
}

PathSet draw_paths(int count, std::pair<double, double> elevation_interval, Rng& rng,
                   bool two_ended) {
  if (count < 1) throw std::invalid_argument("draw_paths: count must be >= 1");
  const auto [lo, hi] = elevation_interval;
  if (!(lo < hi) || lo < -kHalfPi - 1e-12 || hi > kHalfPi + 1e-12)
    throw std::invalid_argument("draw_paths: empty or out-of-range elevation interval");

  PathSet p;
  p.gains.resize(count);
  p.azimuth.resize(count);
  p.elevation.resize(count);
  if (two_ended) {
    p.dep_azimuth.resize(count);
    p.dep_elevation.resize(count);
  }
  for (int l = 0; l < count; ++l) {
    p.gains[l] = rng.cgauss();
    p.azimuth[l] = rng.uniform(-kHalfPi, kHalfPi);
    p.elevation[l] = rng.uniform(lo, hi);
    if (two_ended) {
      p.dep_azimuth[l] = rng.uniform(-kHalfPi, kHalfPi);
      p.dep_elevation[l] = rng.uniform(-kHalfPi, kHalfPi);
    }
  }
  return p;
}

Eigen::MatrixXcd gen_bs_ris(const ArrayGeometry& ris_geom, const ArrayGeometry& bs_geom,
                            const PathSet& paths) {
  if (!paths.two_ended()) throw std::invalid_argument("gen_bs_ris: paths need departure angles");
  const int n = ris_geom.total();
  const int m = bs_geom.total();
  Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(n, m);
  for (int l = 0; l < paths.count(); ++l) {
    const Eigen::VectorXcd a = steering_vector(ris_geom, paths.azimuth[l], paths.elevation[l]);
    const Eigen::VectorXcd b = steering_vector(bs_geom, paths.dep_azimuth[l], paths.dep_elevation[l]);
    g.noalias() += paths.gains[l] * a * b.adjoint();
  }
  g *= std::sqrt(static_cast<double>(m) * n / paths.count());
  return g;
}

Eigen::VectorXcd gen_ris_user(const ArrayGeometry& ris_geom, const PathSet& paths) {
  const int n = ris_geom.total();
  Eigen::VectorXcd f = Eigen::VectorXcd::Zero(n);
  for (int l = 0; l < paths.count(); ++l) {
    f += paths.gains[l] * steering_vector(ris_geom, paths.azimuth[l], paths.elevation[l]);
  }
  f *= std::sqrt(static_cast<double>(n) / paths.count());
  return f;
}

Eigen::MatrixXcd cascade(const Eigen::MatrixXcd& g, const Eigen::VectorXcd& f) {
  if (g.rows() != f.size()) throw std::invalid_argument("cascade: dimension mismatch");
  return f.conjugate().asDiagonal() * g;
}

void ChannelConfig::validate() const {
  bs.validate();
  ris.validate();
  if (paths_bs_ris < 1 || paths_ris_user < 1)
    throw std::invalid_argument("ChannelConfig: path counts must be >= 1");
  if (users_per_region < 1) throw std::invalid_argument("ChannelConfig: users_per_region must be >= 1");
}

void generate_realizations(const ChannelConfig& config, const GroupingOperator* grouping,
                           int region, int user, int first, int count, std::uint64_t seed,
                           std::vector<ChannelRealization>& out) {
  config.validate();
  if (region < 1 || region > config.regions.count())
    throw std::invalid_argument("generate_realizations: region out of range");
  if (user < 1 || user > config.users_per_region)
    throw std::invalid_argument("generate_realizations: user out of range");

  const Rng root(seed);
  const auto region_interval = config.regions.interval(region);

  Eigen::MatrixXcd frozen_g;
  if (config.freeze_bs_ris) {
    Rng g_rng = root.split(kTagFrozenBsRis);
    const PathSet pg = draw_paths(config.paths_bs_ris, full_elevation_range(), g_rng, true);
    frozen_g = gen_bs_ris(config.ris, config.bs, pg);
  }

  out.reserve(out.size() + count);
  for (int i = first; i < first + count; ++i) {
    Rng rng = root.split(kTagPaths, region, user, i);
    ChannelRealization cr;
    cr.region = region;
    cr.user_index = user;
    if (config.freeze_bs_ris) {
      Rng g_rng = root.split(kTagFrozenBsRis);
      cr.paths_g = draw_paths(config.paths_bs_ris, full_elevation_range(), g_rng, true);
      cr.bs_ris = frozen_g;
    } else {
      cr.paths_g = draw_paths(config.paths_bs_ris, full_elevation_range(), rng, true);
      cr.bs_ris = gen_bs_ris(config.ris, config.bs, cr.paths_g);
    }
    cr.paths_f = draw_paths(config.paths_ris_user, region_interval, rng, false);
    cr.ris_user = gen_ris_user(config.ris, cr.paths_f);
    cr.cascaded = cascade(cr.bs_ris, cr.ris_user);
    if (grouping != nullptr) cr.grouped = grouping->apply(cr.cascaded);
    out.push_back(std::move(cr));
  }
}

std::vector<ChannelRealization> generate_dataset(const ChannelConfig& config,
                                                 const GroupingOperator* grouping,
                                                 int samples_per_user, std::uint64_t seed) {
  std::vector<ChannelRealization> all;
  all.reserve(static_cast<std::size_t>(config.regions.count()) * config.users_per_region *
              samples_per_user);
  for (int r = 1; r <= config.regions.count(); ++r) {
    for (int k = 1; k <= config.users_per_region; ++k) {
      generate_realizations(config, grouping, r, k, 0, samples_per_user, seed, all);
    }
  }
  return all;
}

}  // namespace riscade
