#ifndef RISCADE_CHANNEL_HPP
#define RISCADE_CHANNEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "riscade/rng.hpp"

namespace riscade {

// Uniform planar array. Element n of the array maps to grid position
// (row n1, col n2) with n = n2 * rows + n1, matching the Kronecker order
// of the steering vector (cols-indexed ramp kron rows-indexed ramp).
struct ArrayGeometry {
  int rows = 1;
  int cols = 1;
  double spacing_over_wavelength = 0.5;

  int total() const { return rows * cols; }
  void validate() const;  // throws std::invalid_argument
};

// One multipath cluster set. azimuth/elevation are the arrival angles at
// the array (for a BS-RIS channel they are the AoA at the RIS, and
// dep_azimuth/dep_elevation hold the AoD at the BS; both empty for
// single-ended channels).
struct PathSet {
  std::vector<std::complex<double>> gains;
  std::vector<double> azimuth;
  std::vector<double> elevation;
  std::vector<double> dep_azimuth;
  std::vector<double> dep_elevation;

  int count() const { return static_cast<int>(gains.size()); }
  bool two_ended() const { return !dep_azimuth.empty(); }
};

// Ordered, disjoint elevation intervals covering (-pi/2, pi/2).
// Region indices are 1-based throughout the public API.
class RegionPartition {
 public:
  // interior_boundaries strictly ascending inside (-pi/2, pi/2); the
  // resulting partition has interior_boundaries.size() + 1 regions.
  static RegionPartition from_interior_boundaries(const std::vector<double>& interior_boundaries);
  static RegionPartition single_region();

  int count() const { return static_cast<int>(edges_.size()) - 1; }
  // Open-at-left interval (lo, hi] of 1-based region r; the last interval
  // is open at both ends by construction of the domain.
  std::pair<double, double> interval(int region) const;
  // 1-based index of the containing interval; boundary points go to the
  // lower-indexed interval. Throws on elevation outside (-pi/2, pi/2).
  int region_of(double elevation) const;

  const std::vector<double>& edges() const { return edges_; }

 private:
  std::vector<double> edges_;  // size count()+1, edges_[0] = -pi/2, back() = pi/2
};

// One draw of the BS-RIS link G, the RIS-user link f, the cascaded
// channel H = diag(f^H) G and, when a grouping operator is in play, the
// grouped channel S H.
struct ChannelRealization {
  Eigen::MatrixXcd bs_ris;    // G, N x M
  Eigen::VectorXcd ris_user;  // f, N
  Eigen::MatrixXcd cascaded;  // H, N x M
  Eigen::MatrixXcd grouped;   // S H, N' x M; empty when ungrouped
  int region = 1;             // 1-based
  int user_index = 1;         // 1-based
  PathSet paths_g;
  PathSet paths_f;

  bool has_grouped() const { return grouped.size() > 0; }
};

// UPA steering vector, unit Euclidean norm. Element n = n2*rows + n1 gets
// phase -2*pi*(d/lambda) * (n2 * sin(el)*cos(az) + n1 * cos(el)).
Eigen::VectorXcd steering_vector(const ArrayGeometry& geom, double azimuth, double elevation);

// Draws `count` paths: gains iid CN(0,1), azimuths uniform on
// (-pi/2, pi/2), arrival elevations uniform on elevation_interval.
// With two_ended, also draws departure angles (azimuth and elevation both
// full range). Throws on an empty interval.
PathSet draw_paths(int count, std::pair<double, double> elevation_interval, Rng& rng,
                   bool two_ended = false);

inline std::pair<double, double> full_elevation_range() {
  return {-1.5707963267948966, 1.5707963267948966};
}

// G = sqrt(M*N/L) * sum_l gain_l * a(arrival_l) b(departure_l)^H.
Eigen::MatrixXcd gen_bs_ris(const ArrayGeometry& ris_geom, const ArrayGeometry& bs_geom,
                            const PathSet& paths);

// f = sqrt(N/L) * sum_l gain_l * a(azimuth_l, elevation_l).
Eigen::VectorXcd gen_ris_user(const ArrayGeometry& ris_geom, const PathSet& paths);

// H[n, m] = conj(f[n]) * G[n, m].
Eigen::MatrixXcd cascade(const Eigen::MatrixXcd& g, const Eigen::VectorXcd& f);

struct GroupingOperator;  // pilots.hpp

// Channel-synthesis slice of the experiment configuration.
struct ChannelConfig {
  ArrayGeometry bs;
  ArrayGeometry ris;
  int paths_bs_ris = 3;
  int paths_ris_user = 3;
  RegionPartition regions = RegionPartition::single_region();
  int users_per_region = 1;
  bool freeze_bs_ris = false;  // one G per dataset instead of per sample

  void validate() const;
};

// Realizations for samples [first, first+count) of user (region, user),
// appended to `out`. A pure function of (config, seed, indices): any
// chunking of the index range yields identical samples. 1-based region
// and user.
void generate_realizations(const ChannelConfig& config, const GroupingOperator* grouping,
                           int region, int user, int first, int count, std::uint64_t seed,
                           std::vector<ChannelRealization>& out);

// All samples for every (region, user), ordered by region, then user,
// then sample index.
std::vector<ChannelRealization> generate_dataset(const ChannelConfig& config,
                                                 const GroupingOperator* grouping,
                                                 int samples_per_user, std::uint64_t seed);

}  // namespace riscade

#endif  // RISCADE_CHANNEL_HPP
