#ifndef RISCADE_PILOTS_HPP
#define RISCADE_PILOTS_HPP

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "riscade/channel.hpp"
#include "riscade/rng.hpp"

namespace riscade {

// 0/1 selection matrix tying g physical RIS elements to one control unit.
// Stored as the element->group assignment; groups are contiguous gr x gc
// blocks on the RIS grid (element n sits at row n % rows, col n / rows).
struct GroupingOperator {
  std::vector<int> group_of;  // size N, values in [0, num_groups)
  int num_groups = 0;         // N'
  int group_size = 1;         // g

  Eigen::MatrixXd matrix() const;                              // N' x N dense 0/1
  Eigen::MatrixXcd apply(const Eigen::MatrixXcd& h) const;     // S * H
  Eigen::VectorXcd expand(const Eigen::VectorXcd& bar) const;  // S^T * phi_bar
};

// Builds the spatial grouping for the given RIS grid. group_size must
// divide the element count and factor into block dimensions that tile the
// grid (4 -> 2x2 blocks on an 8x8 grid). Throws std::invalid_argument
// otherwise.
GroupingOperator make_grouping(const ArrayGeometry& ris_geom, int group_size);

enum class PilotAlphabet { kPm1, kUnitCircle };

// How the BS precoder evolves over the pilot slots.
//
// A precoder held fixed across slots (the quasi-static reading) caps the
// stacked measurement rank at the phase-matrix width, leaving everything
// outside the w-projection of the channel unobservable. Slot-varying
// precoders restore rank min(Q, width*M); the orthogonal-block schedule
// additionally makes the Gram matrix exactly (Q/M) * I when Q = width*M,
// which is what the label and high-budget baseline budgets use.
enum class PrecoderSchedule { kFixed, kPerSlot, kOrthogonalBlocks };

// Random unit-modulus phase matrix, Q x width. Row q holds the conjugated
// phase pattern of slot q, so the stacked model y = Theta * (H w) equals
// the per-slot evaluation phi_q^H H w with phi_q = conj(row q).
Eigen::MatrixXcd gen_pilots(int q, int width, PilotAlphabet alphabet, Rng& rng);

// Random point on the complex unit sphere in C^m.
Eigen::VectorXcd random_unit_precoder(int m, Rng& rng);

// Pilot-session configuration: unit-modulus phase matrix, unit-norm
// per-slot precoders, and the tensor stacking shape.
struct PilotConfig {
  Eigen::MatrixXcd phases;     // Q x width (width = N or N')
  Eigen::MatrixXcd precoders;  // Q x M, row q = w_q^T; all rows equal under kFixed
  int q1 = 0, q2 = 0;          // q1 * q2 == Q
  std::optional<GroupingOperator> grouping;
  bool normalize_by_sqrt_q = true;

  int q() const { return static_cast<int>(phases.rows()); }
  int width() const { return static_cast<int>(phases.cols()); }
  int bs_antennas() const { return static_cast<int>(precoders.cols()); }
  // The fixed precoder w (row 0); meaningful under kFixed.
  Eigen::VectorXcd precoder() const { return precoders.row(0).transpose(); }
  bool fixed_precoder() const;
  void validate() const;
};

// Assembles a pilot configuration from fresh random draws.
PilotConfig make_pilot_config(int q, int q1, int q2, int width, int bs_antennas,
                              PilotAlphabet alphabet, PrecoderSchedule schedule,
                              bool normalize_by_sqrt_q, std::optional<GroupingOperator> grouping,
                              Rng& rng);

// Sign-scrambled Hadamard rows (pm1 alphabet, width a power of two) or
// scrambled DFT rows (otherwise), in blocks of `width` slots; exactly
// orthogonal within each block.
Eigen::MatrixXcd gen_orthogonal_pilots(int q, int width, PilotAlphabet alphabet, Rng& rng);

// Real two-channel tensor view of a complex pilot vector, plus the raw
// (unscaled) observation for the classical estimators.
struct Observation {
  Eigen::VectorXcd raw;        // length Q, unscaled
  std::vector<double> tensor;  // q1 x q2 x 2, row-major (i, j, ch)
  int q1 = 0, q2 = 0;
  double snr_linear = 0.0;
  const ChannelRealization* truth = nullptr;
};

// Psi[q, m*width + n] = precoders(q, m) * phases(q, n); equals the
// Kronecker product w^T kron Theta when the precoder is fixed. Column
// ordering is consistent with vec() stacking the columns of H.
Eigen::MatrixXcd measurement_matrix(const PilotConfig& config);

// y[q] = phases.row(q) * Hc * precoders.row(q)^T + n[q], i.e.
// y = Psi vec(Hc) + n, with Hc the grouped channel when the config
// carries a grouping (which must match the realization) and the cascaded
// channel otherwise. Noise iid CN(0, 1/snr_linear); snr_linear may be
// +infinity for a noiseless observation. The tensor encodes raw / sqrt(Q)
// when normalize_by_sqrt_q is set, raw otherwise.
Observation observe(const ChannelRealization& realization, const PilotConfig& config,
                    double snr_linear, Rng& rng);

// Same observation model applied directly to a vectorized channel.
Eigen::VectorXcd observe_vec(const Eigen::VectorXcd& h, const PilotConfig& config,
                             double snr_linear, Rng& rng);

// Row-major reshape of raw to q1 x q2; channel 0 real, channel 1 imaginary.
std::vector<double> encode_tensor(const Eigen::VectorXcd& raw, int q1, int q2);

// Inverse of encode_tensor.
Eigen::VectorXcd decode_tensor(const std::vector<double>& tensor, int q1, int q2);

}  // namespace riscade

#endif  // RISCADE_PILOTS_HPP
