#ifndef RISCADE_ESTIMATORS_HPP
#define RISCADE_ESTIMATORS_HPP

#include <Eigen/Dense>
#include <vector>

namespace riscade {

// Minimum-norm least-squares solver over a fixed measurement matrix.
// Factorizes once (thin SVD) so batches of right-hand sides cost two
// matrix-vector products each. Numerical rank uses the standard rule
// tol = sigma_max * max(rows, cols) * machine_epsilon.
class LsSolver {
 public:
  explicit LsSolver(const Eigen::MatrixXcd& psi);

  Eigen::VectorXcd solve(const Eigen::VectorXcd& y) const;
  int rank() const { return rank_; }
  double rank_tolerance() const { return tolerance_; }

 private:
  Eigen::MatrixXcd u_, v_;        // thin factors
  Eigen::VectorXd inv_singular_;  // 1/sigma_i for i < rank, 0 beyond
  int rank_ = 0;
  double tolerance_ = 0.0;
};

// (Psi^H Psi)^-1 Psi^H y when Psi has full column rank; the Moore-Penrose
// pseudoinverse (minimum-norm) solution otherwise.
Eigen::VectorXcd ls_estimate(const Eigen::VectorXcd& y, const Eigen::MatrixXcd& psi);

// Zero-mean sample covariance with relative diagonal loading.
struct CovarianceModel {
  Eigen::MatrixXcd matrix;  // D x D Hermitian PSD (after loading)
  long sample_count = 0;
  double loading = 0.0;     // absolute diagonal term added

  int dim() const { return static_cast<int>(matrix.rows()); }
};

// C = (1/K) sum_k h_k h_k^H + loading_rel * (trace(C)/D) * I.
// Throws on an empty sample set.
CovarianceModel fit_covariance(const std::vector<Eigen::VectorXcd>& channels,
                               double loading_rel = 1e-6);
// Same, with samples as the columns of a D x K matrix.
CovarianceModel fit_covariance(const Eigen::MatrixXcd& channel_columns,
                               double loading_rel = 1e-6);

// Linear MMSE gain for a fixed (Psi, C, sigma^2): hhat = C Psi^H
// (Psi C Psi^H + sigma^2 I)^-1 y, computed through a Hermitian
// positive-definite solve. With sigma^2 = 0 and a rank-deficient inner
// matrix the solve falls back to the pseudoinverse.
class MmseSolver {
 public:
  MmseSolver(const Eigen::MatrixXcd& psi, const CovarianceModel& cov, double noise_var);

  Eigen::VectorXcd solve(const Eigen::VectorXcd& y) const { return gain_ * y; }
  const Eigen::MatrixXcd& gain() const { return gain_; }

 private:
  Eigen::MatrixXcd gain_;  // D x Q
};

Eigen::VectorXcd mmse_estimate(const Eigen::VectorXcd& y, const Eigen::MatrixXcd& psi,
                               const CovarianceModel& cov, double noise_var);

// ||estimate - truth||^2 / ||truth||^2. Throws on zero truth.
double nmse(const Eigen::VectorXcd& estimate, const Eigen::VectorXcd& truth);

// dB with the documented -300 dB floor for a zero ratio.
double nmse_db(double nmse_value);

inline constexpr double kNmseDbFloor = -300.0;

struct IdentifiabilityReport {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  int rank = 0;
  bool underdetermined = false;    // rank < cols
  double max_singular = 0.0;
  double rank_tolerance = 0.0;
  // 2-norm condition of Psi^H Psi when full column rank, else +inf.
  double gram_condition = 0.0;
};

IdentifiabilityReport identifiability_report(const Eigen::MatrixXcd& psi);

}  // namespace riscade

#endif  // RISCADE_ESTIMATORS_HPP
