#include "riscade/estimators.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace riscade {

LsSolver::LsSolver(const Eigen::MatrixXcd& psi) {
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(psi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double smax = s.size() > 0 ? s[0] : 0.0;
  tolerance_ = smax * static_cast<double>(std::max(psi.rows(), psi.cols())) *
               std::numeric_limits<double>::epsilon();
  inv_singular_ = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > tolerance_) {
      inv_singular_[i] = 1.0 / s[i];
      ++rank_;
    }
  }
  u_ = svd.matrixU();
  v_ = svd.matrixV();
}

Eigen::VectorXcd LsSolver::solve(const Eigen::VectorXcd& y) const {
  if (y.size() != u_.rows()) throw std::invalid_argument("LsSolver::solve: length mismatch");
  return v_ * (inv_singular_.asDiagonal() * (u_.adjoint() * y));
}

Eigen::VectorXcd ls_estimate(const Eigen::VectorXcd& y, const Eigen::MatrixXcd& psi) {
  if (y.size() != psi.rows()) throw std::invalid_argument("ls_estimate: dimension mismatch");
  return LsSolver(psi).solve(y);
}

CovarianceModel fit_covariance(const std::vector<Eigen::VectorXcd>& channels, double loading_rel) {
  if (channels.empty()) throw std::invalid_argument("fit_covariance: no samples");
  const Eigen::Index d = channels.front().size();
  Eigen::MatrixXcd cols(d, static_cast<Eigen::Index>(channels.size()));
  for (std::size_t k = 0; k < channels.size(); ++k) {
    if (channels[k].size() != d) throw std::invalid_argument("fit_covariance: ragged samples");
    cols.col(static_cast<Eigen::Index>(k)) = channels[k];
  }
  return fit_covariance(cols, loading_rel);
}

CovarianceModel fit_covariance(const Eigen::MatrixXcd& channel_columns, double loading_rel) {
  const Eigen::Index d = channel_columns.rows();
  const Eigen::Index k = channel_columns.cols();
  if (k < 1) throw std::invalid_argument("fit_covariance: no samples");
  if (loading_rel < 0.0) throw std::invalid_argument("fit_covariance: negative loading");

  CovarianceModel model;
  model.sample_count = k;
  model.matrix = Eigen::MatrixXcd::Zero(d, d);
  model.matrix.selfadjointView<Eigen::Lower>().rankUpdate(channel_columns, 1.0 / k);
  model.matrix = model.matrix.selfadjointView<Eigen::Lower>();  // fill the upper half
  model.loading = loading_rel * model.matrix.real().trace() / static_cast<double>(d);
  model.matrix.diagonal().array() += model.loading;
  return model;
}

MmseSolver::MmseSolver(const Eigen::MatrixXcd& psi, const CovarianceModel& cov, double noise_var) {
  if (psi.cols() != cov.matrix.rows())
    throw std::invalid_argument("MmseSolver: covariance dimension mismatch");
  if (noise_var < 0.0) throw std::invalid_argument("MmseSolver: negative noise variance");

  const Eigen::MatrixXcd psi_c = psi * cov.matrix;  // Q x D
  Eigen::MatrixXcd inner = psi_c * psi.adjoint();   // Psi C Psi^H
  inner = ((inner + inner.adjoint()) * 0.5).eval(); // keep it Hermitian
  inner.diagonal().array() += noise_var;

  if (noise_var > 0.0) {
    Eigen::LLT<Eigen::MatrixXcd> llt(inner);
    if (llt.info() == Eigen::Success) {
      gain_ = llt.solve(psi_c).adjoint();  // (A^-1 Psi C)^H = C Psi^H A^-1
      return;
    }
  }
  // Noiseless or numerically singular inner matrix: pseudoinverse solve.
  LsSolver pinv(inner);
  Eigen::MatrixXcd x(inner.rows(), psi_c.cols());
  for (Eigen::Index j = 0; j < psi_c.cols(); ++j) x.col(j) = pinv.solve(psi_c.col(j));
  gain_ = x.adjoint();
}

Eigen::VectorXcd mmse_estimate(const Eigen::VectorXcd& y, const Eigen::MatrixXcd& psi,
                               const CovarianceModel& cov, double noise_var) {
  if (y.size() != psi.rows()) throw std::invalid_argument("mmse_estimate: dimension mismatch");
  return MmseSolver(psi, cov, noise_var).solve(y);
}

double nmse(const Eigen::VectorXcd& estimate, const Eigen::VectorXcd& truth) {
  if (estimate.size() != truth.size()) throw std::invalid_argument("nmse: length mismatch");
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw std::invalid_argument("nmse: zero truth");
  return (estimate - truth).squaredNorm() / denom;
}

double nmse_db(double nmse_value) {
  if (nmse_value < 0.0) throw std::invalid_argument("nmse_db: negative value");
  if (nmse_value == 0.0) return kNmseDbFloor;
  return std::max(kNmseDbFloor, 10.0 * std::log10(nmse_value));
}

IdentifiabilityReport identifiability_report(const Eigen::MatrixXcd& psi) {
  IdentifiabilityReport rep;
  rep.rows = psi.rows();
  rep.cols = psi.cols();
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(psi);
  const Eigen::VectorXd& s = svd.singularValues();
  rep.max_singular = s.size() > 0 ? s[0] : 0.0;
  rep.rank_tolerance = rep.max_singular * static_cast<double>(std::max(psi.rows(), psi.cols())) *
                       std::numeric_limits<double>::epsilon();
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > rep.rank_tolerance) ++rep.rank;
  rep.underdetermined = rep.rank < rep.cols;
  if (!rep.underdetermined && rep.rank > 0) {
    const double smin = s[rep.rank - 1];
    const double ratio = rep.max_singular / smin;
    rep.gram_condition = ratio * ratio;
  } else {
    rep.gram_condition = std::numeric_limits<double>::infinity();
  }
  return rep;
}

}  // namespace riscade
