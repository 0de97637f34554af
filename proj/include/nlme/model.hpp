#ifndef NLME_MODEL_HPP
#define NLME_MODEL_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "nlme/errors.hpp"
#include "nlme/structural.hpp"

namespace nlme {

/// Point in the transformed coordinates where the prior is Gaussian:
/// phi_l = psi_l for identity coordinates and phi_l = log psi_l for log ones.
using LatentPoint = Vector;

enum class Transform { identity, log };

inline const char* to_string(Transform t) { return t == Transform::log ? "log" : "identity"; }

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Zero-based index of the first non-positive Cholesky pivot of a symmetric
/// matrix, or -1 if the matrix is positive definite.
inline Index first_failing_pivot(const Matrix& a) {
  for (Index k = 1; k <= a.rows(); ++k) {
    Eigen::LLT<Matrix> llt(a.topLeftCorner(k, k));
    if (llt.info() != Eigen::Success) return k - 1;
  }
  return -1;
}

/// Population parameters theta = (psi_pop, Omega, sigma^2) together with the
/// per-coordinate transform. Omega's Cholesky factor, inverse and
/// log-determinant are computed once at construction.
class PopulationParams {
 public:
  PopulationParams(Vector psi_pop, Matrix omega, double sigma2, std::vector<Transform> transform)
      : psi_pop_(std::move(psi_pop)),
        omega_(std::move(omega)),
        sigma2_(sigma2),
        transform_(std::move(transform)) {
    const Index p = psi_pop_.size();
    if (p == 0) throw InputError("population parameters: psi_pop is empty");
    if (omega_.rows() != p || omega_.cols() != p) {
      throw InputError("population parameters: omega must be " + std::to_string(p) + "x" +
                       std::to_string(p));
    }
    if (static_cast<Index>(transform_.size()) != p) {
      throw InputError("population parameters: transform needs one tag per coordinate");
    }
    if (!(std::isfinite(sigma2_) && sigma2_ > 0.0)) {
      throw InputError("population parameters: sigma2 must be positive");
    }
    if (!psi_pop_.allFinite() || !omega_.allFinite()) {
      throw InputError("population parameters: non-finite entries");
    }
    const double scale = omega_.cwiseAbs().maxCoeff();
    if ((omega_ - omega_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw InputError("population parameters: omega is not symmetric");
    }
    for (Index l = 0; l < p; ++l) {
      if (transform_[static_cast<std::size_t>(l)] == Transform::log && !(psi_pop_(l) > 0.0)) {
        throw InputError("population parameters: psi_pop[" + std::to_string(l) +
                         "] must be positive under a log transform");
      }
    }
    llt_.compute(omega_);
    if (llt_.info() != Eigen::Success) {
      const Index pivot = first_failing_pivot(omega_);
      throw FactorizationError(
          "omega is not positive definite: Cholesky pivot " + std::to_string(pivot) +
              " is not positive",
          pivot);
    }
    omega_inv_ = llt_.solve(Matrix::Identity(p, p));
    omega_inv_ = 0.5 * (omega_inv_ + omega_inv_.transpose()).eval();
    Matrix l = llt_.matrixL();
    omega_logdet_ = 2.0 * l.diagonal().array().log().sum();
    prior_mean_ = to_phi(psi_pop_);
  }

  Index dim() const { return psi_pop_.size(); }
  const Vector& psi_pop() const { return psi_pop_; }
  const Matrix& omega() const { return omega_; }
  double sigma2() const { return sigma2_; }
  const std::vector<Transform>& transform() const { return transform_; }

  /// m(psi_pop): the prior mean in latent coordinates.
  const LatentPoint& prior_mean() const { return prior_mean_; }
  const Eigen::LLT<Matrix>& omega_llt() const { return llt_; }
  Matrix omega_chol() const { return llt_.matrixL(); }
  const Matrix& omega_inv() const { return omega_inv_; }
  double omega_logdet() const { return omega_logdet_; }

  Vector to_psi(const LatentPoint& phi) const {
    Vector psi = phi;
    for (Index l = 0; l < phi.size(); ++l) {
      if (transform_[static_cast<std::size_t>(l)] == Transform::log) psi(l) = std::exp(phi(l));
    }
    return psi;
  }

  LatentPoint to_phi(const Vector& psi) const {
    LatentPoint phi = psi;
    for (Index l = 0; l < psi.size(); ++l) {
      if (transform_[static_cast<std::size_t>(l)] == Transform::log) phi(l) = std::log(psi(l));
    }
    return phi;
  }

  /// d psi_l / d phi_l evaluated at psi.
  Vector dpsi_dphi(const Vector& psi) const {
    Vector d = Vector::Ones(psi.size());
    for (Index l = 0; l < psi.size(); ++l) {
      if (transform_[static_cast<std::size_t>(l)] == Transform::log) d(l) = psi(l);
    }
    return d;
  }

 private:
  Vector psi_pop_;
  Matrix omega_;
  double sigma2_;
  std::vector<Transform> transform_;
  Eigen::LLT<Matrix> llt_;
  Matrix omega_inv_;
  double omega_logdet_ = 0.0;
  LatentPoint prior_mean_;
};

/// One subject's data. Times are strictly increasing and non-negative.
class IndividualRecord {
 public:
  IndividualRecord(std::string id, Vector times, Vector observations, double dose)
      : id_(std::move(id)), times_(std::move(times)), obs_(std::move(observations)), dose_(dose) {
    if (times_.size() == 0) throw InputError("record " + id_ + ": no observations");
    if (times_.size() != obs_.size()) {
      throw InputError("record " + id_ + ": times and observations differ in length");
    }
    if (!(std::isfinite(dose_) && dose_ > 0.0)) {
      throw InputError("record " + id_ + ": dose must be positive");
    }
    for (Index j = 0; j < times_.size(); ++j) {
      if (!std::isfinite(times_(j)) || times_(j) < 0.0) {
        throw InputError("record " + id_ + ": times must be finite and non-negative");
      }
      if (j > 0 && !(times_(j) > times_(j - 1))) {
        throw InputError("record " + id_ + ": times must be strictly increasing");
      }
      if (!std::isfinite(obs_(j))) {
        throw InputError("record " + id_ + ": non-finite observation");
      }
    }
  }

  const std::string& id() const { return id_; }
  const Vector& times() const { return times_; }
  const Vector& observations() const { return obs_; }
  double dose() const { return dose_; }
  Index size() const { return times_.size(); }

 private:
  std::string id_;
  Vector times_;
  Vector obs_;
  double dose_;
};

namespace detail {

inline void check_latent(const LatentPoint& phi, const PopulationParams& theta) {
  if (phi.size() != theta.dim()) {
    throw InputError("latent point has dimension " + std::to_string(phi.size()) +
                     ", expected " + std::to_string(theta.dim()));
  }
  if (!phi.allFinite()) throw InputError("latent point has non-finite coordinates");
}

inline void check_predictions(const Vector& f, Index n) {
  if (f.size() != n) throw EvaluationError("structural model returned the wrong length", -1);
  for (Index j = 0; j < f.size(); ++j) {
    if (!std::isfinite(f(j))) {
      throw EvaluationError("non-finite prediction at time index " + std::to_string(j), j);
    }
  }
}

}  // namespace detail

/// log N(phi; m(psi_pop), Omega). The density is over phi; no Jacobian of the
/// transform enters.
inline double log_prior(const LatentPoint& phi, const PopulationParams& theta) {
  if (phi.size() != theta.dim()) throw InputError("log_prior: dimension mismatch");
  const Vector centered = phi - theta.prior_mean();
  const Vector white = theta.omega_llt().matrixL().solve(centered);
  const double p = static_cast<double>(theta.dim());
  return -0.5 * p * kLog2Pi - 0.5 * theta.omega_logdet() - 0.5 * white.squaredNorm();
}

/// Gaussian residual log-likelihood log N(y; f(psi), sigma^2 I) at psi = m^-1(phi).
inline double log_likelihood(const IndividualRecord& record, const LatentPoint& phi,
                             const PopulationParams& theta, const StructuralModel& model) {
  detail::check_latent(phi, theta);
  const Vector psi = theta.to_psi(phi);
  const Vector f = model.predict(record.times(), psi, record.dose());
  detail::check_predictions(f, record.size());
  const double n = static_cast<double>(record.size());
  const double rss = (record.observations() - f).squaredNorm();
  return -0.5 * n * (kLog2Pi + std::log(theta.sigma2())) - 0.5 * rss / theta.sigma2();
}

/// log p(y_i | phi) + log p(phi). Returns -infinity when psi leaves the model
/// domain; throws on non-finite phi or non-finite predictions.
inline double log_joint(const IndividualRecord& record, const LatentPoint& phi,
                        const PopulationParams& theta, const StructuralModel& model) {
  detail::check_latent(phi, theta);
  const Vector psi = theta.to_psi(phi);
  if (!model.in_domain(psi)) return -std::numeric_limits<double>::infinity();
  Vector f;
  try {
    f = model.predict(record.times(), psi, record.dose());
  } catch (const DomainError&) {
    return -std::numeric_limits<double>::infinity();
  }
  detail::check_predictions(f, record.size());
  const double n = static_cast<double>(record.size());
  const double rss = (record.observations() - f).squaredNorm();
  const double loglik =
      -0.5 * n * (kLog2Pi + std::log(theta.sigma2())) - 0.5 * rss / theta.sigma2();
  return loglik + log_prior(phi, theta);
}

/// Jacobian of f_i with respect to phi: J_psi * diag(d psi / d phi).
inline JacobianResult latent_jacobian(const StructuralModel& model, const PopulationParams& theta,
                                      const IndividualRecord& record, const LatentPoint& phi) {
  detail::check_latent(phi, theta);
  const Vector psi = theta.to_psi(phi);
  JacobianResult r = jacobian(model, record.times(), psi, record.dose());
  r.jac = r.jac * theta.dpsi_dphi(psi).asDiagonal();
  return r;
}

/// Gradient of log p(y_i | phi) with respect to phi: J^T (y - f) / sigma^2.
inline Vector log_likelihood_gradient(const IndividualRecord& record, const LatentPoint& phi,
                                      const PopulationParams& theta,
                                      const StructuralModel& model) {
  const JacobianResult jr = latent_jacobian(model, theta, record, phi);
  return jr.jac.transpose() * (record.observations() - jr.values) / theta.sigma2();
}

struct ValueAndGradient {
  double value;
  Vector gradient;
};

/// log_joint and its phi-gradient J^T (y - f) / sigma^2 - Omega^-1 (phi - m).
/// Outside the model domain the value is -infinity and the gradient is NaN.
inline ValueAndGradient log_joint_with_gradient(const IndividualRecord& record,
                                                const LatentPoint& phi,
                                                const PopulationParams& theta,
                                                const StructuralModel& model) {
  detail::check_latent(phi, theta);
  const Vector psi = theta.to_psi(phi);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (!model.in_domain(psi)) {
    return {-std::numeric_limits<double>::infinity(), Vector::Constant(phi.size(), nan)};
  }
  JacobianResult jr;
  try {
    jr = jacobian(model, record.times(), psi, record.dose());
  } catch (const DomainError&) {
    return {-std::numeric_limits<double>::infinity(), Vector::Constant(phi.size(), nan)};
  }
  jr.jac = jr.jac * theta.dpsi_dphi(psi).asDiagonal();
  const Vector resid = record.observations() - jr.values;
  const double n = static_cast<double>(record.size());
  const double loglik = -0.5 * n * (kLog2Pi + std::log(theta.sigma2())) -
                        0.5 * resid.squaredNorm() / theta.sigma2();
  const Vector centered = phi - theta.prior_mean();
  Vector grad = jr.jac.transpose() * resid / theta.sigma2() - theta.omega_inv() * centered;
  return {loglik + log_prior(phi, theta), std::move(grad)};
}

/// Bundles one individual's conditional target p(phi | y_i; theta).
class Posterior {
 public:
  Posterior(IndividualRecord record, PopulationParams theta, StructuralModel model)
      : record_(std::move(record)), theta_(std::move(theta)), model_(std::move(model)) {
    if (model_.dim() != theta_.dim()) {
      throw InputError("model " + model_.name + " has " + std::to_string(model_.dim()) +
                       " parameters but theta has " + std::to_string(theta_.dim()));
    }
  }

  const IndividualRecord& record() const { return record_; }
  const PopulationParams& theta() const { return theta_; }
  const StructuralModel& model() const { return model_; }
  Index dim() const { return theta_.dim(); }

  double log_density(const LatentPoint& phi) const {
    return log_joint(record_, phi, theta_, model_);
  }

  /// log_density, with every library error mapped to -infinity.
  double safe_log_density(const LatentPoint& phi) const {
    if (!phi.allFinite()) return -std::numeric_limits<double>::infinity();
    try {
      return log_density(phi);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  }

  ValueAndGradient value_and_gradient(const LatentPoint& phi) const {
    return log_joint_with_gradient(record_, phi, theta_, model_);
  }

  /// As value_and_gradient, but maps library errors to (-inf, NaN).
  ValueAndGradient safe_value_and_gradient(const LatentPoint& phi) const {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (!phi.allFinite()) {
      return {-std::numeric_limits<double>::infinity(), Vector::Constant(phi.size(), nan)};
    }
    try {
      return value_and_gradient(phi);
    } catch (const Error&) {
      return {-std::numeric_limits<double>::infinity(), Vector::Constant(phi.size(), nan)};
    }
  }

 private:
  IndividualRecord record_;
  PopulationParams theta_;
  StructuralModel model_;
};

}  // namespace nlme

#endif  // NLME_MODEL_HPP
