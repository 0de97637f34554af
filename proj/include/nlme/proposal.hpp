#ifndef NLME_PROPOSAL_HPP
#define NLME_PROPOSAL_HPP

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nlme/errors.hpp"
#include "nlme/map_solver.hpp"
#include "nlme/model.hpp"
#include "nlme/random.hpp"

namespace nlme {

enum class ProposalKind { laplace, linearized, prior };

inline const char* to_string(ProposalKind k) {
  switch (k) {
    case ProposalKind::laplace: return "laplace";
    case ProposalKind::linearized: return "linearized";
    case ProposalKind::prior: return "prior";
  }
  return "?";
}

struct JitteredFactor {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;  // amount added to the diagonal
};

/// Cholesky of a symmetric matrix with a bounded jitter ladder: on failure add
/// 1e-10 * trace / p to the diagonal, escalating by 10x up to 1e-4 * trace / p.
inline JitteredFactor factorize_with_jitter(const Matrix& a, const std::string& what) {
  JitteredFactor out;
  out.llt.compute(a);
  if (out.llt.info() == Eigen::Success) return out;

  const Index p = a.rows();
  const double base = std::abs(a.trace()) / static_cast<double>(p);
  for (double level = 1e-10; level <= 1e-4 * 1.0000001; level *= 10.0) {
    const double jitter = level * base;
    if (!(jitter > 0.0)) break;
    out.llt.compute(a + jitter * Matrix::Identity(p, p));
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      return out;
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  std::ostringstream msg;
  msg << what << ": factorization failed after maximum jitter; eigenvalue range [" << lo << ", "
      << hi << "], condition number " << (lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
  throw FactorizationError(msg.str(), -1);
}

/// Multivariate normal proposal N(mean, cov) with its Cholesky factor cached.
class GaussianProposal {
 public:
  GaussianProposal(Vector mean, Matrix cov, ProposalKind kind)
      : mean_(std::move(mean)), cov_(std::move(cov)), kind_(kind) {
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) {
      throw InputError("GaussianProposal: covariance shape does not match the mean");
    }
    if (!mean_.allFinite() || !cov_.allFinite()) {
      throw InputError("GaussianProposal: non-finite mean or covariance");
    }
    cov_ = (0.5 * (cov_ + cov_.transpose())).eval();
    JitteredFactor f = factorize_with_jitter(cov_, "proposal covariance");
    jitter_ = f.jitter;
    if (jitter_ > 0.0) cov_.diagonal().array() += jitter_;
    chol_ = f.llt.matrixL();
    logdet_ = 2.0 * chol_.diagonal().array().log().sum();
  }

  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  double logdet() const { return logdet_; }
  double jitter() const { return jitter_; }
  ProposalKind kind() const { return kind_; }
  Index dim() const { return mean_.size(); }

  /// mean + L z with z standard normal.
  LatentPoint sample(Rng& rng) const {
    return mean_ + chol_.triangularView<Eigen::Lower>() * standard_normal(rng, dim());
  }

  double logpdf(const LatentPoint& phi) const {
    const Vector white = chol_.triangularView<Eigen::Lower>().solve(phi - mean_);
    return -0.5 * static_cast<double>(dim()) * kLog2Pi - 0.5 * logdet_ - 0.5 * white.squaredNorm();
  }

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
  double logdet_ = 0.0;
  double jitter_ = 0.0;
  ProposalKind kind_;
};

inline LatentPoint proposal_sample(const GaussianProposal& prop, Rng& rng) { return prop.sample(rng); }

inline double proposal_logpdf(const GaussianProposal& prop, const LatentPoint& phi) {
  return prop.logpdf(phi);
}

/// The prior N(m(psi_pop), Omega) as a proposal object.
inline GaussianProposal prior_proposal(const PopulationParams& theta) {
  return GaussianProposal(theta.prior_mean(), theta.omega(), ProposalKind::prior);
}

namespace detail {

inline void require_converged(const MapResult& map, bool allow_unconverged) {
  if (!map.converged && !allow_unconverged) {
    throw Error("proposal construction refused: MAP did not converge (grad norm " +
                std::to_string(map.grad_norm) + ")");
  }
}

// Covariance (information + Omega^-1)^-1.
inline Matrix posterior_covariance(const Matrix& information, const PopulationParams& theta) {
  Matrix precision = information + theta.omega_inv();
  precision = (0.5 * (precision + precision.transpose())).eval();
  JitteredFactor f = factorize_with_jitter(precision, "proposal precision");
  const Index p = precision.rows();
  return f.llt.solve(Matrix::Identity(p, p));
}

}  // namespace detail

/// Expected information J^T J / sigma^2 at phi, J taken in latent coordinates.
inline Matrix expected_information(const Posterior& post, const LatentPoint& phi) {
  const JacobianResult jr = latent_jacobian(post.model(), post.theta(), post.record(), phi);
  return jr.jac.transpose() * jr.jac / post.theta().sigma2();
}

/// Central-difference stencil for the observed information
/// -d^2 log p(y | phi) / d phi^2, differencing the analytic log-likelihood
/// gradient once. Predictions and Jacobians at the stencil points are cached,
/// so evaluating the information for many data vectors is cheap.
class InformationStencil {
 public:
  InformationStencil(const Posterior& post, const LatentPoint& phi) : sigma2_(post.theta().sigma2()) {
    const Index p = post.dim();
    const double base = std::cbrt(std::numeric_limits<double>::epsilon());
    points_.reserve(static_cast<std::size_t>(p));
    for (Index l = 0; l < p; ++l) {
      const double h = base * std::max(1.0, std::abs(phi(l)));
      LatentPoint up = phi, down = phi;
      up(l) += h;
      down(l) -= h;
      Point pt;
      pt.width = up(l) - down(l);
      JacobianResult ju = latent_jacobian(post.model(), post.theta(), post.record(), up);
      JacobianResult jd = latent_jacobian(post.model(), post.theta(), post.record(), down);
      pt.f_up = std::move(ju.values);
      pt.j_up = std::move(ju.jac);
      pt.f_down = std::move(jd.values);
      pt.j_down = std::move(jd.jac);
      points_.push_back(std::move(pt));
    }
  }

  /// Symmetrized observed information for observations y.
  Matrix observed_information(const Vector& y) const {
    const Index p = static_cast<Index>(points_.size());
    Matrix hess(p, p);
    for (Index l = 0; l < p; ++l) {
      const Point& pt = points_[static_cast<std::size_t>(l)];
      const Vector g_up = pt.j_up.transpose() * (y - pt.f_up);
      const Vector g_down = pt.j_down.transpose() * (y - pt.f_down);
      hess.col(l) = (g_up - g_down) / (sigma2_ * pt.width);
    }
    return -0.5 * (hess + hess.transpose());
  }

 private:
  struct Point {
    Vector f_up, f_down;
    Matrix j_up, j_down;
    double width = 0.0;
  };
  std::vector<Point> points_;
  double sigma2_;
};

inline Matrix observed_information(const Posterior& post, const LatentPoint& phi) {
  return InformationStencil(post, phi).observed_information(post.record().observations());
}

/// Clips negative eigenvalues to zero. PSD input is returned unchanged.
inline Matrix clip_to_psd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.eigenvalues().minCoeff() >= 0.0) return a;
  const Vector clipped = es.eigenvalues().cwiseMax(0.0);
  Matrix out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

/// Linearization proposal: mean phi_hat, covariance (J^T J / sigma^2 + Omega^-1)^-1.
inline GaussianProposal linearized_proposal(const Posterior& post, const MapResult& map,
                                            bool allow_unconverged = false) {
  detail::require_converged(map, allow_unconverged);
  const Matrix info = expected_information(post, map.phi_hat);
  return GaussianProposal(map.phi_hat, detail::posterior_covariance(info, post.theta()),
                          ProposalKind::linearized);
}

/// Laplace proposal: mean phi_hat, covariance (-Hessian of log p(y|phi) + Omega^-1)^-1
/// with the observed information clipped to be positive semi-definite.
inline GaussianProposal laplace_proposal(const Posterior& post, const MapResult& map,
                                         bool allow_unconverged = false) {
  detail::require_converged(map, allow_unconverged);
  const Matrix info = clip_to_psd(observed_information(post, map.phi_hat));
  return GaussianProposal(map.phi_hat, detail::posterior_covariance(info, post.theta()),
                          ProposalKind::laplace);
}

struct InfoGapReport {
  double gap = 0.0;        // ||mean observed info - J^T J / sigma^2||_F / ||J^T J / sigma^2||_F
  double std_error = 0.0;  // Monte-Carlo standard error on the same scale; NaN if n_sims == 1
  Index n_sims = 0;
  Matrix mean_observed;
  Matrix expected;
};

/// Monte-Carlo check that the observed information averages to the expected
/// information J^T J / sigma^2 when y ~ N(f(psi_hat), sigma^2 I).
inline InfoGapReport expected_info_gap_report(const Posterior& post, const MapResult& map,
                                              Index n_sims, std::uint64_t seed) {
  if (n_sims < 1) throw InputError("expected_info_gap: n_sims must be >= 1");
  const LatentPoint& phi = map.phi_hat;
  const InformationStencil stencil(post, phi);
  const JacobianResult jr = latent_jacobian(post.model(), post.theta(), post.record(), phi);
  const Matrix expected = jr.jac.transpose() * jr.jac / post.theta().sigma2();
  const double sigma = std::sqrt(post.theta().sigma2());
  const Index p = post.dim();

  Rng rng = make_rng(seed);
  Matrix mean = Matrix::Zero(p, p);
  Matrix m2 = Matrix::Zero(p, p);
  for (Index s = 0; s < n_sims; ++s) {
    const Vector y = jr.values + sigma * standard_normal(rng, jr.values.size());
    const Matrix info = stencil.observed_information(y);
    const Matrix delta = info - mean;
    mean += delta / static_cast<double>(s + 1);
    m2.array() += delta.array() * (info - mean).array();
  }

  InfoGapReport r;
  r.n_sims = n_sims;
  r.mean_observed = mean;
  r.expected = expected;
  const double norm = expected.norm();
  const double scale = norm > 0.0 ? norm : 1.0;
  r.gap = (mean - expected).norm() / scale;
  if (n_sims > 1) {
    const Matrix var = m2 / static_cast<double>(n_sims - 1);
    r.std_error = std::sqrt(var.sum() / static_cast<double>(n_sims)) / scale;
  } else {
    r.std_error = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

inline double expected_info_gap(const Posterior& post, const MapResult& map, Index n_sims,
                                std::uint64_t seed) {
  return expected_info_gap_report(post, map, n_sims, seed).gap;
}

}  // namespace nlme

#endif  // NLME_PROPOSAL_HPP
