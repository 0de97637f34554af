#ifndef NLME_MAP_SOLVER_HPP
#define NLME_MAP_SOLVER_HPP

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

#include "nlme/errors.hpp"
#include "nlme/model.hpp"

namespace nlme {

struct MapOptions {
  double gtol = 1e-6;
  int max_iter = 200;
  double initial_step = 1.0;
  double backtrack = 0.5;
  double sufficient_increase = 1e-4;
  int max_backtracks = 60;
};

struct MapResult {
  LatentPoint phi_hat;
  double objective = -std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();  // sup-norm
  int iterations = 0;
  bool converged = false;
  /// log_joint after each accepted step, starting with the initial point.
  std::vector<double> objective_trace;
};

namespace detail {

// (J^T J / sigma^2 + Omega^-1)^-1 at phi, used to seed the inverse Hessian.
inline Matrix gauss_newton_inverse(const Posterior& post, const LatentPoint& phi) {
  const Index p = post.dim();
  try {
    const JacobianResult jr = latent_jacobian(post.model(), post.theta(), post.record(), phi);
    Matrix precision = jr.jac.transpose() * jr.jac / post.theta().sigma2() + post.theta().omega_inv();
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() == Eigen::Success) return llt.solve(Matrix::Identity(p, p));
  } catch (const Error&) {
  }
  return post.theta().omega();
}

}  // namespace detail

/// Maximizes log_joint over phi by BFGS with a backtracking line search.
///
/// Works on F = -log_joint. The inverse Hessian starts from the Gauss-Newton
/// curvature at `init`. A step is accepted when it satisfies the Armijo
/// condition; once the predicted increase falls below round-off in F, a step
/// that shrinks the gradient and raises F by no more than round-off is
/// accepted as well.
inline MapResult find_map(const Posterior& post, const LatentPoint& init, const MapOptions& opts = {}) {
  if (!(opts.gtol > 0.0) || opts.max_iter < 1) {
    throw InputError("find_map: gtol must be positive and max_iter >= 1");
  }
  if (init.size() != post.dim() || !init.allFinite()) {
    throw InputError("find_map: initial point must be finite with dimension " +
                     std::to_string(post.dim()));
  }
  ValueAndGradient cur = post.value_and_gradient(init);
  if (!std::isfinite(cur.value) || !cur.gradient.allFinite()) {
    throw Error("find_map: log_joint is not finite at the initial point");
  }

  const Index p = post.dim();
  const double eps = std::numeric_limits<double>::epsilon();
  MapResult res;
  res.phi_hat = init;
  res.objective_trace.push_back(cur.value);

  Matrix hinv = detail::gauss_newton_inverse(post, init);
  Vector x = init;
  Vector g = -cur.gradient;  // gradient of F
  double f = -cur.value;

  while (res.iterations < opts.max_iter) {
    if (g.lpNorm<Eigen::Infinity>() <= opts.gtol) break;

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      Vector dir = -hinv * g;
      double slope = g.dot(dir);
      if (!(slope < 0.0)) {
        hinv = Matrix::Identity(p, p);
        dir = -g;
        slope = -g.squaredNorm();
      }
      double alpha = opts.initial_step;
      for (int bt = 0; bt <= opts.max_backtracks; ++bt, alpha *= opts.backtrack) {
        const Vector xn = x + alpha * dir;
        const ValueAndGradient trial = post.safe_value_and_gradient(xn);
        const double fn = -trial.value;
        if (!std::isfinite(fn) || !trial.gradient.allFinite()) continue;
        const Vector gn = -trial.gradient;
        const bool armijo = fn <= f + opts.sufficient_increase * alpha * slope;
        const double noise = 64.0 * eps * (1.0 + std::abs(f));
        const bool roundoff = -alpha * slope < noise && fn <= f + noise &&
                              gn.lpNorm<Eigen::Infinity>() < g.lpNorm<Eigen::Infinity>();
        if (!(armijo || roundoff)) continue;

        const Vector s = xn - x;
        const Vector y = gn - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
          const Vector hy = hinv * y;
          const double rho = 1.0 / sy;
          hinv += (rho * rho * y.dot(hy) + rho) * s * s.transpose() -
                  rho * (hy * s.transpose() + s * hy.transpose());
        }
        x = xn;
        g = gn;
        f = fn;
        accepted = true;
        break;
      }
      if (!accepted) hinv = detail::gauss_newton_inverse(post, x);
    }
    if (!accepted) break;
    ++res.iterations;
    res.objective_trace.push_back(-f);
  }

  res.phi_hat = x;
  res.objective = -f;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  res.converged = res.grad_norm <= opts.gtol;
  return res;
}

inline MapResult find_map(const Posterior& post, const MapOptions& opts = {}) {
  return find_map(post, post.theta().prior_mean(), opts);
}

/// Runs find_map from every start and keeps the best converged result (or the
/// best objective when none converged). No global optimality is claimed.
inline MapResult find_map_multistart(const Posterior& post, const std::vector<LatentPoint>& starts,
                                     const MapOptions& opts = {}) {
  if (starts.empty()) throw InputError("find_map_multistart: no starting points");
  MapResult best;
  bool have = false;
  for (const LatentPoint& s : starts) {
    MapResult r;
    try {
      r = find_map(post, s, opts);
    } catch (const Error&) {
      continue;
    }
    const bool better = !have || (r.converged && !best.converged) ||
                        (r.converged == best.converged && r.objective > best.objective);
    if (better) {
      best = std::move(r);
      have = true;
    }
  }
  if (!have) throw Error("find_map_multistart: every start failed");
  return best;
}

}  // namespace nlme

#endif  // NLME_MAP_SOLVER_HPP
