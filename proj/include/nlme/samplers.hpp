#ifndef NLME_SAMPLERS_HPP
#define NLME_SAMPLERS_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nlme/errors.hpp"
#include "nlme/map_solver.hpp"
#include "nlme/model.hpp"
#include "nlme/proposal.hpp"
#include "nlme/random.hpp"

namespace nlme {

enum class KernelKind { prior_imh, rwm_componentwise, rwm_blockwise, mala, nlme_imh };

inline const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::prior_imh: return "prior-imh";
    case KernelKind::rwm_componentwise: return "rwm-componentwise";
    case KernelKind::rwm_blockwise: return "rwm-blockwise";
    case KernelKind::mala: return "mala";
    case KernelKind::nlme_imh: return "nlme-imh";
  }
  return "?";
}

inline KernelKind parse_kernel_kind(const std::string& s) {
  for (KernelKind k : {KernelKind::prior_imh, KernelKind::rwm_componentwise, KernelKind::rwm_blockwise,
                       KernelKind::mala, KernelKind::nlme_imh}) {
    if (s == to_string(k)) return k;
  }
  if (s == "rwm") return KernelKind::rwm_componentwise;
  throw InputError("unknown kernel '" + s + "'");
}

/// A Metropolis-Hastings transition kernel.
///
/// `step` holds the per-coordinate standard deviations for component-wise
/// RWM, a single scale multiplying chol(Omega) for block-wise RWM, and the
/// Langevin step size gamma for MALA. Independent kernels carry no step;
/// nlme-imh carries its Gaussian proposal.
struct KernelConfig {
  KernelKind kind = KernelKind::rwm_componentwise;
  Vector step;
  std::optional<GaussianProposal> proposal;

  static KernelConfig prior_imh() { return {KernelKind::prior_imh, Vector(), std::nullopt}; }

  static KernelConfig rwm_componentwise(Vector steps) {
    return {KernelKind::rwm_componentwise, std::move(steps), std::nullopt};
  }
  /// Step scale * sqrt(Omega_ll) on each coordinate.
  static KernelConfig rwm_componentwise(const PopulationParams& theta, double scale = 0.4) {
    return rwm_componentwise(scale * theta.omega().diagonal().cwiseSqrt());
  }

  static KernelConfig rwm_blockwise(double scale) {
    return {KernelKind::rwm_blockwise, Vector::Constant(1, scale), std::nullopt};
  }
  /// Increments (2.4 / sqrt(p)) chol(Omega) z.
  static KernelConfig rwm_blockwise(const PopulationParams& theta) {
    return rwm_blockwise(2.4 / std::sqrt(static_cast<double>(theta.dim())));
  }

  static KernelConfig mala(double gamma = 1e-2) {
    return {KernelKind::mala, Vector::Constant(1, gamma), std::nullopt};
  }

  static KernelConfig nlme_imh(GaussianProposal prop) {
    return {KernelKind::nlme_imh, Vector(), std::move(prop)};
  }

  double gamma() const { return step(0); }

  void validate(Index p) const {
    const bool needs_proposal = kind == KernelKind::nlme_imh;
    if (needs_proposal != proposal.has_value()) {
      throw InputError(std::string("kernel ") + to_string(kind) +
                       (needs_proposal ? " requires a proposal" : " must not carry a proposal"));
    }
    if (needs_proposal && proposal->dim() != p) throw InputError("kernel proposal dimension mismatch");
    const bool needs_step = kind == KernelKind::rwm_componentwise || kind == KernelKind::rwm_blockwise ||
                            kind == KernelKind::mala;
    if (needs_step) {
      const Index want = kind == KernelKind::rwm_componentwise ? p : 1;
      if (step.size() != want) throw InputError(std::string("kernel ") + to_string(kind) + ": wrong step size count");
      if (!step.allFinite() || (step.array() <= 0.0).any()) {
        throw InputError(std::string("kernel ") + to_string(kind) + ": steps must be positive");
      }
    }
  }
};

struct ChainState {
  LatentPoint phi;
  double logpost = -std::numeric_limits<double>::infinity();
  std::optional<Vector> grad;  // cached for MALA
};

struct StepResult {
  ChainState state;
  bool accepted = false;
  /// Log acceptance ratio of the (last) proposed move.
  double log_alpha = -std::numeric_limits<double>::infinity();
  int moves_proposed = 0;
  int moves_accepted = 0;
  bool gradient_failure = false;
};

/// Initial state with its log-density (and gradient for MALA).
inline ChainState make_state(const Posterior& post, const LatentPoint& phi, bool with_gradient) {
  ChainState s;
  s.phi = phi;
  if (with_gradient) {
    ValueAndGradient vg = post.safe_value_and_gradient(phi);
    s.logpost = vg.value;
    if (vg.gradient.allFinite()) s.grad = std::move(vg.gradient);
  } else {
    s.logpost = post.safe_log_density(phi);
  }
  return s;
}

/// log N(to; from + gamma * grad_from, 2 gamma I).
inline double mala_log_q(const LatentPoint& to, const LatentPoint& from, const Vector& grad_from, double gamma) {
  const double p = static_cast<double>(to.size());
  const Vector d = to - from - gamma * grad_from;
  return -0.5 * p * (kLog2Pi + std::log(2.0 * gamma)) - d.squaredNorm() / (4.0 * gamma);
}

struct MalaCandidate {
  LatentPoint phi;
  double logpost = -std::numeric_limits<double>::infinity();
  Vector grad;
  double log_q_forward = 0.0;   // log q(candidate | current)
  double log_q_backward = -std::numeric_limits<double>::infinity();  // log q(current | candidate)
  bool valid = false;  // false when the candidate's gradient is unavailable
};

/// Langevin proposal: candidate ~ N(phi + gamma grad log p(phi), 2 gamma I).
inline MalaCandidate mala_candidate(const ChainState& state, double gamma, const Posterior& post, Rng& rng) {
  if (!(gamma > 0.0)) throw InputError("mala_candidate: gamma must be positive");
  if (!state.grad || !state.grad->allFinite()) {
    throw Error("mala_candidate: gradient at the current state is not finite");
  }
  const Vector& g = *state.grad;
  MalaCandidate c;
  c.phi = state.phi + gamma * g + std::sqrt(2.0 * gamma) * standard_normal(rng, state.phi.size());
  c.log_q_forward = mala_log_q(c.phi, state.phi, g, gamma);
  ValueAndGradient vg = post.safe_value_and_gradient(c.phi);
  c.logpost = vg.value;
  if (std::isfinite(vg.value) && vg.gradient.allFinite()) {
    c.grad = std::move(vg.gradient);
    c.log_q_backward = mala_log_q(state.phi, c.phi, c.grad, gamma);
    c.valid = true;
  }
  return c;
}

namespace detail {

inline bool accept(double log_alpha, Rng& rng) {
  const double log_u = std::log(uniform_open(rng));
  return log_u < log_alpha;
}

inline double independent_log_alpha(double lp_cand, double lp_cur, double lq_cand, double lq_cur) {
  if (lp_cand == -std::numeric_limits<double>::infinity()) return lp_cand;
  return (lp_cand - lp_cur) + (lq_cur - lq_cand);
}

}  // namespace detail

/// One application of the kernel. A component-wise RWM step is a full sweep
/// over the coordinates in index order; the step counts as accepted when any
/// coordinate moved. Candidates outside the model domain have log-density
/// -infinity and are rejected.
inline StepResult mh_step(const ChainState& state, const KernelConfig& kernel, const Posterior& post, Rng& rng) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  StepResult r;
  r.state = state;
  const Index p = state.phi.size();

  switch (kernel.kind) {
    case KernelKind::prior_imh:
    case KernelKind::nlme_imh: {
      LatentPoint cand;
      double lq_cand = 0.0, lq_cur = 0.0;
      if (kernel.kind == KernelKind::nlme_imh) {
        const GaussianProposal& prop = *kernel.proposal;
        cand = prop.sample(rng);
        lq_cand = prop.logpdf(cand);
        lq_cur = prop.logpdf(state.phi);
      } else {
        const PopulationParams& theta = post.theta();
        cand = theta.prior_mean() + theta.omega_llt().matrixL() * standard_normal(rng, p);
        lq_cand = log_prior(cand, theta);
        lq_cur = log_prior(state.phi, theta);
      }
      const double lp = post.safe_log_density(cand);
      r.log_alpha = detail::independent_log_alpha(lp, state.logpost, lq_cand, lq_cur);
      r.moves_proposed = 1;
      if (detail::accept(r.log_alpha, rng)) {
        r.state.phi = std::move(cand);
        r.state.logpost = lp;
        r.state.grad.reset();
        r.accepted = true;
        r.moves_accepted = 1;
      }
      break;
    }
    case KernelKind::rwm_componentwise: {
      for (Index l = 0; l < p; ++l) {
        std::normal_distribution<double> dist(0.0, 1.0);
        LatentPoint cand = r.state.phi;
        cand(l) += kernel.step(l) * dist(rng);
        const double lp = post.safe_log_density(cand);
        r.log_alpha = lp == neg_inf ? neg_inf : lp - r.state.logpost;
        ++r.moves_proposed;
        if (detail::accept(r.log_alpha, rng)) {
          r.state.phi = std::move(cand);
          r.state.logpost = lp;
          r.state.grad.reset();
          r.accepted = true;
          ++r.moves_accepted;
        }
      }
      break;
    }
    case KernelKind::rwm_blockwise: {
      const Vector increment = post.theta().omega_llt().matrixL() * standard_normal(rng, p);
      const LatentPoint cand = state.phi + kernel.step(0) * increment;
      const double lp = post.safe_log_density(cand);
      r.log_alpha = lp == neg_inf ? neg_inf : lp - state.logpost;
      r.moves_proposed = 1;
      if (detail::accept(r.log_alpha, rng)) {
        r.state.phi = cand;
        r.state.logpost = lp;
        r.state.grad.reset();
        r.accepted = true;
        r.moves_accepted = 1;
      }
      break;
    }
    case KernelKind::mala: {
      ChainState cur = state;
      if (!cur.grad) {
        ValueAndGradient vg = post.safe_value_and_gradient(cur.phi);
        if (vg.gradient.allFinite()) cur.grad = std::move(vg.gradient);
        r.state.grad = cur.grad;
      }
      r.moves_proposed = 1;
      if (!cur.grad) {
        r.gradient_failure = true;
        break;
      }
      MalaCandidate c = mala_candidate(cur, kernel.gamma(), post, rng);
      if (!c.valid) {
        r.gradient_failure = std::isfinite(c.logpost);
        r.log_alpha = neg_inf;
        break;
      }
      r.log_alpha = (c.logpost - cur.logpost) + (c.log_q_backward - c.log_q_forward);
      if (detail::accept(r.log_alpha, rng)) {
        r.state.phi = std::move(c.phi);
        r.state.logpost = c.logpost;
        r.state.grad = std::move(c.grad);
        r.accepted = true;
        r.moves_accepted = 1;
      }
      break;
    }
  }
  return r;
}

/// An MCMC run: states[:, 0] is the initial point, states[:, k] the state
/// after k kernel applications.
struct Chain {
  Matrix states;                        // p x (n_iter + 1)
  std::vector<unsigned char> accepted;  // accepted[0] is false by convention
  std::vector<double> logpost;
  std::uint64_t seed = 0;
  KernelConfig kernel;
  Index moves_proposed = 0;
  Index moves_accepted = 0;
  Index gradient_failures = 0;

  Index length() const { return states.cols(); }
  Index dim() const { return states.rows(); }
  LatentPoint state(Index k) const { return states.col(k); }
};

/// Runs n_iter kernel applications from `init` with an RNG seeded by `seed`.
inline Chain run_chain(const LatentPoint& init, const KernelConfig& kernel, const Posterior& post, Index n_iter,
                       std::uint64_t seed) {
  if (n_iter < 1) throw InputError("run_chain: n_iter must be >= 1");
  kernel.validate(post.dim());
  if (init.size() != post.dim() || !init.allFinite()) throw InputError("run_chain: invalid initial point");

  ChainState cur = make_state(post, init, kernel.kind == KernelKind::mala);
  if (!(cur.logpost > -std::numeric_limits<double>::infinity())) {
    throw Error("run_chain: initial point has zero posterior density");
  }

  Chain chain;
  chain.seed = seed;
  chain.kernel = kernel;
  chain.states.resize(post.dim(), n_iter + 1);
  chain.accepted.assign(static_cast<std::size_t>(n_iter + 1), 0);
  chain.logpost.assign(static_cast<std::size_t>(n_iter + 1), cur.logpost);
  chain.states.col(0) = cur.phi;

  Rng rng = make_rng(seed);
  for (Index k = 1; k <= n_iter; ++k) {
    StepResult step = mh_step(cur, kernel, post, rng);
    chain.moves_proposed += step.moves_proposed;
    chain.moves_accepted += step.moves_accepted;
    chain.gradient_failures += step.gradient_failure ? 1 : 0;
    chain.accepted[static_cast<std::size_t>(k)] = step.accepted ? 1 : 0;
    cur = std::move(step.state);
    chain.states.col(k) = cur.phi;
    chain.logpost[static_cast<std::size_t>(k)] = cur.logpost;
  }
  return chain;
}

/// Default starting point: the MAP for nlme-imh (its proposal mean), the
/// prior mode for every other kernel.
inline LatentPoint default_init(const KernelConfig& kernel, const PopulationParams& theta) {
  if (kernel.kind == KernelKind::nlme_imh && kernel.proposal) return kernel.proposal->mean();
  return theta.prior_mean();
}

struct LadderPoint {
  double gamma;
  double acceptance;
};

/// gamma = 1e-2 * 10^(k / 20) for k = -60 .. 20, i.e. 1e-5 to 1e-1.
inline std::vector<double> default_mala_ladder() {
  std::vector<double> g;
  for (int k = -60; k <= 20; ++k) g.push_back(1e-2 * std::pow(10.0, k / 20.0));
  return g;
}

/// Acceptance rate of a MALA chain of n_iter steps for each gamma. Rung i is
/// seeded with derive_seed(seed, i).
inline std::vector<LadderPoint> tune_mala(const Posterior& post, const LatentPoint& init,
                                          const std::vector<double>& gammas, Index n_iter, std::uint64_t seed) {
  std::vector<LadderPoint> out;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    const Chain c = run_chain(init, KernelConfig::mala(gammas[i]), post, n_iter, derive_seed(seed, i));
    Index acc = 0;
    for (Index k = 1; k < c.length(); ++k) acc += c.accepted[static_cast<std::size_t>(k)];
    out.push_back({gammas[i], static_cast<double>(acc) / static_cast<double>(n_iter)});
  }
  return out;
}

/// Rung whose acceptance rate is closest to `target` (first one on ties).
inline LadderPoint closest_rung(const std::vector<LadderPoint>& ladder, double target = 0.57) {
  if (ladder.empty()) throw InputError("closest_rung: empty ladder");
  LadderPoint best = ladder.front();
  for (const LadderPoint& r : ladder) {
    if (std::abs(r.acceptance - target) < std::abs(best.acceptance - target)) best = r;
  }
  return best;
}

}  // namespace nlme

#endif  // NLME_SAMPLERS_HPP
