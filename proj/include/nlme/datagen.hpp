#ifndef NLME_DATAGEN_HPP
#define NLME_DATAGEN_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nlme/errors.hpp"
#include "nlme/model.hpp"
#include "nlme/random.hpp"
#include "nlme/structural.hpp"

namespace nlme {

/// 0.5, 1, 2, 4, 8, 12, 24, 36, 48, 72, 96, 120 hours.
inline Vector default_time_grid() {
  Vector t(12);
  t << 0.5, 1, 2, 4, 8, 12, 24, 36, 48, 72, 96, 120;
  return t;
}

/// Population values used for the warfarin example: ka_pop = 1, V_pop = 8,
/// k_pop = 0.01, omega = (0.5, 0.2, 0.3) as standard deviations of the
/// log-normal random effects, sigma^2 = 0.5.
inline PopulationParams warfarin_theta() {
  Vector psi(3);
  psi << 1.0, 8.0, 0.01;
  Vector sd(3);
  sd << 0.5, 0.2, 0.3;
  Matrix omega = sd.array().square().matrix().asDiagonal();
  return PopulationParams(psi, omega, 0.5, {Transform::log, Transform::log, Transform::log});
}

/// Simulation settings. Omega may be singular and sigma2 may be zero here,
/// which lets degenerate (noise-free, no variability) datasets be generated.
struct SimConfig {
  Index n_individuals = 32;
  Vector times = default_time_grid();
  Vector psi_pop;
  Matrix omega;
  double sigma2 = 0.5;
  std::vector<Transform> transform;
  double dose_per_kg = 1.5;
  /// One weight per individual, or a single weight shared by all.
  std::vector<double> weights{70.0};
  std::uint64_t seed = 1234;

  static SimConfig warfarin() {
    const PopulationParams th = warfarin_theta();
    SimConfig c;
    c.psi_pop = th.psi_pop();
    c.omega = th.omega();
    c.sigma2 = th.sigma2();
    c.transform = th.transform();
    return c;
  }

  double weight(Index i) const {
    return weights.size() == 1 ? weights.front() : weights[static_cast<std::size_t>(i)];
  }

  void validate() const {
    if (n_individuals < 1) throw InputError("simulate: n_individuals must be >= 1");
    if (times.size() == 0) throw InputError("simulate: empty time grid");
    for (Index j = 0; j < times.size(); ++j) {
      if (times(j) < 0.0 || (j > 0 && !(times(j) > times(j - 1)))) {
        throw InputError("simulate: time grid must be non-negative and increasing");
      }
    }
    const Index p = psi_pop.size();
    if (p == 0 || omega.rows() != p || omega.cols() != p || static_cast<Index>(transform.size()) != p) {
      throw InputError("simulate: inconsistent parameter dimensions");
    }
    if (!(sigma2 >= 0.0)) throw InputError("simulate: sigma2 must be non-negative");
    if (!(dose_per_kg > 0.0)) throw InputError("simulate: dose_per_kg must be positive");
    if (weights.empty() || (weights.size() != 1 && static_cast<Index>(weights.size()) != n_individuals)) {
      throw InputError("simulate: need one weight or one per individual");
    }
    for (double w : weights) {
      if (!(w > 0.0)) throw InputError("simulate: weights must be positive");
    }
  }
};

struct SimulatedData {
  std::vector<IndividualRecord> records;
  std::vector<LatentPoint> truth;  // phi used to generate each record
};

namespace detail {

// Any square root of a positive semi-definite matrix (Cholesky when possible).
inline Matrix psd_sqrt(const Matrix& a) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff())) {
    throw InputError("simulate: omega is not positive semi-definite");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Draws phi_i ~ N(m(psi_pop), Omega), psi_i = m^-1(phi_i) and
/// y_i = f(t, psi_i) + N(0, sigma^2) noise. Individual i uses the RNG stream
/// derive_seed(seed, i). Ids are "1" .. "N".
inline SimulatedData simulate(const SimConfig& config, const StructuralModel& model = pk1_oral_model()) {
  config.validate();
  if (model.dim() != config.psi_pop.size()) throw InputError("simulate: model dimension mismatch");

  Vector mean = config.psi_pop;
  for (Index l = 0; l < mean.size(); ++l) {
    if (config.transform[static_cast<std::size_t>(l)] == Transform::log) {
      if (!(mean(l) > 0.0)) throw InputError("simulate: psi_pop must be positive under a log transform");
      mean(l) = std::log(mean(l));
    }
  }
  const Matrix root = detail::psd_sqrt(config.omega);
  const double sigma = std::sqrt(config.sigma2);

  SimulatedData out;
  for (Index i = 0; i < config.n_individuals; ++i) {
    Rng rng = make_rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    const LatentPoint phi = mean + root * standard_normal(rng, mean.size());
    Vector psi = phi;
    for (Index l = 0; l < psi.size(); ++l) {
      if (config.transform[static_cast<std::size_t>(l)] == Transform::log) psi(l) = std::exp(phi(l));
    }
    const double dose = config.dose_per_kg * config.weight(i);
    Vector y = model.predict(config.times, psi, dose);
    if (config.sigma2 > 0.0) y += sigma * standard_normal(rng, y.size());
    out.records.emplace_back(std::to_string(i + 1), config.times, std::move(y), dose);
    out.truth.push_back(phi);
  }
  return out;
}

}  // namespace nlme

#endif  // NLME_DATAGEN_HPP
