#ifndef NLME_TESTS_FIXTURES_HPP
#define NLME_TESTS_FIXTURES_HPP

#include <cmath>
#include <vector>

#include "nlme/nlme.hpp"

namespace fixtures {

using nlme::Index;
using nlme::Matrix;
using nlme::Vector;

/// 1-D conjugate target: f(t, psi) = psi, prior N(m, omega2), noise sigma2.
struct Conjugate {
  double m, omega2, sigma2;
  Vector y;

  nlme::PopulationParams theta() const {
    return nlme::PopulationParams(Vector::Constant(1, m), Matrix::Constant(1, 1, omega2), sigma2,
                                  {nlme::Transform::identity});
  }
  nlme::IndividualRecord record() const {
    return nlme::IndividualRecord("c", Vector::LinSpaced(y.size(), 1.0, static_cast<double>(y.size())), y, 1.0);
  }
  nlme::Posterior posterior() const { return nlme::Posterior(record(), theta(), nlme::polynomial_model(1)); }

  double post_var() const { return 1.0 / (static_cast<double>(y.size()) / sigma2 + 1.0 / omega2); }
  double post_mean() const { return post_var() * (y.sum() / sigma2 + m / omega2); }
};

/// n = 10, sigma2 = 0.5, omega2 = 0.25.
inline Conjugate conjugate(Index n = 10, double sigma2 = 0.5, double omega2 = 0.25, double m = 1.0) {
  Vector y(n);
  for (Index j = 0; j < n; ++j) y(j) = 1.4 + 0.3 * std::sin(1.7 * static_cast<double>(j));
  return {m, omega2, sigma2, y};
}

/// The 32-individual synthetic warfarin dataset at the default seed.
inline nlme::SimulatedData warfarin_data(std::uint64_t seed = 1234, Index n = 32) {
  nlme::SimConfig c = nlme::SimConfig::warfarin();
  c.n_individuals = n;
  c.seed = seed;
  return nlme::simulate(c);
}

inline nlme::Posterior warfarin_posterior(Index individual = 0, std::uint64_t seed = 1234) {
  const auto data = warfarin_data(seed, individual + 1);
  return nlme::Posterior(data.records[static_cast<std::size_t>(individual)], nlme::warfarin_theta(),
                         nlme::pk1_oral_model());
}

}  // namespace fixtures

#endif  // NLME_TESTS_FIXTURES_HPP
