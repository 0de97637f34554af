#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"

namespace {

using namespace nlme;

Vector times_of(std::initializer_list<double> ts) {
  Vector t(static_cast<Index>(ts.size()));
  Index i = 0;
  for (double v : ts) t(i++) = v;
  return t;
}

TEST(Pk1Oral, ZeroAtDoseTime) {
  for (double ka : {0.1, 1.0, 7.0}) {
    EXPECT_EQ(pk1_oral(times_of({0.0}), ka, 8.0, 0.01, 100.0)(0), 0.0);
  }
}

TEST(Pk1Oral, EqualRatesLimit) {
  // ka = k = V = D = t = 1 gives exp(-1).
  EXPECT_NEAR(pk1_oral(times_of({1.0}), 1.0, 1.0, 1.0, 1.0)(0), std::exp(-1.0), 1e-15);
}

TEST(Pk1Oral, MatchesHighPrecisionClosedForm) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3.0, 2.0);
  const Vector t = default_time_grid();
  for (int rep = 0; rep < 200; ++rep) {
    const double ka = std::exp(u(rng)), V = 10.0 * std::exp(u(rng)), k = 0.05 * std::exp(u(rng));
    if (std::abs(ka - k) < 1e-6 * std::max(ka, k)) continue;
    const Vector c = pk1_oral(t, ka, V, k, 105.0);
    for (Index j = 0; j < t.size(); ++j) {
      const double want = oracle::pk_concentration_50(t(j), ka, V, k, 105.0);
      EXPECT_NEAR(c(j), want, 1e-12 * std::max(1.0, std::abs(want))) << "ka=" << ka << " k=" << k;
    }
  }
}

TEST(Pk1Oral, RejectsNonPositiveParameters) {
  const Vector t = times_of({1.0});
  EXPECT_THROW(pk1_oral(t, 0.0, 1.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(pk1_oral(t, 1.0, -1.0, 1.0, 1.0), DomainError);
  EXPECT_THROW(pk1_oral(t, 1.0, 1.0, 0.0, 1.0), DomainError);
  EXPECT_THROW(pk1_oral(t, 1.0, 1.0, 1.0, 0.0), DomainError);
  EXPECT_THROW(pk1_oral(t, std::numeric_limits<double>::quiet_NaN(), 1.0, 1.0, 1.0), DomainError);
}

TEST(Pk1Oral, ContinuousAcrossDegenerateBranch) {
  const Vector t = default_time_grid();
  const double k = 0.3;
  const Vector limit = pk1_oral(t, k, 5.0, k, 100.0);
  for (double rel : {2e-8, 1e-7, 1e-6}) {
    const Vector near = pk1_oral(t, k * (1.0 + rel), 5.0, k, 100.0);
    for (Index j = 0; j < t.size(); ++j) {
      EXPECT_NEAR(near(j), limit(j), 1e-5 * std::max(1.0, limit(j))) << rel;
    }
  }
}

TEST(Pk1Oral, SwapIdentity) {
  // c(ka, V, k) * V / ka is symmetric in (ka, k).
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-3.0, 1.0);
  const Vector t = default_time_grid();
  for (int rep = 0; rep < 50; ++rep) {
    const double a = std::exp(u(rng)), b = std::exp(u(rng));
    const Vector lhs = pk1_oral(t, a, 3.0, b, 10.0) * 3.0 / a;
    const Vector rhs = pk1_oral(t, b, 3.0, a, 10.0) * 3.0 / b;
    for (Index j = 0; j < t.size(); ++j) EXPECT_NEAR(lhs(j), rhs(j), 1e-12 * std::max(1.0, std::abs(lhs(j))));
  }
}

TEST(Jacobian, LinearModelIsExact) {
  const StructuralModel m = polynomial_model(2);
  const Vector t = times_of({0.0, 1.5, 4.0});
  Vector psi(2);
  psi << 0.3, -2.0;
  const JacobianResult r = jacobian(m, t, psi, 1.0);
  EXPECT_EQ(r.method, DiffMethod::analytic);
  for (Index j = 0; j < t.size(); ++j) {
    EXPECT_EQ(r.jac(j, 0), 1.0);
    EXPECT_EQ(r.jac(j, 1), t(j));
  }
}

TEST(Jacobian, LinearModelIndependentOfPsi) {
  const StructuralModel m = polynomial_model(3);
  const Vector t = times_of({0.5, 1.0, 2.0, 3.0});
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 5.0);
  const Matrix ref = jacobian(m, t, Vector::Zero(3), 1.0).jac;
  for (int rep = 0; rep < 10; ++rep) {
    Vector psi(3);
    for (Index l = 0; l < 3; ++l) psi(l) = n(rng);
    EXPECT_EQ((jacobian(m, t, psi, 1.0).jac - ref).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Jacobian, PkAnalyticMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const Vector t = default_time_grid();
  const StructuralModel m = pk1_oral_model();
  for (int rep = 0; rep < 40; ++rep) {
    Vector psi(3);
    psi << std::exp(0.5 * n(rng)), 8.0 * std::exp(0.2 * n(rng)), 0.01 * std::exp(0.3 * n(rng));
    const Matrix jac = pk1_oral_jacobian(t, psi(0), psi(1), psi(2), 105.0);
    for (Index l = 0; l < 3; ++l) {
      const double h = 1e-5 * psi(l);
      Vector up = psi, dn = psi, up2 = psi, dn2 = psi;
      up(l) += h;
      dn(l) -= h;
      up2(l) += 2 * h;
      dn2(l) -= 2 * h;
      const Vector fd = (-m.predict(t, up2, 105.0) + 8 * m.predict(t, up, 105.0) - 8 * m.predict(t, dn, 105.0) +
                         m.predict(t, dn2, 105.0)) / (12 * h);
      for (Index j = 0; j < t.size(); ++j) {
        EXPECT_NEAR(jac(j, l), fd(j), 1e-6 * std::max(1.0, std::abs(fd(j)))) << "col " << l << " row " << j;
      }
    }
  }
}

TEST(Jacobian, PkDegenerateBranchMatchesFiniteDifferences) {
  const Vector t = default_time_grid();
  const double k = 0.2;
  const Matrix jac = pk1_oral_jacobian(t, k, 4.0, k, 50.0);
  const Matrix off = pk1_oral_jacobian(t, k * (1 + 1e-5), 4.0, k, 50.0);
  for (Index j = 0; j < t.size(); ++j) {
    for (Index l = 0; l < 3; ++l) EXPECT_NEAR(jac(j, l), off(j, l), 1e-4 * std::max(1.0, std::abs(off(j, l))));
  }
}

TEST(Jacobian, LatentChainRule) {
  const PopulationParams theta = warfarin_theta();
  const auto data = fixtures::warfarin_data(3, 1);
  const IndividualRecord& rec = data.records[0];
  const StructuralModel m = pk1_oral_model();
  const LatentPoint phi = data.truth[0];
  const Matrix jphi = latent_jacobian(m, theta, rec, phi).jac;
  for (Index l = 0; l < 3; ++l) {
    const double h = 1e-5;
    LatentPoint up = phi, dn = phi;
    up(l) += h;
    dn(l) -= h;
    const Vector fd = (m.predict(rec.times(), theta.to_psi(up), rec.dose()) -
                       m.predict(rec.times(), theta.to_psi(dn), rec.dose())) / (2 * h);
    for (Index j = 0; j < rec.size(); ++j) EXPECT_NEAR(jphi(j, l), fd(j), 1e-6 * std::max(1.0, std::abs(fd(j))));
  }
}

TEST(Jacobian, FallsBackToCentralDifferences) {
  StructuralModel m;
  m.name = "expdecay";
  m.param_names = {"a", "b"};
  m.domain = {Interval{}, Interval{0.0, std::numeric_limits<double>::infinity()}};
  m.predict = [](const Vector& t, const Vector& psi, double) -> Vector {
    return (psi(0) * (-psi(1) * t.array()).exp()).matrix();
  };
  const Vector t = times_of({0.0, 0.5, 1.0, 2.0});
  Vector psi(2);
  psi << 2.0, 1e-7;  // close to the boundary: the step must shrink
  const JacobianResult r = jacobian(m, t, psi, 1.0);
  EXPECT_EQ(r.method, DiffMethod::central_difference);
  for (Index j = 0; j < t.size(); ++j) {
    const double e = std::exp(-psi(1) * t(j));
    EXPECT_NEAR(r.jac(j, 0), e, 1e-8);
    EXPECT_NEAR(r.jac(j, 1), -psi(0) * t(j) * e, 1e-6);
  }
}

TEST(Jacobian, NonFiniteDerivativeNamesEntry) {
  StructuralModel m = polynomial_model(2);
  m.analytic_jacobian = [](const Vector& t, const Vector&, double) {
    Matrix j = Matrix::Ones(t.size(), 2);
    j(1, 1) = std::numeric_limits<double>::infinity();
    return j;
  };
  try {
    jacobian(m, times_of({0.0, 1.0}), Vector::Zero(2), 1.0);
    FAIL() << "expected DerivativeError";
  } catch (const DerivativeError& e) {
    EXPECT_EQ(e.row(), 1);
    EXPECT_EQ(e.col(), 1);
  }
}

TEST(Jacobian, OutsideDomainThrows) {
  Vector psi(3);
  psi << 1.0, -1.0, 0.1;
  EXPECT_THROW(jacobian(pk1_oral_model(), times_of({1.0}), psi, 1.0), DomainError);
}

TEST(ModelRegistry, BuiltinsAndUnknownNames) {
  const ModelRegistry r = ModelRegistry::builtin();
  EXPECT_TRUE(r.contains("pk1_oral"));
  EXPECT_TRUE(r.contains("constant"));
  EXPECT_TRUE(r.contains("linear"));
  EXPECT_EQ(r.get("pk1_oral").dim(), 3);
  EXPECT_THROW(r.get("two_compartment"), InputError);
}

}  // namespace
