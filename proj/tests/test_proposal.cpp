#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"

namespace {

using namespace nlme;

MapResult converged_at(const LatentPoint& phi) {
  MapResult r;
  r.phi_hat = phi;
  r.converged = true;
  r.grad_norm = 0.0;
  return r;
}

double min_eigenvalue(const Matrix& a) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

// f(t, psi) = psi^2 on one coordinate with an analytic derivative.
StructuralModel square_model() {
  StructuralModel m;
  m.name = "square";
  m.param_names = {"a"};
  m.domain = {Interval{}};
  m.predict = [](const Vector& t, const Vector& psi, double) -> Vector {
    return Vector::Constant(t.size(), psi(0) * psi(0));
  };
  m.analytic_jacobian = [](const Vector& t, const Vector& psi, double) -> Matrix {
    return Matrix::Constant(t.size(), 1, 2.0 * psi(0));
  };
  return m;
}

Posterior linear_posterior(const Vector& y) {
  Matrix omega(2, 2);
  omega << 0.5, 0.1, 0.1, 0.3;
  const PopulationParams theta(Vector::Zero(2), omega, 0.4, {Transform::identity, Transform::identity});
  return Posterior(IndividualRecord("lin", Vector::LinSpaced(y.size(), 0.5, 4.0), y, 1.0), theta, polynomial_model(2));
}

TEST(LinearizedProposal, ConjugateVariance) {
  const fixtures::Conjugate c = fixtures::conjugate();
  const Posterior post = c.posterior();
  const GaussianProposal prop = linearized_proposal(post, find_map(post));
  EXPECT_NEAR(prop.cov()(0, 0), c.post_var(), 1e-12);
  EXPECT_NEAR(prop.mean()(0), c.post_mean(), 1e-8);
  EXPECT_EQ(prop.kind(), ProposalKind::linearized);
}

TEST(LinearizedProposal, FlatModelGivesPrior) {
  StructuralModel flat = polynomial_model(2);
  flat.predict = [](const Vector& t, const Vector&, double) -> Vector { return Vector::Zero(t.size()); };
  flat.analytic_jacobian = [](const Vector& t, const Vector&, double) -> Matrix { return Matrix::Zero(t.size(), 2); };
  Matrix omega(2, 2);
  omega << 0.5, 0.1, 0.1, 0.3;
  const PopulationParams theta(Vector::Zero(2), omega, 0.4, {Transform::identity, Transform::identity});
  const Posterior post(IndividualRecord("f", Vector::LinSpaced(3, 1, 3), Vector::Ones(3), 1.0), theta, flat);
  const GaussianProposal prop = linearized_proposal(post, converged_at(Vector::Zero(2)));
  EXPECT_LT((prop.cov() - omega).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LinearizedProposal, MatchesAdjugateInverse) {
  const auto data = fixtures::warfarin_data();
  const PopulationParams theta = warfarin_theta();
  for (std::size_t i = 0; i < 5; ++i) {
    const Posterior post(data.records[i], theta, pk1_oral_model());
    const MapResult map = find_map(post);
    const GaussianProposal prop = linearized_proposal(post, map);
    const Vector psi = map.phi_hat.array().exp();
    const Matrix jac = pk1_oral_jacobian(post.record().times(), psi(0), psi(1), psi(2), post.record().dose()) *
                       psi.asDiagonal();
    const Matrix precision = jac.transpose() * jac / theta.sigma2() + theta.omega().inverse();
    const Matrix want = oracle::adjugate_inverse(precision);
    EXPECT_LT((prop.cov() - want).cwiseAbs().maxCoeff(), 1e-8 * want.cwiseAbs().maxCoeff());
  }
}

TEST(LinearizedProposal, NoWiderThanPrior) {
  const auto data = fixtures::warfarin_data(8, 10);
  const PopulationParams theta = warfarin_theta();
  for (const auto& rec : data.records) {
    const Posterior post(rec, theta, pk1_oral_model());
    const GaussianProposal prop = linearized_proposal(post, find_map(post));
    EXPECT_GE(min_eigenvalue(theta.omega() - prop.cov()), -1e-12);
    EXPECT_LT((prop.cov() - prop.cov().transpose()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(LinearizedProposal, PrecisionShiftDoesNotDependOnDataForLinearModels) {
  Vector y1(5), y2(5);
  y1 << 1, 2, 3, 2, 1;
  y2 << -4, 0.5, 9, 1, 1;
  const Posterior p1 = linear_posterior(y1), p2 = linear_posterior(y2);
  const Matrix d1 = linearized_proposal(p1, find_map(p1)).cov().inverse() - p1.theta().omega_inv();
  const Matrix d2 = linearized_proposal(p2, find_map(p2)).cov().inverse() - p2.theta().omega_inv();
  EXPECT_LT((d1 - d2).cwiseAbs().maxCoeff(), 1e-9 * d1.cwiseAbs().maxCoeff());
}

TEST(LaplaceProposal, EqualsLinearizedForLinearModels) {
  Vector y(5);
  y << 0.3, 1.2, 2.8, 3.1, 5.5;
  const Posterior post = linear_posterior(y);
  const MapResult map = find_map(post);
  const Matrix a = laplace_proposal(post, map).cov();
  const Matrix b = linearized_proposal(post, map).cov();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-8 * b.cwiseAbs().maxCoeff());
}

TEST(LaplaceProposal, ObservedInformationOfSquareModel) {
  const PopulationParams theta(Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.5), 0.2, {Transform::identity});
  Vector y(4);
  y << 0.9, 1.7, 1.1, 2.5;
  const Posterior post(IndividualRecord("sq", Vector::LinSpaced(4, 1, 4), y, 1.0), theta, square_model());
  for (double a : {0.4, 1.0, 1.6}) {
    const double f = a * a, fp = 2 * a, fpp = 2.0;
    double want = 0.0;
    for (Index j = 0; j < 4; ++j) want += (fp * fp - (y(j) - f) * fpp) / 0.2;
    EXPECT_NEAR(observed_information(post, Vector::Constant(1, a))(0, 0), want, 1e-6 * std::abs(want));
  }
}

TEST(LaplaceProposal, ZeroResidualMatchesLinearized) {
  const PopulationParams theta = warfarin_theta();
  const LatentPoint mode = theta.prior_mean();
  const Vector t = default_time_grid();
  const Vector y = pk1_oral_model().predict(t, theta.to_psi(mode), 105.0);
  const Posterior post(IndividualRecord("z", t, y, 105.0), theta, pk1_oral_model());
  const MapResult map = find_map(post);
  ASSERT_TRUE(map.converged);
  EXPECT_LT((map.phi_hat - mode).lpNorm<Eigen::Infinity>(), 1e-6);
  const Matrix a = laplace_proposal(post, map).cov();
  const Matrix b = linearized_proposal(post, map).cov();
  EXPECT_LT((a - b).norm(), 1e-6 * b.norm());
}

TEST(LaplaceProposal, ClipsIndefiniteInformation) {
  // Large positive residuals make the square model's information negative.
  const PopulationParams theta(Vector::Constant(1, 0.0), Matrix::Constant(1, 1, 0.5), 0.2, {Transform::identity});
  const Posterior post(IndividualRecord("sq", Vector::LinSpaced(3, 1, 3), Vector::Constant(3, 5.0), 1.0), theta,
                       square_model());
  const Vector at = Vector::Constant(1, 0.1);
  ASSERT_LT(observed_information(post, at)(0, 0), 0.0);
  const GaussianProposal prop = laplace_proposal(post, converged_at(at));
  EXPECT_NEAR(prop.cov()(0, 0), 0.5, 1e-12);
}

TEST(Proposals, RefuseUnconvergedMap) {
  const Posterior post = fixtures::warfarin_posterior();
  MapResult map = find_map(post);
  map.converged = false;
  EXPECT_THROW(linearized_proposal(post, map), Error);
  EXPECT_THROW(laplace_proposal(post, map), Error);
  EXPECT_NO_THROW(linearized_proposal(post, map, true));
}

TEST(ClipToPsd, ZeroesNegativeEigenvalues) {
  Matrix a(2, 2);
  a << 1, 0, 0, -1;
  const Matrix c = clip_to_psd(a);
  EXPECT_NEAR(c(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(c(1, 1), 0.0, 1e-15);
  Matrix psd(2, 2);
  psd << 2, 1, 1, 2;
  EXPECT_EQ(clip_to_psd(psd), psd);
}

TEST(GaussianProposal, TinyCovarianceReturnsMean) {
  Vector mean(2);
  mean << 1.5, -0.5;
  const GaussianProposal prop(mean, Matrix::Identity(2, 2) * 1e-300, ProposalKind::prior);
  Rng rng = make_rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_LT((prop.sample(rng) - mean).cwiseAbs().maxCoeff(), 1e-140);
}

TEST(GaussianProposal, SampleMomentsConverge) {
  std::mt19937_64 g(4);
  const Matrix cov = oracle::random_spd(g, 3);
  Vector mean(3);
  mean << 0.5, -1.0, 2.0;
  const GaussianProposal prop(mean, cov, ProposalKind::prior);
  Rng rng = make_rng(99);
  const int n = 200000;
  Vector sum = Vector::Zero(3);
  Matrix outer = Matrix::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const Vector x = prop.sample(rng) - mean;
    sum += x;
    outer += x * x.transpose();
  }
  const Vector m = sum / n;
  const Matrix c = outer / n - m * m.transpose();
  for (Index l = 0; l < 3; ++l) EXPECT_LT(std::abs(m(l)), 5.0 * std::sqrt(cov(l, l) / n));
  EXPECT_LT((c - cov).cwiseAbs().maxCoeff(), 0.02 * cov.cwiseAbs().maxCoeff());
}

TEST(GaussianProposal, SamplingIsDeterministic) {
  const GaussianProposal prop = prior_proposal(warfarin_theta());
  Rng a = make_rng(5), b = make_rng(5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(proposal_sample(prop, a), proposal_sample(prop, b));
}

TEST(GaussianProposal, LogpdfMatchesExplicitFormula) {
  std::mt19937_64 g(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix cov = oracle::random_spd(g, 3);
    Vector mean(3), x(3);
    for (Index l = 0; l < 3; ++l) {
      mean(l) = n(g);
      x(l) = n(g);
    }
    const GaussianProposal prop(mean, cov, ProposalKind::linearized);
    const double want = oracle::mvn_logpdf_explicit(x, mean, cov);
    EXPECT_NEAR(proposal_logpdf(prop, x), want, 1e-10 * std::abs(want));
  }
  const GaussianProposal unit(Vector::Zero(1), Matrix::Identity(1, 1), ProposalKind::prior);
  EXPECT_NEAR(unit.logpdf(Vector::Zero(1)), -0.5 * kLog2Pi, 1e-15);
}

TEST(GaussianProposal, JitterRecoversSingularCovariance) {
  Matrix cov(2, 2);
  cov << 1, 1, 1, 1;
  const GaussianProposal prop(Vector::Zero(2), cov, ProposalKind::laplace);
  EXPECT_GT(prop.jitter(), 0.0);
  EXPECT_LE(prop.jitter(), 1e-4);
}

TEST(GaussianProposal, IndefiniteCovarianceFails) {
  Matrix cov(2, 2);
  cov << 1, 0, 0, -1;
  try {
    GaussianProposal prop(Vector::Zero(2), cov, ProposalKind::laplace);
    FAIL() << "expected FactorizationError";
  } catch (const FactorizationError& e) {
    EXPECT_NE(std::string(e.what()).find("eigenvalue range"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("condition number"), std::string::npos);
  }
}

TEST(InfoGap, VanishesForLinearModels) {
  Vector y(5);
  y << 0.3, 1.2, 2.8, 3.1, 5.5;
  const Posterior post = linear_posterior(y);
  EXPECT_LT(expected_info_gap(post, find_map(post), 200, 3), 1e-8);
}

TEST(InfoGap, WithinMonteCarloErrorOnWarfarin) {
  const auto data = fixtures::warfarin_data(1234, 4);
  for (const auto& rec : data.records) {
    const Posterior post(rec, warfarin_theta(), pk1_oral_model());
    const InfoGapReport r = expected_info_gap_report(post, find_map(post), 4000, 21);
    EXPECT_LT(r.gap, 3.0 * r.std_error) << rec.id();
  }
}

TEST(InfoGap, ShrinksLikeInverseRootN) {
  const Posterior post = fixtures::warfarin_posterior(2);
  const MapResult map = find_map(post);
  double small = 0.0, large = 0.0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    small += expected_info_gap(post, map, 250, 100 + s);
    large += expected_info_gap(post, map, 4000, 200 + s);
  }
  const double ratio = small / large;  // ~ sqrt(16) = 4
  EXPECT_GT(ratio, 4.0 / 3.0);
  EXPECT_LT(ratio, 12.0);
}

TEST(InfoGap, SingleDrawHasNoStandardError) {
  const Posterior post = fixtures::warfarin_posterior(0);
  EXPECT_TRUE(std::isnan(expected_info_gap_report(post, find_map(post), 1, 1).std_error));
  EXPECT_THROW(expected_info_gap(post, find_map(post), 0, 1), InputError);
}

}  // namespace
