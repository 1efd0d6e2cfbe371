#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "hosar/inference.hpp"
#include "hosar/montecarlo.hpp"

using namespace hosar;

namespace {

Dataset replicate(const std::string& name, Index n, int rep, std::uint64_t seed = 13) {
  McDesign d = default_design(name);
  d.n = n;
  d.master_seed = seed;
  return simulate_replication(d, design_weights(d), rep);
}

EstimateReport newton(const Dataset& data, int steps = 3) {
  EstimatorConfig cfg;
  cfg.newton_steps = steps;
  return iterate_newton(data, cfg);
}

CovarianceEstimate with_se(const VectorXd& se) {
  CovarianceEstimate c;
  c.matrix = se.cwiseAbs2().asDiagonal();
  c.se = se;
  return c;
}

}  // namespace

TEST(ResidualMoments, KnownVector) {
  const VectorXd r = (VectorXd(4) << 1, -1, 3, -3).finished();
  const auto m = residual_moments(r);
  EXPECT_DOUBLE_EQ(m.sigma2, 5.0);
  EXPECT_DOUBLE_EQ(m.mu3, 0.0);
  EXPECT_DOUBLE_EQ(m.mu4, 41.0);
  const auto s = residual_moments((VectorXd(3) << 0, 0, 3).finished());
  EXPECT_DOUBLE_EQ(s.sigma2, 2.0);
  EXPECT_DOUBLE_EQ(s.mu3, 2.0);  // (-1 - 1 + 8) / 3
}

TEST(TStatistics, ZeroEstimateAndScaling) {
  ThetaD t;
  t.lambda = VectorXd::Zero(1);
  t.beta = (VectorXd(1) << 2.0).finished();
  const VectorXd a = t_statistics(t, with_se(VectorXd::Constant(2, 0.5)));
  EXPECT_EQ(a(0), 0.0);
  EXPECT_EQ(a(1), 4.0);
  const VectorXd b = t_statistics(t, with_se(VectorXd::Constant(2, 1.0)));
  EXPECT_EQ(b(1), a(1) / 2);
}

TEST(TStatistics, ZeroStandardErrorIsDegenerate) {
  ThetaD t;
  t.lambda = VectorXd::Zero(1);
  t.beta = VectorXd::Ones(1);
  try {
    t_statistics(t, with_se((VectorXd(2) << 1.0, 0.0).finished()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInference);
  }
  EXPECT_THROW(se_ratio(with_se(VectorXd::Ones(2)), with_se(VectorXd::Zero(2))), Error);
}

TEST(TStatistics, InvariantToRegressorRescaling) {
  const Dataset data = replicate("bounded_p2", 300, 0);
  Dataset scaled = data;
  scaled.X.col(1) *= 4.0;
  for (const Regime regime : {Regime::DivergentH, Regime::BoundedH}) {
    const auto a = newton(data);
    const auto b = newton(scaled);
    const VectorXd ta = t_statistics(a.theta_hat, covariance(data, a, regime));
    const VectorXd tb = t_statistics(b.theta_hat, covariance(scaled, b, regime));
    EXPECT_LT((ta - tb).cwiseAbs().maxCoeff(), 1e-7 * (1 + ta.cwiseAbs().maxCoeff()));
  }
}

TEST(CovDivergent, PureRegressionIsClassical) {
  const Dataset base = replicate("bounded_p2", 80, 1);
  const Dataset data{base.y, base.X, WeightSet(80, {}), std::nullopt};
  EstimateReport est;
  est.theta_hat.lambda = VectorXd(0);
  est.theta_hat.beta = (data.X.transpose() * data.X).ldlt().solve(data.X.transpose() * data.y);
  est.sigma2_hat = (data.y - data.X * est.theta_hat.beta).squaredNorm() / 80.0;
  const auto cov = cov_divergent_h(data, est);
  const MatrixXd classical = est.sigma2_hat * (data.X.transpose() * data.X).inverse();
  EXPECT_LT((cov.matrix - classical).cwiseAbs().maxCoeff(), 1e-12 * classical.cwiseAbs().maxCoeff());
  EXPECT_EQ(cov.regime, Regime::DivergentH);
}

TEST(CovBounded, GaussianMomentsGiveTwiceInverseXi) {
  const Dataset data = replicate("bounded_p2", 200, 2);
  const auto est = newton(data);
  const auto m = MomentInputs<double>::gaussian(est.sigma2_hat);
  const auto cov = cov_bounded_h(data, est, m);
  const MatrixXd expected = 2.0 * expected_hessian(data, est.theta_hat, est.sigma2_hat).inverse() / 200.0;
  EXPECT_LT((cov.matrix - expected).cwiseAbs().maxCoeff(), 1e-10 * expected.cwiseAbs().maxCoeff());
}

TEST(CovBounded, ResponseScaleEquivariance) {
  // y -> c y scales beta and the residuals by c: the lambda block must stay,
  // the cross block scale by c and the beta block by c^2.
  const Dataset data = replicate("bounded_t6_p2", 300, 3);
  const auto est = newton(data);
  const double c = 7.0;
  Dataset scaled = data;
  scaled.y *= c;
  EstimateReport est_c = est;
  est_c.theta_hat.beta *= c;
  est_c.sigma2_hat *= c * c;
  const MatrixXd a = cov_bounded_h(data, est).matrix;
  const MatrixXd b = cov_bounded_h(scaled, est_c).matrix;
  VectorXd d(4);
  d << 1, 1, c, c;
  const MatrixXd expected = d.asDiagonal() * a * d.asDiagonal();
  EXPECT_LT(((b - expected).array() / expected.array().abs().max(1e-300)).abs().maxCoeff(), 1e-9);
}

TEST(CovBounded, PositiveSemidefinite) {
  for (const std::string name : {"bounded_p2", "bounded_t6_p4", "het_p2"}) {
    for (int rep = 0; rep < 3; ++rep) {
      const Dataset data = replicate(name, 300, rep);
      const auto cov = cov_bounded_h(data, newton(data));
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov.matrix);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * es.eigenvalues().cwiseAbs().maxCoeff()) << name;
      EXPECT_TRUE(cov.moment_inputs_used.has_value());
    }
  }
}

TEST(CovIv, ShapesAndPositivity) {
  const Dataset data = replicate("bounded_p2", 200, 0);
  const auto iv = estimate_iv(data);
  const auto cov = cov_iv(data, iv);
  EXPECT_EQ(cov.matrix.rows(), 4);
  EXPECT_TRUE((cov.se.array() > 0).all());
  EXPECT_TRUE(cov.matrix == cov.matrix.transpose());
}

TEST(Regimes, CollapseOnDivergentDesign) {
  const Dataset data = replicate("divergent_p2", 800, 0);
  const auto est = newton(data, 1);
  const MatrixXd a = cov_divergent_h(data, est).matrix;
  const MatrixXd b = cov_bounded_h(data, est).matrix;
  EXPECT_LT((a - b).lpNorm<Eigen::Infinity>() / a.lpNorm<Eigen::Infinity>(), 0.1);
}

TEST(Regimes, StandardErrorsShrinkAtRootN) {
  // quadrupling n halves the standard errors
  double small = 0, large = 0;
  for (int rep = 0; rep < 5; ++rep) {
    const Dataset a = replicate("bounded_p2", 200, rep);
    const Dataset b = replicate("bounded_p2", 800, rep);
    small += cov_bounded_h(a, newton(a)).se(2);
    large += cov_bounded_h(b, newton(b)).se(2);
  }
  EXPECT_NEAR(small / large, 2.0, 0.3);
}

TEST(Regimes, PowerAgainstZero) {
  int rejections = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Dataset data = replicate("bounded_p2", 400, rep, 99);
    const auto est = newton(data);
    const VectorXd t = t_statistics(est.theta_hat, cov_bounded_h(data, est));
    if (std::abs(t(3)) > 2.0) ++rejections;
  }
  EXPECT_GE(rejections, 90);
}

TEST(Regimes, DivergentCoverage) {
  // one Newton step from IV on the divergent design
  McDesign d = default_design("divergent_p2");
  d.n = 400;
  d.master_seed = 4242;
  const WeightSet w = design_weights(d);
  const int reps = 1000;
  int covered = 0;
  for (int rep = 0; rep < reps; ++rep) {
    const Dataset data = simulate_replication(d, w, rep);
    const auto est = newton(data, 1);
    const auto cov = cov_divergent_h(data, est);
    if (std::abs(est.theta_hat.beta(0) - d.true_params.beta(0)) <= 1.959963984540054 * cov.se(2)) ++covered;
  }
  const double rate = double(covered) / reps;
  EXPECT_NEAR(rate, 0.95, 0.02) << rate;
}

TEST(Covariance, DispatchesOnRegime) {
  const Dataset data = replicate("bounded_p2", 150, 0);
  const auto est = newton(data);
  EXPECT_EQ(covariance(data, est, Regime::DivergentH).regime, Regime::DivergentH);
  EXPECT_EQ(covariance(data, est, Regime::BoundedH).regime, Regime::BoundedH);
  EXPECT_EQ(to_string(Regime::BoundedH), "bounded");
}
