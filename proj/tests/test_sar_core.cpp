#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hosar/sar_core.hpp"

using namespace hosar;

namespace {

using Data = SarDataset<double>;
using WeightSet = SpatialWeightSet<double>;
using Th = Theta<double>;

MatrixXd uniform_matrix(Index rows, Index cols, Stream& s) {
  MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) m(r, c) = s.uniform();
  }
  return m;
}

Data circulant_data(Index n, Index p, std::uint64_t seed, const Th& theta0) {
  Stream s(seed);
  MatrixXd X = uniform_matrix(n, theta0.k(), s);
  auto w = circulant_weights<double>(n, p);
  VectorXd y = simulate(w, X, theta0.beta, theta0.lambda, ErrorDist::StdNormal, seed);
  return Data{y, X, w, std::nullopt};
}

Th theta(std::initializer_list<double> lambda, std::initializer_list<double> beta) {
  Th t;
  t.lambda = Eigen::Map<const VectorXd>(lambda.begin(), static_cast<Index>(lambda.size()));
  t.beta = Eigen::Map<const VectorXd>(beta.begin(), static_cast<Index>(beta.size()));
  return t;
}

// Dense G_i = W_i (I - sum lambda W)^{-1}, formed independently of Resolvent.
std::vector<MatrixXd> dense_G(const WeightSet& w, const VectorXd& lambda) {
  MatrixXd s = MatrixXd::Identity(w.n(), w.n());
  for (Index i = 0; i < w.p(); ++i) s -= lambda(i) * MatrixXd(w[i]);
  const MatrixXd sinv = s.inverse();
  std::vector<MatrixXd> g;
  for (Index i = 0; i < w.p(); ++i) g.push_back(MatrixXd(w[i]) * sinv);
  return g;
}

}  // namespace

TEST(SpatialLags, ZeroResponse) {
  const auto w = circulant_weights<double>(7, 2);
  EXPECT_EQ(spatial_lags(w, VectorXd(VectorXd::Zero(7))).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SpatialLags, HandMultiply) {
  SparseXd m(2, 2);
  m.insert(0, 1) = 0.5;
  m.insert(1, 0) = 0.5;
  const WeightSet w(2, {m});
  const MatrixXd r = spatial_lags(w, VectorXd((VectorXd(2) << 2, 4).finished()));
  EXPECT_EQ(r(0, 0), 2.0);
  EXPECT_EQ(r(1, 0), 1.0);
}

TEST(SpatialLags, RowStochasticFixesConstants) {
  const auto w = circulant_weights<double>(9, 1);
  const MatrixXd r = spatial_lags(w, VectorXd(VectorXd::Constant(9, 3.5)));
  EXPECT_LT((r.array() - 3.5).abs().maxCoeff(), 1e-14);
}

TEST(Simulate, ZeroLambdaIsExact) {
  Stream s(3);
  const MatrixXd X = uniform_matrix(30, 2, s);
  const VectorXd u = draw_errors(X, ErrorDist::StdNormal, s);
  const VectorXd beta = (VectorXd(2) << 1, 0.5).finished();
  const auto w = circulant_weights<double>(30, 2);
  const VectorXd y = simulate(w, X, beta, VectorXd(VectorXd::Zero(2)), u);
  EXPECT_TRUE(y == X * beta + u);
}

TEST(Simulate, SolvesReducedForm) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  Stream s(8);
  const MatrixXd X = uniform_matrix(50, 2, s);
  const VectorXd u = draw_errors(X, ErrorDist::T6, s);
  const auto w = circulant_weights<double>(50, 2);
  const VectorXd y = simulate(w, X, t0.beta, t0.lambda, u);
  const VectorXd lhs = spatial_filter(w, t0.lambda) * y;
  EXPECT_LT((lhs - X * t0.beta - u).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Simulate, PureFunctionOfSeed) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto a = circulant_data(40, 2, 77, t0);
  const auto b = circulant_data(40, 2, 77, t0);
  EXPECT_TRUE(a.y == b.y);
}

TEST(Simulate, HeteroskedasticScalesAverageOne) {
  Stream s(11);
  const MatrixXd X = uniform_matrix(300, 2, s);
  const VectorXd h = heteroskedastic_variances(X);
  EXPECT_NEAR(h.mean(), 1.0, 1e-12);
  EXPECT_THROW(heteroskedastic_variances(MatrixXd(X.leftCols(1))), Error);
}

TEST(Simulate, T6DrawsHaveVarianceThreeHalves) {
  Stream s(12);
  const Index m = 200000;
  double sum = 0;
  double sq = 0;
  for (Index i = 0; i < m; ++i) {
    const double t = s.student_t(6.0);
    sum += t;
    sq += t * t;
  }
  const double var = sq / double(m) - (sum / double(m)) * (sum / double(m));
  // Var(T^2) = mu4 - sigma^4 = 27/2 - 9/4
  EXPECT_NEAR(var, 1.5, 4 * std::sqrt((13.5 - 2.25) / double(m)));
}

TEST(SpatialSystem, NonpositiveDeterminantAndSingularity) {
  const auto w = circulant_weights<double>(5, 1);
  // eigenvalues of W are cos(2 pi k / 5); lambda = 1.5 flips exactly one sign
  SpatialSystem<double> sys(w, VectorXd::Constant(1, 1.5));
  EXPECT_EQ(sys.det_sign(), -1);
  try {
    (void)sys.log_det();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonpositiveDeterminant);
  }
  try {
    SpatialSystem<double> singular(w, VectorXd::Constant(1, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularModel);
  }
}

TEST(SpatialSystem, SparseAndDensePathsAgree) {
  const auto w = circulant_weights<double>(300, 2);  // fill about 1.7%: sparse path
  const VectorXd lambda = (VectorXd(2) << 0.35, -0.4).finished();
  SpatialSystem<double> sys(w, lambda);
  const MatrixXd s = MatrixXd(spatial_filter(w, lambda));
  Eigen::PartialPivLU<MatrixXd> lu(s);
  const double dense_logdet = lu.matrixLU().diagonal().cwiseAbs().array().log().sum();
  EXPECT_NEAR(sys.log_abs_det(), dense_logdet, 1e-10 * std::abs(dense_logdet) + 1e-12);
  EXPECT_EQ(sys.det_sign(), 1);
  const VectorXd b = VectorXd::LinSpaced(300, -1, 1);
  EXPECT_LT((sys.solve(b) - lu.solve(b)).norm(), 1e-10);
}

TEST(Neg2Loglik, ZeroParameters) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto data = circulant_data(60, 2, 4, t0);
  const double v = neg2_loglik(data, theta({0, 0}, {0, 0}), 1.0);
  EXPECT_NEAR(v, std::log(2 * std::numbers::pi) + data.y.squaredNorm() / 60.0, 1e-13);
}

TEST(Neg2Loglik, TruthBeatsPerturbationOnAverage) {
  const auto t0 = theta({0.3, 0.2}, {1, 0.5});
  Stream pert(5);
  double gap = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto data = circulant_data(200, 2, 1000 + static_cast<std::uint64_t>(rep), t0);
    Th moved = t0;
    for (Index i = 0; i < 2; ++i) moved.lambda(i) += pert.normal(0, 0.05);
    for (Index i = 0; i < 2; ++i) moved.beta(i) += pert.normal(0, 0.05);
    gap += neg2_loglik(data, moved, 1.0) - neg2_loglik(data, t0, 1.0);
  }
  EXPECT_GT(gap / 100, 0.0);
}

class FiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(FiniteDifference, ScoreAndHessianMatchFiniteDifferences) {
  const int p = GetParam();
  Stream s(static_cast<std::uint64_t>(40 + p));
  for (int point = 0; point < 5; ++point) {
    Th t0;
    t0.lambda = VectorXd::Constant(p, 0.3);
    t0.beta = (VectorXd(2) << 1, 0.5).finished();
    const auto data = circulant_data(100, p, static_cast<std::uint64_t>(point), t0);
    Th at;
    at.lambda = VectorXd(p);
    for (Index i = 0; i < p; ++i) at.lambda(i) = s.uniform(-0.4, 0.4) / double(p);
    at.beta = (VectorXd(2) << s.uniform(0, 2), s.uniform(-1, 1)).finished();
    const double s2 = s.uniform(0.5, 2.0);

    const auto d = score_and_hessian(data, at, s2);
    const VectorXd v = at.stacked();
    const double h = 1e-6;
    VectorXd fd(v.size());
    MatrixXd fdh(v.size(), v.size());
    for (Index j = 0; j < v.size(); ++j) {
      VectorXd up = v, dn = v;
      up(j) += h;
      dn(j) -= h;
      const auto tu = Th::from_stacked(up, p);
      const auto td = Th::from_stacked(dn, p);
      fd(j) = (neg2_loglik(data, tu, s2) - neg2_loglik(data, td, s2)) / (2 * h);
      fdh.col(j) = (score(data, tu, s2) - score(data, td, s2)) / (2 * h);
    }
    EXPECT_LT((d.score - fd).lpNorm<Eigen::Infinity>() / (1 + d.score.lpNorm<Eigen::Infinity>()), 1e-6);
    EXPECT_LT((d.hessian - fdh).lpNorm<Eigen::Infinity>() / (1 + d.hessian.lpNorm<Eigen::Infinity>()), 1e-5);
    EXPECT_TRUE(d.hessian == d.hessian.transpose());
    EXPECT_TRUE(d.hessian.bottomRightCorner(2, 2) == expected_hessian(data, at, s2).bottomRightCorner(2, 2));
  }
}

INSTANTIATE_TEST_SUITE_P(P, FiniteDifference, ::testing::Values(1, 2, 3));

TEST(Score, ZeroLambdaDropsTrace) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto data = circulant_data(40, 2, 9, t0);
  const auto at = theta({0, 0}, {0.7, 0.2});
  const double s2 = 1.3;
  const VectorXd xi = score(data, at, s2);
  const VectorXd gap = data.X * at.beta - data.y;
  for (Index i = 0; i < 2; ++i) {
    const double expected = 2.0 / (s2 * 40) * (data.weights[i] * data.y).dot(gap);
    EXPECT_NEAR(xi(i), expected, 1e-13);
  }
}

TEST(Score, MeanZeroAtTruth) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const int reps = 400;
  MatrixXd draws(4, reps);
  for (int r = 0; r < reps; ++r) draws.col(r) = score(circulant_data(200, 2, 5000 + static_cast<std::uint64_t>(r), t0), t0, 1.0);
  const VectorXd mean = draws.rowwise().mean();
  const VectorXd sd = ((draws.colwise() - mean).array().square().rowwise().sum() / (reps - 1)).sqrt();
  for (Index i = 0; i < 4; ++i) EXPECT_LT(std::abs(mean(i)), 3 * sd(i) / std::sqrt(double(reps))) << i;
}

TEST(Hessian, PureRegressionBlock) {
  // p = 0: no weight matrices at all
  Stream s(2);
  const MatrixXd X = uniform_matrix(25, 3, s);
  const VectorXd y = VectorXd::LinSpaced(25, -1, 2);
  const Data data{y, X, WeightSet(25, {}), std::nullopt};
  Th at;
  at.lambda = VectorXd(0);
  at.beta = VectorXd::Ones(3);
  const MatrixXd h = hessian(data, at, 2.0);
  EXPECT_LT((h - 2.0 / (25 * 2.0) * X.transpose() * X).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::LLT<MatrixXd> llt(h);
  EXPECT_EQ(llt.info(), Eigen::Success);
}

TEST(Traces, ZeroLambdaIsTraceOfWeights) {
  const auto w = random_sparse_weights<double>(50, 2, 17);
  SpatialSystem<double> sys(w, VectorXd::Zero(2));
  Resolvent<double> res(w, sys);
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) {
      const double expected = (MatrixXd(w[j]) * MatrixXd(w[i])).trace();
      EXPECT_NEAR(trace_GjGi(res, j, i, false), expected, 1e-12);
    }
  }
}

TEST(Traces, MatchDenseOracleAndCyclicity) {
  const auto w = circulant_weights<double>(50, 3);
  SparseXd asym = w[0];
  asym.coeffRef(0, 1) += 0.3;  // break symmetry so G' differs from G
  const WeightSet ws(50, {asym, w[1], w[2]});
  const VectorXd lambda = (VectorXd(3) << 0.2, -0.3, 0.25).finished();
  SpatialSystem<double> sys(ws, lambda);
  Resolvent<double> res(ws, sys);
  const auto g = dense_G(ws, lambda);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(res.G(i).trace(), g[static_cast<std::size_t>(i)].trace(), 1e-12);
    for (Index j = 0; j < 3; ++j) {
      const auto& gi = g[static_cast<std::size_t>(i)];
      const auto& gj = g[static_cast<std::size_t>(j)];
      EXPECT_NEAR(trace_GjGi(res, j, i, false), (gj * gi).trace(), 1e-10);
      EXPECT_NEAR(trace_GjGi(res, j, i, true), (gj.transpose() * gi).trace(), 1e-10);
      EXPECT_NEAR(trace_GjGi(res, j, i, false), trace_GjGi(res, i, j, false), 1e-10);
    }
  }
}

TEST(Traces, TwoByTwoClosedForm) {
  SparseXd m(2, 2);
  m.insert(0, 1) = 0.5;
  m.insert(1, 0) = 0.5;
  const WeightSet w(2, {m});
  SpatialSystem<double> sys(w, VectorXd::Constant(1, 0.4));
  Resolvent<double> res(w, sys);
  // S = [[1, -.2], [-.2, 1]], G = W S^{-1} = [[.1, .5], [.5, .1]] / .96
  EXPECT_NEAR(trace_GjGi(res, 0, 0, false), 2 * (0.01 + 0.25) / (0.96 * 0.96), 1e-15);
  EXPECT_NEAR(res.G(0).trace(), 0.2 / 0.96, 1e-15);
}

TEST(ExpectedHessian, DenseBruteForce) {
  const auto t0 = theta({0.3, 0.2}, {1, 0.5});
  auto data = circulant_data(50, 2, 21, t0);
  SparseXd asym = data.weights[1];
  asym.coeffRef(3, 7) = 0.2;
  data.weights = WeightSet(50, {data.weights[0], asym});
  const double s2 = 1.7;
  const MatrixXd xi = expected_hessian(data, t0, s2);

  const auto g = dense_G(data.weights, t0.lambda);
  MatrixXd a(50, 2);
  for (Index i = 0; i < 2; ++i) a.col(i) = g[static_cast<std::size_t>(i)] * data.X * t0.beta;
  MatrixXd expected(4, 4);
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) {
      const auto& gi = g[static_cast<std::size_t>(i)];
      const auto& gj = g[static_cast<std::size_t>(j)];
      expected(i, j) = 2.0 / 50 * ((gj * gi).trace() + (gj.transpose() * gi).trace() + a.col(i).dot(a.col(j)) / s2);
    }
  }
  expected.topRightCorner(2, 2) = 2.0 / (50 * s2) * a.transpose() * data.X;
  expected.bottomLeftCorner(2, 2) = expected.topRightCorner(2, 2).transpose();
  expected.bottomRightCorner(2, 2) = 2.0 / (50 * s2) * data.X.transpose() * data.X;
  EXPECT_LT((xi - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Omega, VanishesUnderGaussianMoments) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto data = circulant_data(40, 2, 1, t0);
  const MatrixXd o = score_variance_correction(data, t0, MomentInputs<double>::gaussian(1.3));
  EXPECT_EQ(o.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Omega, VanishesAtZeroLambdaWithZeroDiagonals) {
  const auto t0 = theta({0.0, 0.0}, {1, 0.5});
  const auto data = circulant_data(40, 2, 1, t0);
  const MatrixXd o = score_variance_correction(data, t0, MomentInputs<double>{0.7, 9.0, 1.5});
  EXPECT_EQ(o.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Omega, MatchesElementwiseSums) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto data = circulant_data(30, 2, 6, t0);
  const MomentInputs<double> m{0.8, 7.0, 1.4};
  const MatrixXd o = score_variance_correction(data, t0, m);
  const auto g = dense_G(data.weights, t0.lambda);
  const double n = 30;
  const double s4 = m.sigma2 * m.sigma2;
  for (Index i = 0; i < 2; ++i) {
    const MatrixXd ci = g[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(i)].transpose();
    for (Index j = 0; j < 2; ++j) {
      const MatrixXd cj = g[static_cast<std::size_t>(j)] + g[static_cast<std::size_t>(j)].transpose();
      const VectorXd bi = g[static_cast<std::size_t>(i)] * data.X * t0.beta;
      const VectorXd bj = g[static_cast<std::size_t>(j)] * data.X * t0.beta;
      double third = 0, fourth = 0;
      for (Index r = 0; r < 30; ++r) {
        third += ci(r, r) * bj(r) + cj(r, r) * bi(r);
        fourth += ci(r, r) * cj(r, r);
      }
      EXPECT_NEAR(o(i, j), 2 * m.mu3 / (n * s4) * third + (m.mu4 - 3 * s4) / (n * s4) * fourth, 1e-12);
    }
    for (Index b = 0; b < 2; ++b) {
      double acc = 0;
      for (Index r = 0; r < 30; ++r) acc += ci(r, r) * data.X(r, b);
      EXPECT_NEAR(o(2 + b, i), 2 * m.mu3 / (n * s4) * acc, 1e-12);
      EXPECT_EQ(o(2 + b, i), o(i, 2 + b));
    }
  }
  EXPECT_EQ(o.bottomRightCorner(2, 2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Omega, RejectsImpossibleMoments) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto data = circulant_data(20, 2, 6, t0);
  EXPECT_THROW(score_variance_correction(data, t0, MomentInputs<double>{0, 0.5, 1.0}), Error);
}

TEST(Dataset, ValidationCatchesRankAndShape) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  auto data = circulant_data(20, 2, 6, t0);
  EXPECT_NO_THROW(validate_dataset(data));
  auto bad = data;
  bad.X.col(1) = 2 * bad.X.col(0);
  EXPECT_THROW(validate_dataset(bad), Error);
  bad = data;
  bad.Z = MatrixXd::Ones(20, 2);
  EXPECT_THROW(validate_dataset(bad), Error);
  bad = data;
  bad.y.conservativeResize(19);
  EXPECT_THROW(validate_dataset(bad), Error);
}

TEST(ObjectiveState, ResidualRecomputes) {
  const auto t0 = theta({0.4, 0.5}, {1, 0.5});
  const auto data = circulant_data(80, 2, 6, t0);
  ObjectiveState<double> st(data, t0, 1.0);
  const VectorXd direct = spatial_filter(data.weights, t0.lambda) * data.y - data.X * t0.beta;
  EXPECT_LT((st.resid() - direct).norm(), 1e-10 * direct.norm());
  EXPECT_THROW(ObjectiveState<double>(data, t0, -1.0), Error);
}

TEST(Omega, SkewedErrorsMatchBruteForceScoreVariance) {
  // centered exponential errors: sigma^2 = 1, mu3 = 2, mu4 = 9, so both
  // the third- and fourth-moment terms are active
  const Index n = 30;
  const auto t0 = theta({0.3, 0.2}, {1, 0.5});
  SparseXd asym = circulant_weight<double>(1, n);
  asym.coeffRef(2, 5) += 0.4;
  const WeightSet w(n, {asym, circulant_weight<double>(2, n)});
  Stream xs(31);
  const MatrixXd X = uniform_matrix(n, 2, xs);
  const Data data{VectorXd::Zero(n), X, w, std::nullopt};
  const MatrixXd omega = score_variance_correction(data, t0, MomentInputs<double>{2.0, 9.0, 1.0});
  const MatrixXd xi = expected_hessian(data, t0, 1.0);
  ASSERT_GT(omega.cwiseAbs().maxCoeff(), 0.0);

  const auto g = dense_G(w, t0.lambda);
  const int reps = 200000;
  Stream es(32);
  MatrixXd sum = MatrixXd::Zero(4, 4), sq = MatrixXd::Zero(4, 4);
  VectorXd u(n), xi_r(4);
  for (int r = 0; r < reps; ++r) {
    for (Index j = 0; j < n; ++j) u(j) = -std::log(1.0 - es.uniform()) - 1.0;
    const VectorXd y = simulate(w, X, t0.beta, t0.lambda, u);
    const Data d{y, X, w, std::nullopt};
    // score at the truth from its definition: xi = (2/n)(tr G - R'u, -X'u) with sigma^2 = 1
    for (Index i = 0; i < 2; ++i) xi_r(i) = 2.0 / double(n) * (g[static_cast<std::size_t>(i)].trace() - (w[i] * y).dot(u));
    xi_r.tail(2) = -2.0 / double(n) * X.transpose() * u;
    const MatrixXd z = double(n) * xi_r * xi_r.transpose() - 2.0 * xi;
    sum += z;
    sq += z.cwiseAbs2();
  }
  const MatrixXd mean = sum / reps;
  const MatrixXd se = ((sq / reps - mean.cwiseAbs2()) / (reps - 1)).cwiseSqrt();
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j <= i; ++j) {
      if (i >= 2 && j >= 2) continue;  // beta block is exactly 2 Xi
      EXPECT_LT(std::abs(mean(i, j) - omega(i, j)), 4 * se(i, j)) << i << "," << j << " omega " << omega(i, j) << " mc " << mean(i, j);
    }
  }
}
