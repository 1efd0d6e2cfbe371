#include "hosar/inference.hpp"

#include <cmath>

namespace hosar {
namespace {

CovarianceEstimate finish(MatrixXd m, Regime regime) {
  m = 0.5 * (m + m.transpose()).eval();
  CovarianceEstimate out;
  out.se = VectorXd(m.rows());
  for (Index i = 0; i < m.rows(); ++i) {
    const double v = m(i, i);
    if (!std::isfinite(v)) throw Error(ErrorCode::DegenerateInference, "covariance diagonal is not finite");
    // tiny negative values are rounding; anything else is a broken plug-in
    if (v < -1e-10 * m.diagonal().cwiseAbs().maxCoeff()) {
      throw Error(ErrorCode::DegenerateInference, "covariance has a negative variance at coordinate " + std::to_string(i + 1));
    }
    out.se(i) = std::sqrt(std::max(v, 0.0));
  }
  out.matrix = std::move(m);
  out.regime = regime;
  return out;
}

MatrixXd spd_inverse(const MatrixXd& a, ErrorCode code, const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13)) throw Error(code, what);
  return ldlt.solve(MatrixXd::Identity(a.rows(), a.cols()));
}

}  // namespace

std::string_view to_string(Regime r) { return r == Regime::DivergentH ? "divergent" : "bounded"; }

MomentInputs<double> residual_moments(const VectorXd& resid) {
  if (resid.size() < 1) throw Error(ErrorCode::Validation, "no residuals");
  const double n = static_cast<double>(resid.size());
  const VectorXd c = resid.array() - resid.mean();
  MomentInputs<double> m;
  m.sigma2 = c.squaredNorm() / n;
  m.mu3 = c.array().cube().sum() / n;
  m.mu4 = c.array().square().square().sum() / n;
  return m;
}

CovarianceEstimate cov_divergent_h(const Dataset& data, const EstimateReport& estimate) {
  const double n = static_cast<double>(data.n());
  MatrixXd d(data.n(), data.p() + data.k());
  d << spatial_lags(data.weights, data.y), data.X;
  const MatrixXd l = d.transpose() * d / n;
  const MatrixXd linv = spd_inverse(l, ErrorCode::Conditioning, "L = n^{-1}[R, X]'[R, X] is singular");
  return finish(estimate.sigma2_hat / n * linv, Regime::DivergentH);
}

CovarianceEstimate cov_bounded_h(const Dataset& data, const EstimateReport& estimate,
                                 const std::optional<MomentInputs<double>>& moments) {
  const double n = static_cast<double>(data.n());
  const ThetaD& theta = estimate.theta_hat;
  MomentInputs<double> m;
  if (moments) {
    m = *moments;
  } else {
    const VectorXd resid = data.y - spatial_lags(data.weights, data.y) * theta.lambda - data.X * theta.beta;
    m = residual_moments(resid);
  }
  m.validate();
  const MatrixXd xi = expected_hessian(data, theta, m.sigma2);
  const MatrixXd xinv = spd_inverse(xi, ErrorCode::DegenerateInference, "expected Hessian is singular");
  const MatrixXd omega = score_variance_correction(data, theta, m);
  CovarianceEstimate out = finish((2.0 * xinv + xinv * omega * xinv) / n, Regime::BoundedH);
  out.moment_inputs_used = m;
  return out;
}

CovarianceEstimate covariance(const Dataset& data, const EstimateReport& estimate, Regime regime) {
  return regime == Regime::DivergentH ? cov_divergent_h(data, estimate) : cov_bounded_h(data, estimate);
}

CovarianceEstimate cov_iv(const Dataset& data, const EstimateReport& iv_estimate) {
  const double n = static_cast<double>(data.n());
  const MatrixXd z = data.Z ? *data.Z : default_instruments(data.weights, data.X);
  const MatrixXd h = instrument_basis(z, data.X);
  MatrixXd d(data.n(), data.p() + data.k());
  d << spatial_lags(data.weights, data.y), data.X;
  const MatrixXd j = h.transpose() * h / n;
  const MatrixXd kk = h.transpose() * d / n;
  Eigen::LLT<MatrixXd> jllt(j);
  if (jllt.info() != Eigen::Success) throw Error(ErrorCode::Conditioning, "instrument cross-product J is singular");
  const MatrixXd q = kk.transpose() * jllt.solve(kk);
  const MatrixXd qinv = spd_inverse(q, ErrorCode::WeakInstrument, "Q = K'J^{-1}K is singular");
  return finish(iv_estimate.sigma2_hat / n * qinv, Regime::DivergentH);
}

VectorXd t_statistics(const ThetaD& theta, const CovarianceEstimate& cov) {
  const VectorXd v = theta.stacked();
  if (v.size() != cov.se.size()) throw Error(ErrorCode::Validation, "theta and covariance dimensions differ");
  VectorXd t(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    if (!(cov.se(i) > 0)) throw Error(ErrorCode::DegenerateInference, "zero standard error at coordinate " + std::to_string(i + 1));
    t(i) = v(i) / cov.se(i);
  }
  return t;
}

VectorXd se_ratio(const CovarianceEstimate& numerator, const CovarianceEstimate& denominator) {
  if (numerator.se.size() != denominator.se.size()) throw Error(ErrorCode::Validation, "standard error vectors differ in length");
  if ((denominator.se.array() <= 0).any()) throw Error(ErrorCode::DegenerateInference, "zero standard error in SE ratio");
  return numerator.se.cwiseQuotient(denominator.se);
}

}  // namespace hosar
