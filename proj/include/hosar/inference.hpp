#pragma once

#include <optional>

#include "hosar/estimators.hpp"

namespace hosar {

enum class Regime { DivergentH, BoundedH };

std::string_view to_string(Regime r);

struct CovarianceEstimate {
  MatrixXd matrix;  // covariance of the estimator itself (already divided by n)
  Regime regime = Regime::DivergentH;
  VectorXd se;
  std::optional<MomentInputs<double>> moment_inputs_used;
};

/// Sample central moments (mu3, mu4, second moment as sigma2) of residuals.
MomentInputs<double> residual_moments(const VectorXd& resid);

/// sigma^2 / n * L^{-1}, L = n^{-1} [R, X]'[R, X].
CovarianceEstimate cov_divergent_h(const Dataset& data, const EstimateReport& estimate);

/// (2 Xi^{-1} + Xi^{-1} Omega Xi^{-1}) / n with Xi and Omega evaluated at the
/// estimate. Moments default to the sample moments of S(lambda) y - X beta.
CovarianceEstimate cov_bounded_h(const Dataset& data, const EstimateReport& estimate,
                                 const std::optional<MomentInputs<double>>& moments = std::nullopt);

CovarianceEstimate covariance(const Dataset& data, const EstimateReport& estimate, Regime regime);

/// sigma^2 / n * Q^{-1} for the IV estimate, with the instruments used by estimate_iv.
CovarianceEstimate cov_iv(const Dataset& data, const EstimateReport& iv_estimate);

VectorXd t_statistics(const ThetaD& theta, const CovarianceEstimate& cov);

/// Elementwise SE(numerator) / SE(denominator).
VectorXd se_ratio(const CovarianceEstimate& numerator, const CovarianceEstimate& denominator);

}  // namespace hosar
