#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hosar/sar_core.hpp"

namespace hosar {

using Dataset = SarDataset<double>;
using ThetaD = Theta<double>;
using WeightSet = SpatialWeightSet<double>;

enum class InitialEstimator { Iv, Ols };
enum class Sigma2Update { RefreshEachStep, FixedInitial };
enum class PmleMode { Off, ProfileSearch };

std::string_view to_string(InitialEstimator e);

struct EstimatorConfig {
  InitialEstimator initial = InitialEstimator::Iv;
  int newton_steps = 3;
  Sigma2Update sigma2_update = Sigma2Update::RefreshEachStep;
  PmleMode pmle_mode = PmleMode::Off;
  double convergence_tol = 1e-10;
  // Skip the extra factorization that evaluates the objective at the last
  // iterate; the Monte Carlo harness does not need it.
  bool record_objective = true;

  void validate() const;
};

struct Iterate {
  ThetaD theta;
  double sigma2 = 0;
  double step_norm = 0;  // ||theta_t - theta_{t-1}||_2, zero for the initial estimate
  double neg2_loglik = 0;  // NaN where det S(lambda) <= 0
};

struct EstimateReport {
  ThetaD theta_hat;
  double sigma2_hat = 0;
  std::string method_label;
  std::vector<Iterate> iterates;
  std::vector<std::pair<std::string, double>> wall_times;  // seconds per phase
  std::optional<MatrixXd> covariance;
  int hessian_builds = 0;
  bool failed = false;
  std::string failure;

  /// Iterate after `steps` Newton steps; an early-stopped chain is constant
  /// past its last iterate.
  const Iterate& at_step(int steps) const;
};

/// A Newton iteration that could not continue; carries the trace so far.
class EstimationFailure : public Error {
 public:
  EstimationFailure(ErrorCode code, const std::string& what, EstimateReport partial)
      : Error(code, what), partial_(std::move(partial)) {}
  const EstimateReport& partial() const { return partial_; }

 private:
  EstimateReport partial_;
};

/// Linearly independent columns of (W_1 X, ..., W_p X, X), in pivot order.
MatrixXd default_instruments(const WeightSet& weights, const MatrixXd& X);

/// [Z, X] with the X columns already spanned by Z dropped. Throws when Z
/// itself is collinear.
MatrixXd instrument_basis(const MatrixXd& Z, const MatrixXd& X);

EstimateReport estimate_iv(const Dataset& data);
EstimateReport estimate_ols(const Dataset& data);

/// n^{-1} ||S(lambda) y - X beta||^2.
double profile_sigma2(const Dataset& data, const ThetaD& theta);

struct NewtonStep {
  ThetaD theta;
  VectorXd step;  // theta_out - theta_in
};

NewtonStep newton_step(const Dataset& data, const ThetaD& theta, double sigma2);

EstimateReport iterate_newton(const Dataset& data, const EstimatorConfig& config);

/// Newton iterations from a precomputed initial estimate.
EstimateReport iterate_newton_from(const Dataset& data, const EstimateReport& initial, const EstimatorConfig& config);

struct PmleConfig {
  double lambda_l1_bound = 0.995;
  double x_tol = 1e-10;
  int max_iterations = 5000;  // per Nelder-Mead run
  int max_restarts = 8;
  std::optional<ThetaD> start;  // defaults to the IV estimate
};

struct PmleResult {
  ThetaD theta_check;
  double sigma2_check = 0;
  double objective_value = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Profile-likelihood minimizer: beta and sigma^2 in closed form given
/// lambda, Nelder-Mead over lambda inside sum|lambda_i| <= bound with det S > 0.
PmleResult pmle(const Dataset& data, const PmleConfig& config = {});

/// Profiled objective over lambda; +infinity outside the admissible region.
double profile_objective(const Dataset& data, const VectorXd& lambda, double lambda_l1_bound = 0.995);

struct BenchmarkRow {
  std::string method;
  Index n = 0;
  Index p = 0;
  int repetitions = 0;
  double median_seconds = 0;
  double min_seconds = 0;
  int hessian_builds = 0;
  int objective_evaluations = 0;
};

/// Wall-clock timing of estimators on identical inputs. Known methods: iv,
/// ols, newton1, newton3 (IV start) and pmle.
std::vector<BenchmarkRow> benchmark(const Dataset& data, const std::vector<std::string>& methods, int repetitions = 3);

}  // namespace hosar
