#include "hosar/estimators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

namespace hosar {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

constexpr double kRcondFloor = 1e-12;

MatrixXd regressors(const Dataset& data) {
  MatrixXd d(data.n(), data.p() + data.k());
  d << spatial_lags(data.weights, data.y), data.X;
  return d;
}

void fill_initial_trace(EstimateReport& report, const Dataset& data) {
  Iterate it{report.theta_hat, report.sigma2_hat, 0.0, std::numeric_limits<double>::quiet_NaN()};
  try {
    it.neg2_loglik = neg2_loglik(data, report.theta_hat, report.sigma2_hat > 0 ? report.sigma2_hat : 1.0);
  } catch (const Error&) {
    // objective undefined at this point; the trace keeps NaN
  }
  report.iterates = {it};
}

}  // namespace

std::string_view to_string(InitialEstimator e) { return e == InitialEstimator::Iv ? "iv" : "ols"; }

void EstimatorConfig::validate() const {
  if (newton_steps < 0) throw Error(ErrorCode::Validation, "newton_steps must be nonnegative");
  if (!(convergence_tol > 0)) throw Error(ErrorCode::Validation, "convergence_tol must be positive");
  if (pmle_mode != PmleMode::Off && pmle_mode != PmleMode::ProfileSearch) throw Error(ErrorCode::Validation, "unknown pmle mode");
}

const Iterate& EstimateReport::at_step(int steps) const {
  if (iterates.empty()) throw Error(ErrorCode::Validation, "report has no iterates");
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(std::max(steps, 0)), iterates.size() - 1);
  return iterates[idx];
}

MatrixXd default_instruments(const WeightSet& weights, const MatrixXd& X) {
  const Index n = X.rows();
  const Index k = X.cols();
  const Index p = weights.p();
  MatrixXd stacked(n, (p + 1) * k);
  for (Index i = 0; i < p; ++i) stacked.middleCols(i * k, k) = weights[i] * X;
  stacked.rightCols(k) = X;

  Eigen::ColPivHouseholderQR<MatrixXd> qr(stacked);
  qr.setThreshold(1e-10);
  const Index r = qr.rank();
  if (r < p) {
    throw Error(ErrorCode::UnderIdentified, "only " + std::to_string(r) + " independent instruments for p = " + std::to_string(p));
  }
  MatrixXd z(n, r);
  const auto& perm = qr.colsPermutation().indices();
  for (Index c = 0; c < r; ++c) z.col(c) = stacked.col(perm(c));
  return z;
}

MatrixXd instrument_basis(const MatrixXd& Z, const MatrixXd& X) {
  if (Z.rows() != X.rows()) throw Error(ErrorCode::Validation, "Z and X row counts differ");
  Index rank = column_rank(Z);
  if (rank < Z.cols()) throw Error(ErrorCode::Conditioning, "instrument columns are collinear (singular J)");
  MatrixXd basis = Z;
  for (Index c = 0; c < X.cols(); ++c) {
    MatrixXd trial(basis.rows(), basis.cols() + 1);
    trial << basis, X.col(c);
    const Index r = column_rank(trial);
    if (r > rank) {
      basis = std::move(trial);
      rank = r;
    }
  }
  return basis;
}

EstimateReport estimate_iv(const Dataset& data) {
  const auto t0 = Clock::now();
  const double n = static_cast<double>(data.n());
  const Index p = data.p();
  const MatrixXd z = data.Z ? *data.Z : default_instruments(data.weights, data.X);
  const MatrixXd h = instrument_basis(z, data.X);
  const MatrixXd d = regressors(data);
  if (h.cols() < d.cols()) {
    throw Error(ErrorCode::UnderIdentified, std::to_string(h.cols()) + " instruments for " + std::to_string(d.cols()) + " parameters");
  }

  const MatrixXd j = h.transpose() * h / n;
  const MatrixXd kk = h.transpose() * d / n;
  const VectorXd ky = h.transpose() * data.y / n;
  Eigen::LLT<MatrixXd> jllt(j);
  if (jllt.info() != Eigen::Success || jllt.rcond() < kRcondFloor) {
    throw Error(ErrorCode::Conditioning, "instrument cross-product J is singular");
  }
  const MatrixXd jinv_k = jllt.solve(kk);
  const MatrixXd q = kk.transpose() * jinv_k;
  Eigen::LLT<MatrixXd> qllt(q);
  if (qllt.info() != Eigen::Success || qllt.rcond() < kRcondFloor) {
    throw Error(ErrorCode::WeakInstrument, "Q = K'J^{-1}K is singular");
  }
  const VectorXd theta = qllt.solve(jinv_k.transpose() * ky);

  EstimateReport report;
  report.theta_hat = ThetaD::from_stacked(theta, p);
  report.sigma2_hat = (data.y - d * theta).squaredNorm() / n;
  report.method_label = "iv";
  report.wall_times.emplace_back("initial", seconds_since(t0));
  fill_initial_trace(report, data);
  return report;
}

EstimateReport estimate_ols(const Dataset& data) {
  const auto t0 = Clock::now();
  const double n = static_cast<double>(data.n());
  const MatrixXd d = regressors(data);
  const MatrixXd l = d.transpose() * d / n;
  Eigen::LLT<MatrixXd> llt(l);
  if (llt.info() != Eigen::Success || llt.rcond() < kRcondFloor) {
    throw Error(ErrorCode::Conditioning, "[R, X] does not have full column rank");
  }
  const VectorXd theta = llt.solve(d.transpose() * data.y / n);

  EstimateReport report;
  report.theta_hat = ThetaD::from_stacked(theta, data.p());
  report.sigma2_hat = (data.y - d * theta).squaredNorm() / n;
  report.method_label = "ols";
  report.wall_times.emplace_back("initial", seconds_since(t0));
  fill_initial_trace(report, data);
  return report;
}

double profile_sigma2(const Dataset& data, const ThetaD& theta) {
  const VectorXd e = data.y - spatial_lags(data.weights, data.y) * theta.lambda - data.X * theta.beta;
  return e.squaredNorm() / static_cast<double>(data.n());
}

namespace {

VectorXd solve_hessian(const MatrixXd& h, const VectorXd& xi) {
  Eigen::LDLT<MatrixXd> ldlt(h);
  if (ldlt.info() == Eigen::Success && ldlt.rcond() > 1e-13) {
    VectorXd step = ldlt.solve(xi);
    const double scale = h.norm() * step.norm() + xi.norm();
    if (step.allFinite() && (h * step - xi).norm() <= 1e-10 * scale) return step;
  }
  Eigen::FullPivLU<MatrixXd> lu(h);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible()) throw Error(ErrorCode::StepFailure, "Hessian is singular");
  VectorXd step = lu.solve(xi);
  if (!step.allFinite()) throw Error(ErrorCode::StepFailure, "Newton step is not finite");
  return step;
}

struct StepOutcome {
  NewtonStep step;
  double objective_in;  // objective at the input point, NaN if undefined
};

StepOutcome newton_step_with_objective(const Dataset& data, const ThetaD& theta, double sigma2) {
  ObjectiveState<double> st(data, theta, sigma2);
  Resolvent<double> res(data.weights, st.system());
  const VectorXd xi = detail::score_from(st, data, res);
  const MatrixXd h = detail::hessian_from(st, data, res);
  const VectorXd delta = solve_hessian(h, xi);
  const VectorXd next = theta.stacked() - delta;
  if (!next.allFinite()) throw Error(ErrorCode::StepFailure, "Newton iterate is not finite");
  double objective = std::numeric_limits<double>::quiet_NaN();
  if (st.system().det_sign() > 0) objective = st.neg2_loglik();
  return {{ThetaD::from_stacked(next, data.p()), -delta}, objective};
}

}  // namespace

NewtonStep newton_step(const Dataset& data, const ThetaD& theta, double sigma2) {
  return newton_step_with_objective(data, theta, sigma2).step;
}

EstimateReport iterate_newton_from(const Dataset& data, const EstimateReport& initial, const EstimatorConfig& config) {
  config.validate();
  EstimateReport report = initial;
  report.method_label = std::string(initial.method_label) + "+newton" + std::to_string(config.newton_steps);
  if (report.iterates.empty()) fill_initial_trace(report, data);
  report.iterates.resize(1);

  const auto t0 = Clock::now();
  ThetaD theta = initial.theta_hat;
  double sigma2 = initial.sigma2_hat;
  const double sigma2_initial = sigma2;
  for (int step = 0; step < config.newton_steps; ++step) {
    StepOutcome out;
    try {
      out = newton_step_with_objective(data, theta, sigma2);
      ++report.hessian_builds;
    } catch (const Error& e) {
      report.failed = true;
      report.failure = e.what();
      report.wall_times.emplace_back("newton", seconds_since(t0));
      throw EstimationFailure(e.code(), std::string("Newton step ") + std::to_string(step + 1) + " failed: " + e.what(), report);
    }
    report.iterates.back().neg2_loglik = out.objective_in;
    theta = out.step.theta;
    if (config.sigma2_update == Sigma2Update::RefreshEachStep) {
      sigma2 = profile_sigma2(data, theta);
    } else {
      sigma2 = sigma2_initial;
    }
    if (!(sigma2 > 0) || !std::isfinite(sigma2)) {
      report.failed = true;
      report.failure = "profile sigma^2 is not positive";
      throw EstimationFailure(ErrorCode::StepFailure, report.failure, report);
    }
    const double norm = out.step.step.norm();
    report.iterates.push_back({theta, sigma2, norm, std::numeric_limits<double>::quiet_NaN()});
    if (norm < config.convergence_tol * (1.0 + theta.stacked().norm())) break;
  }
  if (config.record_objective && report.iterates.size() > 1) {
    try {
      report.iterates.back().neg2_loglik = neg2_loglik(data, theta, sigma2);
    } catch (const Error&) {
    }
  }
  report.theta_hat = theta;
  report.sigma2_hat = sigma2;
  report.wall_times.emplace_back("newton", seconds_since(t0));
  return report;
}

EstimateReport iterate_newton(const Dataset& data, const EstimatorConfig& config) {
  config.validate();
  const EstimateReport initial = config.initial == InitialEstimator::Iv ? estimate_iv(data) : estimate_ols(data);
  return iterate_newton_from(data, initial, config);
}

double profile_objective(const Dataset& data, const VectorXd& lambda, double lambda_l1_bound) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (!lambda.allFinite() || lambda.lpNorm<1>() > lambda_l1_bound) return inf;
  try {
    SpatialSystem<double> system(data.weights, lambda);
    if (system.det_sign() <= 0) return inf;
    const VectorXd sy = data.y - spatial_lags(data.weights, data.y) * lambda;
    const VectorXd beta = data.X.colPivHouseholderQr().solve(sy);
    const double n = static_cast<double>(data.n());
    const double s2 = (sy - data.X * beta).squaredNorm() / n;
    if (!(s2 > 0)) return inf;
    return std::log(2.0 * std::numbers::pi * s2) - 2.0 / n * system.log_abs_det() + 1.0;
  } catch (const Error&) {
    return inf;
  }
}

namespace {

struct NmContext {
  const Dataset* data;
  double bound;
  int evaluations;
  Eigen::ColPivHouseholderQR<MatrixXd> xqr;
  MatrixXd lags;
};

double profile_with_context(NmContext& ctx, const VectorXd& lambda) {
  ++ctx.evaluations;
  constexpr double penalty = 1e10;
  if (!lambda.allFinite() || lambda.lpNorm<1>() > ctx.bound) return penalty + lambda.lpNorm<1>();
  try {
    SpatialSystem<double> system(ctx.data->weights, lambda);
    if (system.det_sign() <= 0) return penalty;
    const VectorXd sy = ctx.data->y - ctx.lags * lambda;
    const VectorXd beta = ctx.xqr.solve(sy);
    const double n = static_cast<double>(ctx.data->n());
    const double s2 = (sy - ctx.data->X * beta).squaredNorm() / n;
    if (!(s2 > 0)) return penalty;
    return std::log(2.0 * std::numbers::pi * s2) - 2.0 / n * system.log_abs_det() + 1.0;
  } catch (const Error&) {
    return penalty;
  }
}

double gsl_profile(const gsl_vector* x, void* params) {
  auto& ctx = *static_cast<NmContext*>(params);
  VectorXd lambda(static_cast<Index>(x->size));
  for (std::size_t i = 0; i < x->size; ++i) lambda(static_cast<Index>(i)) = gsl_vector_get(x, i);
  return profile_with_context(ctx, lambda);
}

struct GslVectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
struct GslMinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};
using GslVector = std::unique_ptr<gsl_vector, GslVectorDeleter>;
using GslMinimizer = std::unique_ptr<gsl_multimin_fminimizer, GslMinimizerDeleter>;

struct NmRun {
  VectorXd x;
  double f;
  bool converged;
};

NmRun nelder_mead(NmContext& ctx, const VectorXd& start, double step, const PmleConfig& config) {
  static std::once_flag gsl_handler;
  std::call_once(gsl_handler, [] { gsl_set_error_handler_off(); });

  const auto dim = static_cast<std::size_t>(start.size());
  GslVector x(gsl_vector_alloc(dim));
  GslVector steps(gsl_vector_alloc(dim));
  for (std::size_t i = 0; i < dim; ++i) gsl_vector_set(x.get(), i, start(static_cast<Index>(i)));
  gsl_vector_set_all(steps.get(), step);

  gsl_multimin_function fn{&gsl_profile, dim, &ctx};
  GslMinimizer nm(gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim));
  gsl_multimin_fminimizer_set(nm.get(), &fn, x.get(), steps.get());

  // Near a smooth minimum the objective is flat to rounding within about
  // sqrt(eps) of the optimum, so the simplex can stop shrinking before x_tol.
  // A simplex that is already tiny and has not shrunk for a while is done.
  constexpr double kStallSize = 1e-7;
  const int stall_limit = 20 + 10 * static_cast<int>(dim);
  double smallest = std::numeric_limits<double>::infinity();
  int stalled = 0;
  bool converged = false;
  for (int it = 0; it < config.max_iterations; ++it) {
    if (gsl_multimin_fminimizer_iterate(nm.get()) != GSL_SUCCESS) break;
    const double size = gsl_multimin_fminimizer_size(nm.get());
    if (gsl_multimin_test_size(size, config.x_tol) == GSL_SUCCESS) {
      converged = true;
      break;
    }
    if (size < smallest) {
      smallest = size;
      stalled = 0;
    } else if (++stalled >= stall_limit && size < kStallSize) {
      converged = true;
      break;
    }
  }
  NmRun run{VectorXd(start.size()), nm->fval, converged};
  for (std::size_t i = 0; i < dim; ++i) run.x(static_cast<Index>(i)) = gsl_vector_get(nm->x, i);
  return run;
}

}  // namespace

PmleResult pmle(const Dataset& data, const PmleConfig& config) {
  const Index p = data.p();
  if (p < 1 || p > 6) throw Error(ErrorCode::Validation, "profile search supports 1 <= p <= 6");
  NmContext ctx{&data, config.lambda_l1_bound, 0, data.X.colPivHouseholderQr(), spatial_lags(data.weights, data.y)};

  std::vector<VectorXd> starts;
  VectorXd first;
  if (config.start) {
    first = config.start->lambda;
  } else {
    try {
      first = estimate_iv(data).theta_hat.lambda;
    } catch (const Error&) {
      first = VectorXd::Zero(p);
    }
  }
  const double l1 = first.lpNorm<1>();
  if (!first.allFinite()) first = VectorXd::Zero(p);
  else if (l1 >= 0.9 * config.lambda_l1_bound) first *= 0.9 * config.lambda_l1_bound / l1;
  starts.push_back(first);
  starts.push_back(VectorXd::Zero(p));

  std::optional<NmRun> best;
  for (const auto& s : starts) {
    NmRun run = nelder_mead(ctx, s, 0.05, config);
    for (int r = 0; r < config.max_restarts; ++r) {
      NmRun again = nelder_mead(ctx, run.x, 1e-3, config);
      const bool settled = again.f >= run.f - 1e-15 * std::abs(run.f) &&
                           (again.x - run.x).lpNorm<Eigen::Infinity>() <= 10 * config.x_tol;
      if (again.f <= run.f) run = again;
      if (settled) break;
    }
    if (!best || run.f < best->f) best = run;
  }
  if (!best || best->f >= 1e10) throw Error(ErrorCode::OptimizationFailure, "no admissible lambda found");

  const VectorXd& lambda = best->x;
  const VectorXd sy = data.y - ctx.lags * lambda;
  PmleResult out;
  out.theta_check.lambda = lambda;
  out.theta_check.beta = ctx.xqr.solve(sy);
  out.sigma2_check = (sy - data.X * out.theta_check.beta).squaredNorm() / static_cast<double>(data.n());
  out.objective_value = neg2_loglik(data, out.theta_check, out.sigma2_check);
  out.evaluations = ctx.evaluations;
  out.converged = best->converged;
  return out;
}

std::vector<BenchmarkRow> benchmark(const Dataset& data, const std::vector<std::string>& methods, int repetitions) {
  if (methods.empty()) throw Error(ErrorCode::Validation, "benchmark needs at least one method");
  if (repetitions < 1) throw Error(ErrorCode::Validation, "benchmark repetitions must be positive");
  std::vector<BenchmarkRow> rows;
  for (const auto& method : methods) {
    BenchmarkRow row{method, data.n(), data.p(), repetitions};
    std::vector<double> times;
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = Clock::now();
      if (method == "iv") {
        estimate_iv(data);
      } else if (method == "ols") {
        estimate_ols(data);
      } else if (method == "newton1" || method == "newton3") {
        EstimatorConfig cfg;
        cfg.newton_steps = method == "newton1" ? 1 : 3;
        cfg.convergence_tol = 1e-300;  // count every step
        cfg.record_objective = false;
        row.hessian_builds = iterate_newton(data, cfg).hessian_builds;
      } else if (method == "pmle") {
        row.objective_evaluations = pmle(data).evaluations;
      } else {
        throw Error(ErrorCode::Validation, "unknown benchmark method '" + method + "'");
      }
      times.push_back(seconds_since(t0));
    }
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size();
    row.median_seconds = m % 2 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
    row.min_seconds = times.front();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hosar
