#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hosar/estimators.hpp"

namespace hosar {

enum class DesignKind { BoundedCirculant, DivergentRandom, HetCirculant };

std::string_view to_string(DesignKind d);
std::string_view to_string(ErrorDist e);

struct McDesign {
  std::string name;
  DesignKind design = DesignKind::BoundedCirculant;
  Index n = 400;
  Index p = 2;
  ErrorDist error_dist = ErrorDist::StdNormal;
  int reps = 1000;
  std::uint64_t master_seed = 20240101;
  std::vector<InitialEstimator> initials{InitialEstimator::Iv};
  int newton_steps = 3;  // columns for l = 1..newton_steps next to each initial
  Sigma2Update sigma2_update = Sigma2Update::RefreshEachStep;
  bool pmle = false;
  ThetaD true_params;

  void validate() const;
};

/// Known names: bounded_p{2,4,6}, bounded_t6_p{2,4,6}, divergent_p{2,4,6},
/// het_p{2,4,6}. n and reps keep their defaults and can be changed after.
McDesign default_design(const std::string& name);

/// Paper parameterization: beta = (1, 0.5); p = 2: lambda = (0.4, 0.5);
/// p = 4: (0.3, 0.2, 0.2, 0.2); p = 6: lambda_i = 0.15.
ThetaD default_true_params(Index p);

/// Weight matrices of a design; fixed across replications.
WeightSet design_weights(const McDesign& design);

/// Data of replication `rep`: X with iid U(0,1) entries from stream
/// (seed, rep, Regressors), errors from (seed, rep, Errors).
Dataset simulate_replication(const McDesign& design, const WeightSet& weights, int rep);

struct McColumn {
  std::string label;  // "iv", "iv_l3", "ols_l1", "pmle"
  std::optional<InitialEstimator> initial;  // empty for pmle
  int steps = 0;
};

struct McTable {
  std::string statistic;  // mean, mse, rrmse, rrmse_mle
  std::vector<std::string> rows;  // lambda1.., beta1..
  std::vector<std::string> columns;
  MatrixXd cells;  // rows x columns
};

struct McResult {
  McDesign design;
  std::vector<McColumn> columns;
  /// estimates[rep][column]; empty when that estimator failed on the rep.
  std::vector<std::vector<std::optional<VectorXd>>> estimates;
  std::vector<int> failed_reps;  // per column
  McTable mean;
  McTable mse;
  McTable rrmse;  // RMSE(initial) / RMSE(initial after l steps)
  std::optional<McTable> rrmse_mle;  // RMSE(pmle) / RMSE(each other column)

  Index column_index(const std::string& label) const;
};

/// Runs all replications on `workers` threads (0: hardware concurrency).
/// Results do not depend on the worker count.
McResult run(const McDesign& design, unsigned workers = 0);

/// Median over reps with both columns present of ||a - b||_inf.
double median_sup_distance(const McResult& result, const std::string& a, const std::string& b);

/// Writes mean.csv, mse.csv, rrmse.csv, failed.csv, (rrmse_mle.csv) and summary.txt.
void write_tables(const McResult& result, const std::string& dir);

}  // namespace hosar
