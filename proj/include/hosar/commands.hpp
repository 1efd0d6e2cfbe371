#pragma once

#include <string>
#include <vector>

#include "hosar/io.hpp"

namespace hosar {

/// Writes y.csv, X.csv, weights.manifest (+ W*.csv) and provenance.txt.
/// Regressors and errors come from replication 0 of the Monte Carlo streams,
/// so `mc --reps 1` sees the same data.
void cmd_simulate(const RunConfig& cfg);

struct EstimateOutput {
  EstimateReport initial;
  EstimateReport newton;
  CovarianceEstimate initial_cov;
  CovarianceEstimate newton_cov;
  std::vector<Index> isolated_rows;
};

/// Loads the dataset named in cfg (y, X, and either a weight manifest or a
/// distance matrix with `rings`).
Dataset load_dataset(const RunConfig& cfg, std::vector<Index>* isolated_rows = nullptr,
                     std::vector<std::string>* warnings = nullptr);

EstimateOutput estimate_dataset(const Dataset& data, const RunConfig& cfg);

/// Writes estimates.csv, trace.csv and summary.txt.
EstimateOutput cmd_estimate(const RunConfig& cfg);

McResult cmd_mc(const RunConfig& cfg);

/// Writes bench.csv and the bench_meta.txt sidecar.
std::vector<BenchmarkRow> cmd_bench(const RunConfig& cfg);

}  // namespace hosar
