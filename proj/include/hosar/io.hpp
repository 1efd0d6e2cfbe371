#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hosar/estimators.hpp"
#include "hosar/inference.hpp"
#include "hosar/montecarlo.hpp"

namespace hosar {

struct LoadedWeights {
  WeightSet weights;
  std::vector<std::string> warnings;
};

/// Reads a weight manifest:
///
///   n = 5
///   p = 2
///   matrix = W1.csv
///   matrix = W2.csv
///
/// Matrix paths are relative to the manifest. Each matrix file is a triplet
/// CSV with header `row,col,value` and 1-based indices; duplicates are summed.
LoadedWeights load_user_weights(const std::string& manifest_path);

SparseXd read_triplets(const std::string& path, Index n, std::vector<std::string>* warnings = nullptr);
void write_triplets(const std::string& path, const SparseXd& w);

/// Writes W1.csv..Wp.csv next to the manifest and the manifest itself.
void write_weights(const std::string& manifest_path, const WeightSet& weights);

enum class WeightKind { Circulant, RandomSparse, DistanceRings, UserCsv };

struct WeightDesignSpec {
  WeightKind kind = WeightKind::Circulant;
  Index n = 0;
  Index p = 0;
  std::uint64_t seed = 0;  // random_sparse
  std::optional<MatrixXd> distances;  // distance_rings
  std::string manifest;  // user_csv

  void validate() const;
};

struct BuiltWeights {
  WeightSet weights;
  std::vector<Index> isolated_rows;  // distance rings only
  std::vector<std::string> warnings;
};

BuiltWeights build_weights(const WeightDesignSpec& spec);

/// Settings shared by every subcommand. Read from `key = value` lines (with
/// '#' comments) and then overridden by command-line flags.
struct RunConfig {
  std::string design = "bounded_p2";
  std::optional<Index> n;
  std::optional<Index> p;
  int reps = 1000;
  std::uint64_t seed = 20240101;
  std::optional<InitialEstimator> estimator;  // mc default: the design's list
  int steps = 3;
  Regime regime = Regime::BoundedH;
  unsigned workers = 0;
  std::string out = "out";
  bool pmle = false;
  Sigma2Update sigma2_update = Sigma2Update::RefreshEachStep;

  // estimate inputs
  std::string y_path;
  std::string x_path;
  std::string weights_manifest;
  std::string distances_path;
  std::optional<Index> rings;
  std::string instruments_path;

  // bench
  std::vector<std::string> methods{"iv", "ols", "newton1", "newton3", "pmle"};
  int bench_reps = 3;
};

void apply_config_file(const std::string& path, RunConfig& cfg);
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where);

InitialEstimator parse_estimator(const std::string& s);
Regime parse_regime(const std::string& s);

/// The design named in cfg with n, p, reps, seed, steps and estimator applied.
McDesign resolve_design(const RunConfig& cfg);

}  // namespace hosar
