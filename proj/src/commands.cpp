#include "hosar/commands.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <sstream>
#include <thread>

#include "hosar/csv.hpp"

namespace fs = std::filesystem;

namespace hosar {
namespace {

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

std::vector<std::string> parameter_labels(Index p, Index k) {
  std::vector<std::string> names;
  for (Index i = 1; i <= p; ++i) names.push_back("lambda" + std::to_string(i));
  for (Index i = 1; i <= k; ++i) names.push_back("beta" + std::to_string(i));
  return names;
}

void write_trace(const std::string& path, const EstimateReport& report, Index p, Index k) {
  std::ostringstream out;
  out << "step";
  for (const auto& name : parameter_labels(p, k)) out << ',' << name;
  out << ",sigma2,step_norm,neg2_loglik\n";
  for (std::size_t s = 0; s < report.iterates.size(); ++s) {
    const auto& it = report.iterates[s];
    out << s;
    const VectorXd v = it.theta.stacked();
    for (Index i = 0; i < v.size(); ++i) out << ',' << csv::format(v(i));
    out << ',' << csv::format(it.sigma2) << ',' << csv::format(it.step_norm) << ',' << csv::format(it.neg2_loglik) << '\n';
  }
  csv::write_text(path, out.str());
}

}  // namespace

void cmd_simulate(const RunConfig& cfg) {
  RunConfig one = cfg;
  one.reps = 1;
  const McDesign design = resolve_design(one);
  const WeightSet weights = design_weights(design);
  const Dataset data = simulate_replication(design, weights, 0);

  fs::create_directories(cfg.out);
  csv::write_vector(join(cfg.out, "y.csv"), data.y, "y");
  csv::write_matrix(join(cfg.out, "X.csv"), data.X, {"x1", "x2"});
  write_weights(join(cfg.out, "weights.manifest"), weights);

  std::ostringstream prov;
  prov << "seed = " << design.master_seed << "\ndesign = " << design.name << "\nkind = " << to_string(design.design)
       << "\nn = " << design.n << "\np = " << design.p << "\nerrors = " << to_string(design.error_dist) << "\ntheta0 =";
  const VectorXd t0 = design.true_params.stacked();
  for (Index i = 0; i < t0.size(); ++i) prov << ' ' << csv::format(t0(i));
  prov << "\nreplication = 0\ngenerator = mt19937_64 keyed by splitmix64(seed, index, tag); boost.random distributions\n"
       << "software = hosar " << HOSAR_VERSION << '\n';
  csv::write_text(join(cfg.out, "provenance.txt"), prov.str());
}

Dataset load_dataset(const RunConfig& cfg, std::vector<Index>* isolated_rows, std::vector<std::string>* warnings) {
  if (cfg.y_path.empty() || cfg.x_path.empty()) throw Error(ErrorCode::Validation, "estimate needs y and X paths");
  const bool manifest = !cfg.weights_manifest.empty();
  const bool rings = !cfg.distances_path.empty();
  if (manifest == rings) throw Error(ErrorCode::Validation, "give exactly one of weights (manifest) or distances");

  WeightDesignSpec spec;
  if (manifest) {
    spec.kind = WeightKind::UserCsv;
    spec.manifest = cfg.weights_manifest;
  } else {
    if (!cfg.rings) throw Error(ErrorCode::Validation, "distances need rings = <number of rings>");
    spec.kind = WeightKind::DistanceRings;
    spec.distances = csv::read_matrix(cfg.distances_path, false);
    spec.p = *cfg.rings;
  }
  BuiltWeights built = build_weights(spec);
  if (isolated_rows) *isolated_rows = built.isolated_rows;
  if (warnings) *warnings = built.warnings;

  Dataset data{csv::read_vector(cfg.y_path, true), csv::read_matrix(cfg.x_path, true), std::move(built.weights), std::nullopt};
  if (!cfg.instruments_path.empty()) data.Z = csv::read_matrix(cfg.instruments_path, true);
  validate_dataset(data);
  return data;
}

EstimateOutput estimate_dataset(const Dataset& data, const RunConfig& cfg) {
  const InitialEstimator init = cfg.estimator.value_or(InitialEstimator::Iv);
  EstimatorConfig ec;
  ec.initial = init;
  ec.newton_steps = cfg.steps;
  ec.sigma2_update = cfg.sigma2_update;
  EstimateOutput out;
  out.initial = init == InitialEstimator::Iv ? estimate_iv(data) : estimate_ols(data);
  out.newton = iterate_newton_from(data, out.initial, ec);
  out.initial_cov = init == InitialEstimator::Iv ? cov_iv(data, out.initial) : cov_divergent_h(data, out.initial);
  out.newton_cov = covariance(data, out.newton, cfg.regime);
  out.initial.covariance = out.initial_cov.matrix;
  out.newton.covariance = out.newton_cov.matrix;
  return out;
}

EstimateOutput cmd_estimate(const RunConfig& cfg) {
  std::vector<Index> isolated;
  std::vector<std::string> warnings;
  const Dataset data = load_dataset(cfg, &isolated, &warnings);
  fs::create_directories(cfg.out);

  EstimateOutput out;
  try {
    out = estimate_dataset(data, cfg);
  } catch (const EstimationFailure& f) {
    write_trace(join(cfg.out, "trace.csv"), f.partial(), data.p(), data.k());
    throw;
  }
  out.isolated_rows = isolated;

  const VectorXd t_init = t_statistics(out.initial.theta_hat, out.initial_cov);
  const VectorXd t_newton = t_statistics(out.newton.theta_hat, out.newton_cov);
  const VectorXd ratio = se_ratio(out.initial_cov, out.newton_cov);
  const VectorXd e_init = out.initial.theta_hat.stacked();
  const VectorXd e_newton = out.newton.theta_hat.stacked();
  const auto names = parameter_labels(data.p(), data.k());

  std::ostringstream table;
  table << "parameter,initial,initial_se,initial_t,newton,newton_se,newton_t,se_ratio\n";
  for (Index i = 0; i < e_init.size(); ++i) {
    table << names[static_cast<std::size_t>(i)] << ',' << csv::format(e_init(i)) << ',' << csv::format(out.initial_cov.se(i)) << ','
          << csv::format(t_init(i)) << ',' << csv::format(e_newton(i)) << ',' << csv::format(out.newton_cov.se(i)) << ','
          << csv::format(t_newton(i)) << ',' << csv::format(ratio(i)) << '\n';
  }
  csv::write_text(join(cfg.out, "estimates.csv"), table.str());
  write_trace(join(cfg.out, "trace.csv"), out.newton, data.p(), data.k());

  std::ostringstream s;
  s << "n: " << data.n() << "\np: " << data.p() << "\nk: " << data.k() << "\ninitial: " << out.initial.method_label
    << "\nnewton: " << out.newton.method_label << " (" << out.newton.iterates.size() - 1 << " steps taken)"
    << "\nregime: " << to_string(cfg.regime) << "\nsigma2 initial: " << csv::format(out.initial.sigma2_hat)
    << "\nsigma2 newton: " << csv::format(out.newton.sigma2_hat) << "\nh_scale:";
  for (Index i = 0; i < data.p(); ++i) s << ' ' << csv::format(data.weights.h_scale(i));
  s << '\n';
  if (!isolated.empty()) {
    s << "isolated rows per ring:";
    for (const auto r : isolated) s << ' ' << r;
    s << '\n';
  }
  if (out.newton_cov.moment_inputs_used) {
    const auto& m = *out.newton_cov.moment_inputs_used;
    s << "residual moments: sigma2 " << csv::format(m.sigma2) << " mu3 " << csv::format(m.mu3) << " mu4 " << csv::format(m.mu4) << '\n';
  }
  for (const auto& w : warnings) s << "warning: " << w << '\n';
  csv::write_text(join(cfg.out, "summary.txt"), s.str());
  return out;
}

McResult cmd_mc(const RunConfig& cfg) {
  McResult res = run(resolve_design(cfg), cfg.workers);
  write_tables(res, cfg.out);
  return res;
}

std::vector<BenchmarkRow> cmd_bench(const RunConfig& cfg) {
  RunConfig one = cfg;
  one.reps = 1;
  const McDesign design = resolve_design(one);
  const WeightSet weights = design_weights(design);
  const Dataset data = simulate_replication(design, weights, 0);
  const auto rows = benchmark(data, cfg.methods, cfg.bench_reps);

  fs::create_directories(cfg.out);
  std::ostringstream out;
  out << "method,n,p,repetitions,median_seconds,min_seconds,hessian_builds,objective_evaluations\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.n << ',' << r.p << ',' << r.repetitions << ',' << csv::format(r.median_seconds) << ','
        << csv::format(r.min_seconds) << ',' << r.hessian_builds << ',' << r.objective_evaluations << '\n';
  }
  csv::write_text(join(cfg.out, "bench.csv"), out.str());

  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  std::ostringstream meta;
  meta << "timestamp = " << stamp << "\nthreads = 1\nhardware_concurrency = " << std::thread::hardware_concurrency()
       << "\ndesign = " << design.name << "\nseed = " << design.master_seed << "\nsoftware = hosar " << HOSAR_VERSION << '\n';
  csv::write_text(join(cfg.out, "bench_meta.txt"), meta.str());
  return rows;
}

}  // namespace hosar
