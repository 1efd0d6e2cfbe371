// hosar: simulate, estimate, Monte Carlo and benchmark front end.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "hosar/commands.hpp"
#include "hosar/csv.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> design, estimator, regime, out;
  std::optional<long long> n, p, reps, steps;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value configuration file");
  cmd->add_option("--design", f.design, "bounded_p2|bounded_t6_p2|divergent_p2|het_p2 (p in 2, 4, 6)");
  cmd->add_option("--n", f.n, "sample size");
  cmd->add_option("--p", f.p, "number of weight matrices");
  cmd->add_option("--reps", f.reps, "Monte Carlo replications");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--estimator", f.estimator, "initial estimator: iv|ols");
  cmd->add_option("--steps", f.steps, "Newton steps");
  cmd->add_option("--regime", f.regime, "covariance regime: divergent|bounded");
  cmd->add_option("--workers", f.workers, "worker threads (0: all cores)");
  cmd->add_option("--out", f.out, "output directory");
}

hosar::RunConfig resolve(const Flags& f, const std::vector<std::pair<std::string, std::string>>& extra) {
  hosar::RunConfig cfg;
  if (!f.config.empty()) hosar::apply_config_file(f.config, cfg);
  const auto set = [&](const char* key, const auto& v) {
    if (v) {
      std::ostringstream s;
      s << *v;
      hosar::apply_setting(cfg, key, s.str(), std::string("--") + key);
    }
  };
  set("design", f.design);
  set("n", f.n);
  set("p", f.p);
  set("reps", f.reps);
  set("seed", f.seed);
  set("estimator", f.estimator);
  set("steps", f.steps);
  set("regime", f.regime);
  set("workers", f.workers);
  set("out", f.out);
  for (const auto& [k, v] : extra) {
    if (!v.empty()) hosar::apply_setting(cfg, k, v, "--" + k);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Higher-order spatial autoregression: IV/OLS, Newton-step estimates, inference and Monte Carlo"};
  app.require_subcommand(1);

  Flags sim_f, est_f, mc_f, bench_f;
  auto* sim = app.add_subcommand("simulate", "write one simulated dataset");
  add_common(sim, sim_f);

  auto* est = app.add_subcommand("estimate", "estimate a dataset from files");
  add_common(est, est_f);
  std::string y_path, x_path, weights_path, distances_path, rings, instruments_path;
  est->add_option("--y", y_path, "response CSV (header line, one column)");
  est->add_option("--X", x_path, "regressor CSV (header line)");
  est->add_option("--weights", weights_path, "weight manifest");
  est->add_option("--distances", distances_path, "dense distance CSV (no header)");
  est->add_option("--rings", rings, "number of distance rings");
  est->add_option("--instruments", instruments_path, "instrument CSV (header line)");

  auto* mc = app.add_subcommand("mc", "run a Monte Carlo design");
  add_common(mc, mc_f);
  bool mc_pmle = false;
  mc->add_flag("--pmle", mc_pmle, "also compute the profile-likelihood estimate");

  auto* bench = app.add_subcommand("bench", "time estimators on one simulated dataset");
  add_common(bench, bench_f);
  std::string methods, bench_reps;
  bench->add_option("--methods", methods, "comma list of iv,ols,newton1,newton3,pmle");
  bench->add_option("--bench-reps", bench_reps, "timing repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      const auto cfg = resolve(sim_f, {});
      hosar::cmd_simulate(cfg);
      std::cout << "wrote dataset to " << cfg.out << '\n';
    } else if (*est) {
      const auto cfg = resolve(est_f, {{"y", y_path}, {"X", x_path}, {"weights", weights_path}, {"distances", distances_path},
                                       {"rings", rings}, {"instruments", instruments_path}});
      const auto out = hosar::cmd_estimate(cfg);
      std::cout << out.newton.method_label << ": wrote " << cfg.out << "/estimates.csv\n";
    } else if (*mc) {
      const auto cfg = resolve(mc_f, {{"pmle", mc_pmle ? "true" : ""}});
      const auto res = hosar::cmd_mc(cfg);
      std::cout << res.design.name << " n=" << res.design.n << " reps=" << res.design.reps << ": failed reps";
      for (std::size_t c = 0; c < res.columns.size(); ++c) std::cout << ' ' << res.columns[c].label << '=' << res.failed_reps[c];
      std::cout << "\nwrote tables to " << cfg.out << '\n';
    } else if (*bench) {
      const auto cfg = resolve(bench_f, {{"methods", methods}, {"bench_reps", bench_reps}});
      for (const auto& r : hosar::cmd_bench(cfg)) {
        std::cout << r.method << ": median " << hosar::csv::format(r.median_seconds) << " s\n";
      }
    }
  } catch (const hosar::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hosar::is_numerical(e.code()) ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
