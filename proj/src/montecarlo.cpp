#include "hosar/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include "hosar/csv.hpp"

namespace hosar {

std::string_view to_string(DesignKind d) {
  switch (d) {
    case DesignKind::BoundedCirculant: return "bounded_circulant";
    case DesignKind::DivergentRandom: return "divergent_random";
    case DesignKind::HetCirculant: return "het_circulant";
  }
  return "?";
}

std::string_view to_string(ErrorDist e) {
  switch (e) {
    case ErrorDist::StdNormal: return "std_normal";
    case ErrorDist::T6: return "t6";
    case ErrorDist::HetNormal: return "het_normal";
  }
  return "?";
}

ThetaD default_true_params(Index p) {
  ThetaD t;
  t.beta = VectorXd(2);
  t.beta << 1.0, 0.5;
  switch (p) {
    case 2: t.lambda = VectorXd(2); t.lambda << 0.4, 0.5; break;
    case 4: t.lambda = VectorXd(4); t.lambda << 0.3, 0.2, 0.2, 0.2; break;
    case 6: t.lambda = VectorXd::Constant(6, 0.15); break;
    default: throw Error(ErrorCode::Validation, "no default parameters for p = " + std::to_string(p));
  }
  return t;
}

void McDesign::validate() const {
  if (n < 3) throw Error(ErrorCode::Validation, "design n must be at least 3");
  if (p < 1) throw Error(ErrorCode::Validation, "design p must be positive");
  if (reps < 1) throw Error(ErrorCode::Validation, "reps must be positive");
  if (newton_steps < 0) throw Error(ErrorCode::Validation, "newton_steps must be nonnegative");
  if (initials.empty() && !pmle) throw Error(ErrorCode::Validation, "design runs no estimator");
  if (true_params.p() != p) throw Error(ErrorCode::Validation, "true lambda has the wrong length");
  if (true_params.k() != 2) throw Error(ErrorCode::Validation, "simulation designs use k = 2 regressors");
  if (!(true_params.lambda.lpNorm<1>() < 1.0)) throw Error(ErrorCode::Validation, "true lambda must satisfy sum |lambda_i| < 1");
  if (design == DesignKind::HetCirculant && error_dist != ErrorDist::HetNormal) {
    throw Error(ErrorCode::Validation, "het_circulant design uses het_normal errors");
  }
  if (design != DesignKind::HetCirculant && error_dist == ErrorDist::HetNormal) {
    throw Error(ErrorCode::Validation, "het_normal errors belong to the het_circulant design");
  }
  if (design != DesignKind::DivergentRandom && 2 * p + 1 > n) {
    throw Error(ErrorCode::Validation, "circulant design needs n >= 2p + 1");
  }
}

McDesign default_design(const std::string& name) {
  McDesign d;
  d.name = name;
  const auto under = name.rfind("_p");
  if (under == std::string::npos) throw Error(ErrorCode::Validation, "unknown design '" + name + "'");
  const std::string family = name.substr(0, under);
  const std::string ptext = name.substr(under + 2);
  if (ptext != "2" && ptext != "4" && ptext != "6") throw Error(ErrorCode::Validation, "unknown design '" + name + "'");
  d.p = std::stoi(ptext);
  if (family == "bounded") {
    d.design = DesignKind::BoundedCirculant;
  } else if (family == "bounded_t6") {
    d.design = DesignKind::BoundedCirculant;
    d.error_dist = ErrorDist::T6;
  } else if (family == "divergent") {
    d.design = DesignKind::DivergentRandom;
    d.initials = {InitialEstimator::Iv, InitialEstimator::Ols};
  } else if (family == "het") {
    d.design = DesignKind::HetCirculant;
    d.error_dist = ErrorDist::HetNormal;
  } else {
    throw Error(ErrorCode::Validation, "unknown design '" + name + "'");
  }
  d.true_params = default_true_params(d.p);
  return d;
}

WeightSet design_weights(const McDesign& design) {
  if (design.design == DesignKind::DivergentRandom) return random_sparse_weights<double>(design.n, design.p, design.master_seed);
  return circulant_weights<double>(design.n, design.p);
}

Dataset simulate_replication(const McDesign& design, const WeightSet& weights, int rep) {
  const auto r = static_cast<std::uint64_t>(rep);
  Stream xs(design.master_seed, r, StreamTag::Regressors);
  MatrixXd X(design.n, 2);
  for (Index c = 0; c < X.cols(); ++c) {
    for (Index j = 0; j < X.rows(); ++j) X(j, c) = xs.uniform();
  }
  Stream es(design.master_seed, r, StreamTag::Errors);
  const ThetaD& t0 = design.true_params;
  VectorXd y = simulate(weights, X, t0.beta, t0.lambda, design.error_dist, es);
  return Dataset{std::move(y), std::move(X), weights, std::nullopt};
}

Index McResult::column_index(const std::string& label) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].label == label) return static_cast<Index>(c);
  }
  throw Error(ErrorCode::Validation, "no Monte Carlo column '" + label + "'");
}

namespace {

std::vector<McColumn> make_columns(const McDesign& design) {
  std::vector<McColumn> cols;
  for (const auto init : design.initials) {
    const std::string base(to_string(init));
    cols.push_back({base, init, 0});
    for (int l = 1; l <= design.newton_steps; ++l) cols.push_back({base + "_l" + std::to_string(l), init, l});
  }
  if (design.pmle) cols.push_back({"pmle", std::nullopt, 0});
  return cols;
}

std::vector<std::string> parameter_names(Index p, Index k) {
  std::vector<std::string> names;
  for (Index i = 1; i <= p; ++i) names.push_back("lambda" + std::to_string(i));
  for (Index i = 1; i <= k; ++i) names.push_back("beta" + std::to_string(i));
  return names;
}

using RepRow = std::vector<std::optional<VectorXd>>;

RepRow run_replication(const McDesign& design, const WeightSet& weights, const std::vector<McColumn>& columns, int rep) {
  const Dataset data = simulate_replication(design, weights, rep);
  RepRow row(columns.size());
  std::optional<ThetaD> iv_theta;
  for (const auto init : design.initials) {
    std::vector<VectorXd> path;  // estimates after 0..m-1 steps
    bool complete = false;
    try {
      const EstimateReport initial = init == InitialEstimator::Iv ? estimate_iv(data) : estimate_ols(data);
      if (init == InitialEstimator::Iv) iv_theta = initial.theta_hat;
      EstimatorConfig cfg;
      cfg.initial = init;
      cfg.newton_steps = design.newton_steps;
      cfg.record_objective = false;
      cfg.sigma2_update = design.sigma2_update;
      try {
        const EstimateReport rep_out = iterate_newton_from(data, initial, cfg);
        for (const auto& it : rep_out.iterates) path.push_back(it.theta.stacked());
        complete = true;
      } catch (const EstimationFailure& f) {
        for (const auto& it : f.partial().iterates) path.push_back(it.theta.stacked());
      }
    } catch (const Error&) {
      // initial estimator failed; every column of this start stays empty
    }
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& col = columns[c];
      if (!col.initial || *col.initial != init) continue;
      const auto step = static_cast<std::size_t>(col.steps);
      if (step < path.size()) {
        row[c] = path[step];
      } else if (complete && !path.empty()) {
        row[c] = path.back();  // early stop: the chain is constant from here on
      }
    }
  }
  if (design.pmle) {
    try {
      PmleConfig pc;
      pc.start = iv_theta;
      row.back() = pmle(data, pc).theta_check.stacked();
    } catch (const Error&) {
    }
  }
  return row;
}

void summarize(McResult& res) {
  const auto& d = res.design;
  const Index dim = d.p + 2;
  const auto ncol = static_cast<Index>(res.columns.size());
  const VectorXd truth = d.true_params.stacked();
  const auto names = parameter_names(d.p, 2);

  std::vector<std::string> labels;
  for (const auto& c : res.columns) labels.push_back(c.label);
  res.mean = {"mean", names, labels, MatrixXd::Constant(dim, ncol, std::numeric_limits<double>::quiet_NaN())};
  res.mse = {"mse", names, labels, MatrixXd::Constant(dim, ncol, std::numeric_limits<double>::quiet_NaN())};
  res.failed_reps.assign(res.columns.size(), 0);

  for (Index c = 0; c < ncol; ++c) {
    VectorXd sum = VectorXd::Zero(dim);
    VectorXd sq = VectorXd::Zero(dim);
    int count = 0;
    for (const auto& row : res.estimates) {
      const auto& e = row[static_cast<std::size_t>(c)];
      if (!e) {
        ++res.failed_reps[static_cast<std::size_t>(c)];
        continue;
      }
      sum += *e;
      sq += (*e - truth).cwiseAbs2();
      ++count;
    }
    if (count > 0) {
      res.mean.cells.col(c) = sum / count;
      res.mse.cells.col(c) = sq / count;
    }
  }

  std::vector<std::string> rr_labels;
  std::vector<std::pair<Index, Index>> rr_pairs;  // (initial column, iterated column)
  for (Index c = 0; c < ncol; ++c) {
    const auto& col = res.columns[static_cast<std::size_t>(c)];
    if (!col.initial || col.steps == 0) continue;
    rr_labels.push_back(col.label);
    rr_pairs.emplace_back(res.column_index(std::string(to_string(*col.initial))), c);
  }
  res.rrmse = {"rrmse", names, rr_labels, MatrixXd(dim, static_cast<Index>(rr_pairs.size()))};
  for (std::size_t j = 0; j < rr_pairs.size(); ++j) {
    res.rrmse.cells.col(static_cast<Index>(j)) =
        res.mse.cells.col(rr_pairs[j].first).cwiseSqrt().cwiseQuotient(res.mse.cells.col(rr_pairs[j].second).cwiseSqrt());
  }

  if (d.pmle) {
    const Index pc = ncol - 1;
    McTable t{"rrmse_mle", names, {}, MatrixXd(dim, pc)};
    for (Index c = 0; c < pc; ++c) {
      t.columns.push_back(res.columns[static_cast<std::size_t>(c)].label);
      t.cells.col(c) = res.mse.cells.col(pc).cwiseSqrt().cwiseQuotient(res.mse.cells.col(c).cwiseSqrt());
    }
    res.rrmse_mle = std::move(t);
  }
}

}  // namespace

McResult run(const McDesign& design, unsigned workers) {
  design.validate();
  const WeightSet weights = design_weights(design);
  McResult res;
  res.design = design;
  res.columns = make_columns(design);
  res.estimates.resize(static_cast<std::size_t>(design.reps));

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(design.reps));

  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (int r = next++; r < design.reps; r = next++) {
      try {
        res.estimates[static_cast<std::size_t>(r)] = run_replication(design, weights, res.columns, r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = design.reps;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);

  summarize(res);
  return res;
}

double median_sup_distance(const McResult& result, const std::string& a, const std::string& b) {
  const auto ia = static_cast<std::size_t>(result.column_index(a));
  const auto ib = static_cast<std::size_t>(result.column_index(b));
  std::vector<double> d;
  for (const auto& row : result.estimates) {
    if (row[ia] && row[ib]) d.push_back((*row[ia] - *row[ib]).lpNorm<Eigen::Infinity>());
  }
  if (d.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2) return *mid;
  const double upper = *mid;
  return 0.5 * (*std::max_element(d.begin(), mid) + upper);
}

void write_tables(const McResult& result, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto path = [&](const std::string& f) { return (std::filesystem::path(dir) / f).string(); };
  const auto put = [&](const McTable& t) {
    csv::write_text(path(t.statistic + ".csv"), csv::labelled_table("parameter", t.columns, t.rows, t.cells));
  };
  put(result.mean);
  put(result.mse);
  put(result.rrmse);
  if (result.rrmse_mle) put(*result.rrmse_mle);

  std::ostringstream failed;
  failed << "estimator,failed_reps,reps\n";
  for (std::size_t c = 0; c < result.columns.size(); ++c) {
    failed << result.columns[c].label << ',' << result.failed_reps[c] << ',' << result.design.reps << '\n';
  }
  csv::write_text(path("failed.csv"), failed.str());

  const auto& d = result.design;
  std::ostringstream s;
  s << "design: " << d.name << " (" << to_string(d.design) << ")\n"
    << "n: " << d.n << "\np: " << d.p << "\nerrors: " << to_string(d.error_dist) << "\nreps: " << d.reps
    << "\nseed: " << d.master_seed << "\ntrue theta:";
  for (Index i = 0; i < d.true_params.size(); ++i) s << ' ' << csv::format(d.true_params.stacked()(i));
  s << "\n\nfailed reps per estimator:\n";
  for (std::size_t c = 0; c < result.columns.size(); ++c) s << "  " << result.columns[c].label << ": " << result.failed_reps[c] << '\n';
  const auto block = [&](const McTable& t) {
    s << '\n' << t.statistic << '\n' << csv::labelled_table("parameter", t.columns, t.rows, t.cells);
  };
  block(result.mean);
  block(result.mse);
  block(result.rrmse);
  if (result.rrmse_mle) block(*result.rrmse_mle);
  csv::write_text(path("summary.txt"), s.str());
}

}  // namespace hosar
