#include "hosar/io.hpp"

#include <charconv>
#include <filesystem>
#include <sstream>

#include "hosar/csv.hpp"

namespace fs = std::filesystem;

namespace hosar {
namespace {

template <typename Int>
Int parse_int(const std::string& text, const std::string& where) {
  Int v{};
  const auto t = csv::trim(text);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw Error(ErrorCode::Parse, where + ": expected an integer, got '" + std::string(t) + "'");
  }
  return v;
}

std::pair<std::string, std::string> key_value(const std::string& line, const std::string& where) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::Parse, where + ": expected 'key = value'");
  return {std::string(csv::trim(std::string_view(line).substr(0, eq))), std::string(csv::trim(std::string_view(line).substr(eq + 1)))};
}

std::string strip_comment(const std::string& line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

}  // namespace

SparseXd read_triplets(const std::string& path, Index n, std::vector<std::string>* warnings) {
  const auto lines = csv::read_lines(path);
  std::vector<Eigen::Triplet<double>> trip;
  std::size_t first = 0;
  if (!lines.empty()) {
    const auto head = csv::split(lines.front());
    if (head.size() != 3 || head[0] != "row" || head[1] != "col" || head[2] != "value") {
      throw Error(ErrorCode::Parse, path + ":1: expected header 'row,col,value'");
    }
    first = 1;
  }
  for (std::size_t i = first; i < lines.size(); ++i) {
    const std::string where = path + ":" + std::to_string(i + 1);
    const auto f = csv::split(lines[i]);
    if (f.size() != 3) throw Error(ErrorCode::Parse, where + ": expected 3 fields");
    const auto r = parse_int<long long>(f[0], where);
    const auto c = parse_int<long long>(f[1], where);
    const double v = csv::parse(f[2], where);
    if (r < 1 || r > n || c < 1 || c > n) {
      throw Error(ErrorCode::InvalidDesign, where + ": index (" + f[0] + "," + f[1] + ") outside 1.." + std::to_string(n));
    }
    if (r == c && v != 0.0) throw Error(ErrorCode::InvalidDesign, where + ": nonzero diagonal entry at (" + f[0] + "," + f[1] + ")");
    if (r != c) trip.emplace_back(static_cast<Index>(r - 1), static_cast<Index>(c - 1), v);
  }
  if (trip.empty() && warnings) warnings->push_back(path + ": no entries; using a zero " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
  SparseXd w(n, n);
  w.setFromTriplets(trip.begin(), trip.end());
  w.makeCompressed();
  return w;
}

LoadedWeights load_user_weights(const std::string& manifest_path) {
  const auto lines = csv::read_lines(manifest_path);
  std::optional<Index> n;
  std::optional<Index> p;
  std::vector<std::string> files;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = manifest_path + ":" + std::to_string(i + 1);
    const std::string body = strip_comment(lines[i]);
    if (csv::trim(body).empty()) continue;
    const auto [key, value] = key_value(body, where);
    if (key == "n") {
      n = parse_int<Index>(value, where);
    } else if (key == "p") {
      p = parse_int<Index>(value, where);
    } else if (key == "matrix") {
      files.push_back(value);
    } else {
      throw Error(ErrorCode::Parse, where + ": unknown manifest key '" + key + "'");
    }
  }
  if (!n || *n < 1) throw Error(ErrorCode::Parse, manifest_path + ": missing or invalid n");
  if (!p || *p < 1) throw Error(ErrorCode::Parse, manifest_path + ": missing or invalid p");
  if (static_cast<Index>(files.size()) != *p) {
    throw Error(ErrorCode::Parse, manifest_path + ": p = " + std::to_string(*p) + " but " + std::to_string(files.size()) + " matrix entries");
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  LoadedWeights out;
  std::vector<SparseXd> mats;
  for (const auto& f : files) {
    const fs::path fp = fs::path(f).is_absolute() ? fs::path(f) : base / f;
    mats.push_back(read_triplets(fp.string(), *n, &out.warnings));
  }
  out.weights = WeightSet(*n, std::move(mats));
  return out;
}

void write_triplets(const std::string& path, const SparseXd& w) {
  std::vector<std::tuple<Index, Index, double>> entries;
  for (Index c = 0; c < w.outerSize(); ++c) {
    for (SparseXd::InnerIterator it(w, c); it; ++it) entries.emplace_back(it.row(), it.col(), it.value());
  }
  std::sort(entries.begin(), entries.end());
  std::ostringstream out;
  out << "row,col,value\n";
  for (const auto& [r, c, v] : entries) out << r + 1 << ',' << c + 1 << ',' << csv::format(v) << '\n';
  csv::write_text(path, out.str());
}

void write_weights(const std::string& manifest_path, const WeightSet& weights) {
  const fs::path base = fs::path(manifest_path).parent_path();
  std::ostringstream m;
  m << "n = " << weights.n() << "\np = " << weights.p() << '\n';
  for (Index i = 0; i < weights.p(); ++i) {
    const std::string name = "W" + std::to_string(i + 1) + ".csv";
    write_triplets((base / name).string(), weights[i]);
    m << "matrix = " << name << '\n';
  }
  csv::write_text(manifest_path, m.str());
}

void WeightDesignSpec::validate() const {
  if (kind == WeightKind::UserCsv) {
    if (manifest.empty()) throw Error(ErrorCode::Validation, "user_csv weights need a manifest path");
    return;
  }
  if (kind == WeightKind::DistanceRings) {
    if (!distances) throw Error(ErrorCode::Validation, "distance_rings weights need a distance matrix");
  } else if (distances) {
    throw Error(ErrorCode::Validation, "a distance matrix is only used by distance_rings");
  }
  if (kind != WeightKind::DistanceRings && n < 1) throw Error(ErrorCode::Validation, "n must be positive");
  if (p < 1) throw Error(ErrorCode::Validation, "p must be positive");
}

BuiltWeights build_weights(const WeightDesignSpec& spec) {
  spec.validate();
  BuiltWeights out;
  switch (spec.kind) {
    case WeightKind::Circulant:
      out.weights = circulant_weights<double>(spec.n, spec.p);
      break;
    case WeightKind::RandomSparse:
      out.weights = random_sparse_weights<double>(spec.n, spec.p, spec.seed);
      break;
    case WeightKind::DistanceRings: {
      auto rings = distance_ring_weights<double>(*spec.distances, spec.p);
      out.weights = std::move(rings.weights);
      out.isolated_rows = std::move(rings.isolated_rows);
      break;
    }
    case WeightKind::UserCsv: {
      auto loaded = load_user_weights(spec.manifest);
      out.weights = std::move(loaded.weights);
      out.warnings = std::move(loaded.warnings);
      break;
    }
  }
  return out;
}

InitialEstimator parse_estimator(const std::string& s) {
  if (s == "iv") return InitialEstimator::Iv;
  if (s == "ols") return InitialEstimator::Ols;
  throw Error(ErrorCode::Validation, "estimator must be iv or ols, got '" + s + "'");
}

Regime parse_regime(const std::string& s) {
  if (s == "divergent") return Regime::DivergentH;
  if (s == "bounded") return Regime::BoundedH;
  throw Error(ErrorCode::Validation, "regime must be divergent or bounded, got '" + s + "'");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  const auto positive = [&](long long v) {
    if (v < 1) throw Error(ErrorCode::Validation, where + ": " + key + " must be positive");
    return v;
  };
  if (key == "design") {
    cfg.design = value;
  } else if (key == "n") {
    cfg.n = positive(parse_int<long long>(value, where));
  } else if (key == "p") {
    cfg.p = positive(parse_int<long long>(value, where));
  } else if (key == "reps") {
    cfg.reps = static_cast<int>(positive(parse_int<long long>(value, where)));
  } else if (key == "seed") {
    cfg.seed = parse_int<std::uint64_t>(value, where);
  } else if (key == "estimator") {
    cfg.estimator = parse_estimator(value);
  } else if (key == "steps") {
    const auto s = parse_int<long long>(value, where);
    if (s < 0) throw Error(ErrorCode::Validation, where + ": steps must be nonnegative");
    cfg.steps = static_cast<int>(s);
  } else if (key == "regime") {
    cfg.regime = parse_regime(value);
  } else if (key == "workers") {
    cfg.workers = parse_int<unsigned>(value, where);
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "pmle") {
    if (value != "true" && value != "false") throw Error(ErrorCode::Validation, where + ": pmle must be true or false");
    cfg.pmle = value == "true";
  } else if (key == "sigma2_update") {
    if (value == "refresh") {
      cfg.sigma2_update = Sigma2Update::RefreshEachStep;
    } else if (value == "fixed") {
      cfg.sigma2_update = Sigma2Update::FixedInitial;
    } else {
      throw Error(ErrorCode::Validation, where + ": sigma2_update must be refresh or fixed");
    }
  } else if (key == "y") {
    cfg.y_path = value;
  } else if (key == "X") {
    cfg.x_path = value;
  } else if (key == "weights") {
    cfg.weights_manifest = value;
  } else if (key == "distances") {
    cfg.distances_path = value;
  } else if (key == "rings") {
    cfg.rings = positive(parse_int<long long>(value, where));
  } else if (key == "instruments") {
    cfg.instruments_path = value;
  } else if (key == "methods") {
    cfg.methods.clear();
    for (const auto& m : csv::split(value)) {
      if (!m.empty()) cfg.methods.push_back(m);
    }
    if (cfg.methods.empty()) throw Error(ErrorCode::Validation, where + ": methods is empty");
  } else if (key == "bench_reps") {
    cfg.bench_reps = static_cast<int>(positive(parse_int<long long>(value, where)));
  } else {
    throw Error(ErrorCode::Validation, where + ": unknown key '" + key + "'");
  }
}

void apply_config_file(const std::string& path, RunConfig& cfg) {
  const auto lines = csv::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string body = strip_comment(lines[i]);
    if (csv::trim(body).empty()) continue;
    const std::string where = path + ":" + std::to_string(i + 1);
    const auto [key, value] = key_value(body, where);
    apply_setting(cfg, key, value, where);
  }
}

McDesign resolve_design(const RunConfig& cfg) {
  std::string name = cfg.design;
  if (cfg.p) {
    const auto under = name.rfind("_p");
    if (under == std::string::npos) throw Error(ErrorCode::Validation, "unknown design '" + name + "'");
    name = name.substr(0, under) + "_p" + std::to_string(*cfg.p);
  }
  McDesign d = default_design(name);
  if (cfg.n) d.n = *cfg.n;
  d.reps = cfg.reps;
  d.master_seed = cfg.seed;
  d.newton_steps = cfg.steps;
  if (cfg.estimator) d.initials = {*cfg.estimator};
  d.pmle = cfg.pmle;
  d.sigma2_update = cfg.sigma2_update;
  d.validate();
  return d;
}

}  // namespace hosar
