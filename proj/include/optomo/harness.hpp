#pragma once

// Experiment configuration and the five study drivers behind the command-line
// tool. Every driver returns a RunReport and, when given an output directory,
// writes its artifacts there (CSV, JSON, SVG) together with the normalised
// configuration whose hash is the run fingerprint.

#include "optomo/asymptotics.hpp"
#include "optomo/bayes.hpp"
#include "optomo/io.hpp"
#include "optomo/linearized.hpp"
#include "optomo/parallel.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo {

using io::Json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::string kind = "rates";
  Geometry geometry = Geometry::slab;
  int cells = 1024;
  int ordinates = 16;
  std::vector<double> epsilons = reference_epsilons();
  PriorSpec prior;
  CoefficientVector medium;  ///< coefficients of the reference medium (forward, rates)
  std::vector<std::vector<double>> detectors{{0.0}, {1.0}};
  std::vector<std::string> traces{"x", "1-x", "x^2"};
  double noise_std = 0.05;
  MollifierShape mollifier_shape = MollifierShape::hat;
  double mollifier_half_width = 0.0;  ///< along the boundary, domain units; 0 = two cells
  int adjoint_lift_order = 1;
  SolverOptions solver;
  std::uint64_t seed = 2024;

  // rates
  std::string rate_trace = "x";
  std::vector<std::string> rate_metrics{"r0", "r1", "gap"};
  int uniform_draws = 0;

  // posterior comparison
  int samples = 2000;
  CoefficientVector truth;
  Model data_model = Model::de;
  double data_epsilon = 0.05;
  std::uint64_t noise_seed = 7;
  std::string data_file;
  KlDirection kl_direction = KlDirection::rte_de;
  double pcn_beta = 0.2;
  int pcn_steps = 0;

  // linearised comparison
  CoefficientVector background;
  CoefficientVector perturbation;
  double tangent_amplitude = 0.0;

  Json normalized;  ///< fully populated config; hashed for the fingerprint
};

namespace detail {

inline std::string kind_name(const std::string& k) { return k; }

template <class T>
T field(const Json& obj, const std::string& key, const std::string& path, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

inline CoefficientVector coefficients(const Json& obj, const std::string& key, const std::string& path, int m) {
  const auto v = field<std::vector<double>>(obj, key, path, std::vector<double>(static_cast<std::size_t>(m), 0.0));
  if (static_cast<int>(v.size()) != m)
    throw ConfigError(path + "." + key + ": expected " + std::to_string(m) + " coefficients, got " +
                      std::to_string(v.size()));
  CoefficientVector c(m);
  for (int i = 0; i < m; ++i) c[i] = v[static_cast<std::size_t>(i)];
  return c;
}

inline std::vector<double> to_vector(const CoefficientVector& c) { return {c.data(), c.data() + c.size()}; }

inline const Json& section(const Json& root, const std::string& key) {
  static const Json empty = Json::object();
  if (!root.contains(key)) return empty;
  if (!root.at(key).is_object()) throw ConfigError("config." + key + ": expected an object");
  return root.at(key);
}

}  // namespace detail

/// Parses and validates a configuration, filling defaults. Errors name the offending field path.
inline ExperimentConfig parse_config(const Json& root) {
  if (!root.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> known{"kind",   "geometry", "cells",    "ordinates", "epsilons",
                                              "prior",  "medium",   "measurement", "adjoint", "solver",
                                              "seed",   "rates",    "bayes",    "linearized"};
  for (const auto& [k, v] : root.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("config." + k + ": unknown field");

  using detail::field;
  ExperimentConfig c;
  c.kind = field<std::string>(root, "kind", "config", c.kind);
  try {
    c.geometry = geometry_from_string(field<std::string>(root, "geometry", "config", "slab"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.geometry: ") + e.what());
  }
  c.cells = field<int>(root, "cells", "config", c.cells);
  if (c.cells < 4) throw ConfigError("config.cells: must be >= 4");
  c.ordinates = field<int>(root, "ordinates", "config", c.ordinates);
  if (c.ordinates < 4 || c.ordinates % 2) throw ConfigError("config.ordinates: must be even and >= 4");
  c.epsilons = field<std::vector<double>>(root, "epsilons", "config", c.epsilons);
  for (std::size_t i = 0; i < c.epsilons.size(); ++i) {
    if (!(c.epsilons[i] > 0.0 && c.epsilons[i] <= 1.0))
      throw ConfigError("config.epsilons[" + std::to_string(i) + "]: must lie in (0, 1]");
    if (i > 0 && !(c.epsilons[i] < c.epsilons[i - 1]))
      throw ConfigError("config.epsilons: must be strictly decreasing");
  }
  c.seed = field<std::uint64_t>(root, "seed", "config", c.seed);

  const Json& pr = detail::section(root, "prior");
  c.prior.basis_size = field<int>(pr, "basis_size", "config.prior", c.prior.basis_size);
  c.prior.amplitude = field<double>(pr, "amplitude", "config.prior", c.prior.amplitude);
  c.prior.decay = field<double>(pr, "decay", "config.prior", c.prior.decay);
  c.prior.mean_offset = field<double>(pr, "mean_offset", "config.prior", c.prior.mean_offset);
  c.prior.admissibility_bound = field<double>(pr, "admissibility_bound", "config.prior", c.prior.admissibility_bound);
  c.prior.max_rejections = field<int>(pr, "max_rejections", "config.prior", c.prior.max_rejections);
  try {
    c.prior.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.prior: ") + e.what());
  }
  const int m = c.prior.basis_size;
  c.medium = detail::coefficients(detail::section(root, "medium"), "coefficients", "config.medium", m);

  const Json& me = detail::section(root, "measurement");
  c.detectors = field<std::vector<std::vector<double>>>(me, "detectors", "config.measurement", c.detectors);
  c.traces = field<std::vector<std::string>>(me, "traces", "config.measurement", c.traces);
  c.noise_std = field<double>(me, "noise_std", "config.measurement", c.noise_std);
  if (c.detectors.empty()) throw ConfigError("config.measurement.detectors: need at least one detector");
  if (c.traces.empty()) throw ConfigError("config.measurement.traces: need at least one trace");
  for (std::size_t i = 0; i < c.traces.size(); ++i) {
    try {
      (void)traces::from_name(c.traces[i]);
    } catch (const std::exception& e) {
      throw ConfigError("config.measurement.traces[" + std::to_string(i) + "]: " + e.what());
    }
  }
  if (!(c.noise_std > 0.0)) throw ConfigError("config.measurement.noise_std: must be positive");

  const Json& ad = detail::section(root, "adjoint");
  const std::string shape = field<std::string>(ad, "mollifier", "config.adjoint", "hat");
  if (shape != "hat" && shape != "bump") throw ConfigError("config.adjoint.mollifier: expected hat or bump");
  c.mollifier_shape = shape == "hat" ? MollifierShape::hat : MollifierShape::bump;
  c.mollifier_half_width = field<double>(ad, "half_width", "config.adjoint", 0.0);
  c.adjoint_lift_order = field<int>(ad, "lift_order", "config.adjoint", c.adjoint_lift_order);
  if (c.adjoint_lift_order != 0 && c.adjoint_lift_order != 1) throw ConfigError("config.adjoint.lift_order: 0 or 1");

  const Json& so = detail::section(root, "solver");
  c.solver.tolerance = field<double>(so, "tolerance", "config.solver", c.solver.tolerance);
  c.solver.max_iterations = field<int>(so, "max_iterations", "config.solver", c.solver.max_iterations);
  c.solver.restart = field<int>(so, "restart", "config.solver", c.solver.restart);
  if (!(c.solver.tolerance > 0.0) || c.solver.max_iterations < 1 || c.solver.restart < 1)
    throw ConfigError("config.solver: tolerance, max_iterations and restart must be positive");

  const Json& ra = detail::section(root, "rates");
  c.rate_trace = field<std::string>(ra, "trace", "config.rates", c.rate_trace);
  c.rate_metrics = field<std::vector<std::string>>(ra, "metrics", "config.rates", c.rate_metrics);
  for (const auto& mname : c.rate_metrics)
    if (mname != "r0" && mname != "r1" && mname != "gap") throw ConfigError("config.rates.metrics: unknown metric " + mname);
  c.uniform_draws = field<int>(ra, "uniform_draws", "config.rates", c.uniform_draws);

  const Json& ba = detail::section(root, "bayes");
  c.samples = field<int>(ba, "samples", "config.bayes", c.samples);
  if (c.samples < 100) throw ConfigError("config.bayes.samples: need at least 100 prior samples");
  c.truth = detail::coefficients(ba, "truth", "config.bayes", m);
  try {
    c.data_model = model_from_string(field<std::string>(ba, "data_model", "config.bayes", "DE"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config.bayes.data_model: ") + e.what());
  }
  c.data_epsilon = field<double>(ba, "data_epsilon", "config.bayes", c.data_epsilon);
  c.noise_seed = field<std::uint64_t>(ba, "noise_seed", "config.bayes", c.noise_seed);
  c.data_file = field<std::string>(ba, "data_file", "config.bayes", "");
  const std::string dir = field<std::string>(ba, "kl_direction", "config.bayes", "rte_de");
  if (dir != "rte_de" && dir != "de_rte") throw ConfigError("config.bayes.kl_direction: expected rte_de or de_rte");
  c.kl_direction = dir == "rte_de" ? KlDirection::rte_de : KlDirection::de_rte;
  c.pcn_beta = field<double>(ba, "pcn_beta", "config.bayes", c.pcn_beta);
  c.pcn_steps = field<int>(ba, "pcn_steps", "config.bayes", c.pcn_steps);

  const Json& li = detail::section(root, "linearized");
  c.background = detail::coefficients(li, "background", "config.linearized", m);
  c.perturbation = detail::coefficients(li, "perturbation", "config.linearized", m);
  c.tangent_amplitude = field<double>(li, "tangent_amplitude", "config.linearized", c.tangent_amplitude);

  // detectors must resolve to boundary nodes
  const SpatialGrid grid(c.geometry, c.cells);
  for (std::size_t i = 0; i < c.detectors.size(); ++i) {
    const auto& d = c.detectors[i];
    if (d.empty() || d.size() > 2)
      throw ConfigError("config.measurement.detectors[" + std::to_string(i) + "]: expected [x] or [x, y]");
    const Vec2 p{d[0], d.size() > 1 ? d[1] : 0.0};
    const Vec2 q = grid.position(grid.nearest_boundary_node(p));
    if (norm(Vec2{p[0] - q[0], p[1] - q[1]}) > 0.5 * grid.spacing() + 1e-12)
      throw ConfigError("config.measurement.detectors[" + std::to_string(i) + "]: point is not on the boundary");
  }

  c.normalized = {
      {"kind", c.kind},
      {"geometry", to_string(c.geometry)},
      {"cells", c.cells},
      {"ordinates", c.ordinates},
      {"epsilons", c.epsilons},
      {"seed", c.seed},
      {"prior",
       {{"basis_size", c.prior.basis_size},
        {"amplitude", c.prior.amplitude},
        {"decay", c.prior.decay},
        {"mean_offset", c.prior.mean_offset},
        {"admissibility_bound", c.prior.admissibility_bound},
        {"max_rejections", c.prior.max_rejections}}},
      {"medium", {{"coefficients", detail::to_vector(c.medium)}}},
      {"measurement", {{"detectors", c.detectors}, {"traces", c.traces}, {"noise_std", c.noise_std}}},
      {"adjoint", {{"mollifier", shape}, {"half_width", c.mollifier_half_width}, {"lift_order", c.adjoint_lift_order}}},
      {"solver",
       {{"tolerance", c.solver.tolerance}, {"max_iterations", c.solver.max_iterations}, {"restart", c.solver.restart}}},
      {"rates", {{"trace", c.rate_trace}, {"metrics", c.rate_metrics}, {"uniform_draws", c.uniform_draws}}},
      {"bayes",
       {{"samples", c.samples},
        {"truth", detail::to_vector(c.truth)},
        {"data_model", to_string(c.data_model)},
        {"data_epsilon", c.data_epsilon},
        {"noise_seed", c.noise_seed},
        {"data_file", c.data_file},
        {"kl_direction", dir},
        {"pcn_beta", c.pcn_beta},
        {"pcn_steps", c.pcn_steps}}},
      {"linearized",
       {{"background", detail::to_vector(c.background)},
        {"perturbation", detail::to_vector(c.perturbation)},
        {"tangent_amplitude", c.tangent_amplitude}}},
  };
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(io::read_json(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Runtime options that never change results.
struct RunOptions {
  std::filesystem::path out_dir;  ///< empty: do not write artifacts
  unsigned threads = 1;
  bool refine = false;
};

struct RunReport {
  std::string command;
  std::string fingerprint;
  std::vector<RateStudy> studies;
  double wall_time = 0.0;
  std::vector<std::string> warnings;
  std::vector<std::string> artifacts;
  Json details = Json::object();

  const RateStudy* study(const std::string& metric) const {
    for (const auto& s : studies)
      if (s.metric == metric) return &s;
    return nullptr;
  }

  /// Like study(), but a missing fit is an error.
  const RateStudy& require(const std::string& metric) const {
    if (const RateStudy* s = study(metric)) return *s;
    throw std::runtime_error(command + ": no rate fit for metric '" + metric + "'");
  }

  Json to_json() const {
    Json st = Json::array();
    for (const auto& s : studies) st.push_back(io::to_json(s));
    return {{"command", command}, {"fingerprint", fingerprint}, {"studies", st}, {"wall_time_s", wall_time},
            {"warnings", warnings}, {"artifacts", artifacts}, {"details", details}};
  }
};

namespace detail {

class Artifacts {
 public:
  Artifacts(const RunOptions& opts, RunReport& report) : dir_(opts.out_dir), report_(report) {}
  bool enabled() const { return !dir_.empty(); }
  void text(const std::string& name, const std::string& body) {
    if (!enabled()) return;
    io::write_text(dir_ / name, body);
    report_.artifacts.push_back(name);
  }
  void json(const std::string& name, const Json& doc) { text(name, doc.dump(2) + "\n"); }

 private:
  std::filesystem::path dir_;
  RunReport& report_;
};

struct Setup {
  SpatialGrid grid;
  AngularQuadrature quad;
  MeasurementSetup measurement;
  Mollifier mollifier;
};

inline Setup make_setup(const ExperimentConfig& c, int cells) {
  Setup s{SpatialGrid(c.geometry, cells), build_quadrature(c.geometry, c.ordinates), {}, {}};
  for (const auto& d : c.detectors) s.measurement.detectors.push_back(s.grid.nearest_boundary_node({d[0], d.size() > 1 ? d[1] : 0.0}));
  for (const auto& t : c.traces) s.measurement.sources.push_back(traces::from_name(t));
  s.measurement.noise_std = c.noise_std;
  s.mollifier.shape = c.mollifier_shape;
  s.mollifier.half_width_cells = c.mollifier_half_width > 0.0 ? c.mollifier_half_width * cells : 2.0;
  return s;
}

inline RunReport begin(const std::string& command, const ExperimentConfig& c) {
  RunReport r;
  r.command = command;
  r.fingerprint = io::fingerprint(c.normalized);
  return r;
}

inline void finish(RunReport& r, Artifacts& art, const ExperimentConfig& c,
                   std::chrono::steady_clock::time_point start) {
  for (auto& s : r.studies) s.fingerprint = r.fingerprint;
  art.json("config.json", c.normalized);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  // wall time is excluded from the persisted report so reruns are byte-identical
  Json doc = r.to_json();
  doc.erase("wall_time_s");
  art.json("report.json", doc);
}

inline Json matrix_json(const Eigen::MatrixXd& a) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline Json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace detail

inline Json kernel_bank_json(const KernelBank& bank, const SpatialGrid& grid) {
  Json nodes = Json::array();
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const Vec2 p = grid.position(k);
    nodes.push_back(grid.geometry() == Geometry::slab ? Json::array({p[0]}) : Json::array({p[0], p[1]}));
  }
  Json kernels = Json::array();
  for (int j = 0; j < bank.detectors; ++j)
    for (int k = 0; k < bank.sources; ++k) kernels.push_back({{"detector", j}, {"source", k}, {"values", detail::vector_json(bank.at(j, k))}});
  return {{"model", bank.model},
          {"epsilon", std::isnan(bank.epsilon) ? Json(nullptr) : Json(bank.epsilon)},
          {"geometry", to_string(grid.geometry())},
          {"nodes", nodes},
          {"kernels", kernels}};
}

inline Json posterior_json(const GaussianPosterior& p) {
  return {{"mean", detail::vector_json(p.mean)},
          {"covariance", detail::matrix_json(p.covariance)},
          {"eigenvalues", detail::vector_json(p.eigenvalues())}};
}

inline Json data_json(const DataVector& d) {
  return {{"values", detail::matrix_json(d.values)},
          {"provenance",
           {{"model", to_string(d.provenance.model)},
            {"theta_true", detail::vector_json(d.provenance.theta_true)},
            {"noise_seed", d.provenance.noise_seed},
            {"noise_std", d.provenance.noise_std},
            {"epsilon", std::isnan(d.provenance.epsilon) ? Json(nullptr) : Json(d.provenance.epsilon)}}}};
}

inline DataVector data_from_json(const Json& doc) {
  try {
    DataVector d;
    const auto rows = doc.at("values").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw std::invalid_argument("empty data matrix");
    d.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows[0].size()) throw std::invalid_argument("ragged data matrix");
      for (std::size_t j = 0; j < rows[i].size(); ++j) d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    const Json& p = doc.at("provenance");
    d.provenance.model = model_from_string(p.at("model").get<std::string>());
    const auto t = p.at("theta_true").get<std::vector<double>>();
    d.provenance.theta_true = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
    d.provenance.noise_seed = p.at("noise_seed").get<std::uint64_t>();
    d.provenance.noise_std = p.at("noise_std").get<double>();
    d.provenance.epsilon = p.at("epsilon").is_null() ? std::numeric_limits<double>::quiet_NaN() : p.at("epsilon").get<double>();
    return d;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("data file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

inline RunReport cmd_forward(const ExperimentConfig& c, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  RunReport r = detail::begin("forward", c);
  detail::Artifacts art(opts, r);
  const auto s = detail::make_setup(c, c.cells);
  const Medium medium = medium_from_coefficients(c.prior, c.medium, s.grid);
  if (!medium.admissible) throw std::invalid_argument("config.medium: reference medium is not admissible");

  auto table = [&](const std::string& model, const std::vector<std::pair<double, Eigen::MatrixXd>>& maps) {
    std::string csv = "model,epsilon,detector,source,value\n";
    for (const auto& [eps, m] : maps)
      for (Eigen::Index j = 0; j < m.rows(); ++j)
        for (Eigen::Index k = 0; k < m.cols(); ++k)
          csv += model + "," + (std::isnan(eps) ? std::string() : io::format_number(eps)) + "," + std::to_string(j) + "," +
                 std::to_string(k) + "," + io::format_number(m(j, k)) + "\n";
    return csv;
  };
  const ForwardData de = forward_map_de(medium, s.measurement, s.grid);
  std::vector<std::pair<double, Eigen::MatrixXd>> rte(c.epsilons.size());
  parallel_for(c.epsilons.size(), opts.threads, [&](std::size_t i) {
    rte[i] = {c.epsilons[i], forward_map_rte(medium, c.epsilons[i], s.measurement, 1, s.grid, s.quad, c.solver).values};
  });
  art.text("forward_de.csv", table("DE", {{std::numeric_limits<double>::quiet_NaN(), de.values}}));
  art.text("forward_rte.csv", table("RTE", rte));
  r.details["de"] = detail::matrix_json(de.values);
  Json gaps = Json::array();
  for (const auto& [eps, m] : rte) gaps.push_back({{"epsilon", eps}, {"gap", (m - de.values).cwiseAbs().maxCoeff()}});
  r.details["gaps"] = gaps;
  detail::finish(r, art, c, start);
  return r;
}

namespace detail {

struct RateValues {
  std::vector<double> r0, r1, gap;
};

inline RateValues rate_values(const ExperimentConfig& c, int cells, unsigned threads) {
  const auto s = make_setup(c, cells);
  const Medium medium = medium_from_coefficients(c.prior, c.medium, s.grid);
  if (!medium.admissible) throw std::invalid_argument("config.medium: reference medium is not admissible");
  const Trace trace = traces::from_name(c.rate_trace);
  auto wants = [&](const char* m) { return std::find(c.rate_metrics.begin(), c.rate_metrics.end(), m) != c.rate_metrics.end(); };
  std::optional<ExpansionTerms> terms;
  if (wants("r0") || wants("r1")) terms = expansion_terms(medium, trace, s.grid, s.quad);
  const std::size_t n = c.epsilons.size();
  RateValues v{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  parallel_for(n, threads, [&](std::size_t i) {
    const double e = c.epsilons[i];
    if (wants("r0"))
      v.r0[i] = residual_norms(solve_rte(medium, e, lift_boundary(medium, e, trace, 0, s.grid, s.quad), s.grid, s.quad, c.solver), *terms, e).r0;
    if (wants("r1"))
      v.r1[i] = residual_norms(solve_rte(medium, e, lift_boundary(medium, e, trace, 1, s.grid, s.quad), s.grid, s.quad, c.solver), *terms, e).r1;
    if (wants("gap")) v.gap[i] = forward_gap(medium, e, s.measurement, s.grid, s.quad, c.solver);
  });
  return v;
}

inline std::vector<RatePoint> points(const std::vector<double>& eps, const std::vector<double>& vals) {
  std::vector<RatePoint> p;
  for (std::size_t i = 0; i < eps.size(); ++i) p.push_back({eps[i], vals[i]});
  return p;
}

// A metric that vanishes identically (e.g. an exact expansion) cannot be fitted;
// the run keeps its values and reports the skipped fit as a warning.
inline void add_study(RunReport& r, const std::vector<double>& eps, const std::vector<double>& vals,
                      const std::string& metric) {
  try {
    r.studies.push_back(fit_rate(points(eps, vals), metric));
  } catch (const std::invalid_argument& e) {
    r.warnings.push_back(metric + ": rate fit skipped (" + e.what() + ")");
  }
}

}  // namespace detail

inline RunReport cmd_rates(const ExperimentConfig& c, const RunOptions& opts = {}) {
  if (c.epsilons.size() < 4) throw std::invalid_argument("rates: epsilon list needs at least 4 values");
  const auto start = std::chrono::steady_clock::now();
  RunReport r = detail::begin("rates", c);
  detail::Artifacts art(opts, r);
  const auto v = detail::rate_values(c, c.cells, opts.threads);
  std::vector<io::MetricRow> rows;
  auto add = [&](const std::string& name, const std::vector<double>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) rows.push_back({c.epsilons[i], name, vals[i]});
    detail::add_study(r, c.epsilons, vals, name);
  };
  auto wants = [&](const char* m) { return std::find(c.rate_metrics.begin(), c.rate_metrics.end(), m) != c.rate_metrics.end(); };
  if (wants("r0")) add("r0", v.r0);
  if (wants("r1")) add("r1", v.r1);
  if (wants("gap")) add("gap", v.gap);

  if (c.uniform_draws > 0) {
    const auto s = detail::make_setup(c, c.cells);
    const auto draws = draw_prior_samples(c.prior, s.grid, static_cast<std::size_t>(c.uniform_draws), c.seed);
    const std::size_t ne = c.epsilons.size();
    std::vector<double> gaps(draws.size() * ne);
    parallel_for(gaps.size(), opts.threads, [&](std::size_t t) {
      const Medium m = medium_from_coefficients(c.prior, draws[t / ne], s.grid);
      gaps[t] = forward_gap(m, c.epsilons[t % ne], s.measurement, s.grid, s.quad, c.solver);
    });
    std::vector<double> sup(ne, 0.0);
    for (std::size_t t = 0; t < gaps.size(); ++t) sup[t % ne] = std::max(sup[t % ne], gaps[t]);
    add("gap_prior_max", sup);
    const double ratio = *std::max_element(sup.begin(), sup.end()) / sup.front();
    r.details["uniform_bound"] = {{"draws", c.uniform_draws}, {"max_over_sweep_over_largest_eps", ratio}};
  }

  art.text("rates.csv", io::metric_csv(rows));
  if (opts.refine) {
    const auto fine = detail::rate_values(c, 2 * c.cells, opts.threads);
    Json guard = Json::object();
    std::vector<io::MetricRow> grows;
    auto cmp = [&](const std::string& name, const std::vector<double>& a, const std::vector<double>& b) {
      double worst = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double shift = std::abs(b[i] - a[i]) / std::max(std::abs(a[i]), 1e-300);
        worst = std::max(worst, shift);
        grows.push_back({c.epsilons[i], name + "_refined", b[i]});
        grows.push_back({c.epsilons[i], name + "_relative_shift", shift});
      }
      guard[name] = {{"max_relative_shift", worst}};
      try {
        guard[name]["refined_slope"] = fit_rate(detail::points(c.epsilons, b), name).slope;
      } catch (const std::invalid_argument&) {
        guard[name]["refined_slope"] = nullptr;
      }
    };
    if (wants("r0")) cmp("r0", v.r0, fine.r0);
    if (wants("r1")) cmp("r1", v.r1, fine.r1);
    if (wants("gap")) cmp("gap", v.gap, fine.gap);
    guard["cells"] = c.cells;
    guard["refined_cells"] = 2 * c.cells;
    r.details["guard"] = guard;
    art.text("guard.csv", io::metric_csv(grows));
    art.json("guard.json", guard);
  }
  Json summary = Json::array();
  for (const auto& s : r.studies) summary.push_back(io::to_json(s));
  for (auto& s : summary) s["fingerprint"] = r.fingerprint;
  art.json("rates_summary.json", {{"fingerprint", r.fingerprint}, {"studies", summary}});
  art.text("rates.svg", io::loglog_svg(r.studies, "residual and forward-gap rates"));
  detail::finish(r, art, c, start);
  return r;
}

inline DataVector make_data(const ExperimentConfig& c) {
  const auto s = detail::make_setup(c, c.cells);
  const InverseProblem p{c.prior, s.measurement, s.grid, s.quad, c.solver};
  return generate_data(p, c.truth, c.data_model, c.data_epsilon, c.noise_std, c.noise_seed);
}

inline RunReport cmd_make_data(const ExperimentConfig& c, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  RunReport r = detail::begin("make-data", c);
  detail::Artifacts art(opts, r);
  const DataVector d = make_data(c);
  r.details["data"] = data_json(d);
  art.json("data.json", data_json(d));
  detail::finish(r, art, c, start);
  return r;
}

inline RunReport cmd_posterior_compare(const ExperimentConfig& c, const RunOptions& opts = {}) {
  if (c.epsilons.size() < 4) throw std::invalid_argument("posterior-compare: epsilon list needs at least 4 values");
  const auto start = std::chrono::steady_clock::now();
  RunReport r = detail::begin("posterior-compare", c);
  detail::Artifacts art(opts, r);
  const auto s = detail::make_setup(c, c.cells);
  const InverseProblem p{c.prior, s.measurement, s.grid, s.quad, c.solver};
  const DataVector data = c.data_file.empty() ? make_data(c) : data_from_json(io::read_json(c.data_file));
  if (data.values.rows() != static_cast<Eigen::Index>(s.measurement.detectors.size()) ||
      data.values.cols() != static_cast<Eigen::Index>(s.measurement.sources.size()))
    throw std::invalid_argument("posterior-compare: data shape does not match the measurement setup");
  art.json("data.json", data_json(data));

  const auto thetas = draw_prior_samples(c.prior, s.grid, static_cast<std::size_t>(c.samples), c.seed);
  const auto ll_de = evaluate_log_likelihoods(Model::de, thetas, data.values, 0.0, p, opts.threads);
  std::vector<io::MetricRow> rows;
  std::vector<double> kl, hel, dz;
  Json ensembles = Json::array();
  Json thetas_json = Json::array();
  for (const auto& t : thetas) thetas_json.push_back(detail::vector_json(t));
  Json bound = Json::array();
  for (double e : c.epsilons) {
    const auto ll_rte = evaluate_log_likelihoods(Model::rte, thetas, data.values, e, p, opts.threads);
    const auto k = estimate_kl(ll_rte, ll_de, c.kl_direction);
    const auto h = estimate_hellinger(ll_rte, ll_de);
    const auto mg = hellinger_kl_margin(ll_rte, ll_de, c.kl_direction);
    const auto ev = estimate_evidences(ll_rte, ll_de);
    for (const auto& w : k.warnings) r.warnings.push_back("eps=" + io::format_number(e) + ": " + w);
    for (const auto& w : h.warnings) r.warnings.push_back("eps=" + io::format_number(e) + ": " + w);
    for (const auto& w : ev.warnings) r.warnings.push_back("eps=" + io::format_number(e) + ": " + w);
    kl.push_back(k.estimate.value);
    hel.push_back(h.estimate.value);
    dz.push_back(std::abs(ev.z_rte.value - ev.z_de.value));
    rows.push_back({e, "kl", k.estimate.value});
    rows.push_back({e, "kl_se", k.estimate.standard_error});
    rows.push_back({e, "hellinger", h.estimate.value});
    rows.push_back({e, "hellinger_se", h.estimate.standard_error});
    rows.push_back({e, "sqrt_kl_minus_hellinger", mg.value});
    rows.push_back({e, "sqrt_kl_minus_hellinger_se", mg.standard_error});
    rows.push_back({e, "evidence_rte", ev.z_rte.value});
    rows.push_back({e, "evidence_de", ev.z_de.value});
    rows.push_back({e, "evidence_gap", dz.back()});
    rows.push_back({e, "ess_rte", ev.ess_rte});
    bound.push_back({{"epsilon", e}, {"margin", mg.value}, {"se", mg.standard_error}, {"holds_within_2se", mg.value >= -2.0 * mg.standard_error}});
    ensembles.push_back({{"epsilon", e}, {"ll_rte", ll_rte}});
  }
  detail::add_study(r, c.epsilons, kl, "kl");
  detail::add_study(r, c.epsilons, hel, "hellinger");
  detail::add_study(r, c.epsilons, dz, "evidence_gap");
  r.details["hellinger_kl_bound"] = bound;
  r.details["kl_direction"] = c.kl_direction == KlDirection::rte_de ? "rte_de" : "de_rte";

  if (c.pcn_steps > 0) {
    // pCN chains for both models at the smallest epsilon, as a cross-check of the IS means
    const double e = c.epsilons.back();
    Json chains = Json::object();
    for (Model model : {Model::de, Model::rte}) {
      auto ll = [&](const CoefficientVector& t) { return log_likelihood(model, t, data.values, e, p); };
      const PcnResult pc = pcn_sampler(c.prior, s.grid, ll, c.pcn_beta, c.pcn_steps, c.seed + 1);
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(c.prior.basis_size);
      for (const auto& t : pc.chain) mean += t;
      mean /= static_cast<double>(pc.chain.size());
      std::string csv = "step,log_likelihood";
      for (int m = 0; m < c.prior.basis_size; ++m) csv += ",theta" + std::to_string(m);
      csv += "\n";
      for (std::size_t t = 0; t < pc.chain.size(); ++t) {
        csv += std::to_string(t) + "," + io::format_number(pc.log_likelihoods[t]);
        for (int m = 0; m < c.prior.basis_size; ++m) csv += "," + io::format_number(pc.chain[t][m]);
        csv += "\n";
      }
      art.text("pcn_" + to_string(model) + ".csv", csv);
      for (const auto& w : pc.warnings) r.warnings.push_back(to_string(model) + ": " + w);
      chains[to_string(model)] = {{"acceptance_rate", pc.acceptance_rate}, {"mean", detail::vector_json(mean)}};
    }
    r.details["pcn"] = chains;
  }
  art.text("divergences.csv", io::metric_csv(rows));
  art.json("ensemble.json", {{"seed", c.seed}, {"mode", "prior-IS"}, {"thetas", thetas_json}, {"ll_de", ll_de}, {"rte", ensembles}});
  Json summary = Json::array();
  for (auto s2 : r.studies) {
    s2.fingerprint = r.fingerprint;
    summary.push_back(io::to_json(s2));
  }
  art.json("divergences_summary.json", {{"fingerprint", r.fingerprint}, {"studies", summary}});
  art.text("divergences.svg", io::loglog_svg(r.studies, "posterior divergences"));
  detail::finish(r, art, c, start);
  return r;
}

inline RunReport cmd_linearized_compare(const ExperimentConfig& c, const RunOptions& opts = {}) {
  if (c.epsilons.size() < 4) throw std::invalid_argument("linearized-compare: epsilon list needs at least 4 values");
  const auto start = std::chrono::steady_clock::now();
  RunReport r = detail::begin("linearized-compare", c);
  detail::Artifacts art(opts, r);
  const auto s = detail::make_setup(c, c.cells);
  const Medium u0 = medium_from_coefficients(c.prior, c.background, s.grid);
  if (!u0.admissible) throw std::invalid_argument("config.linearized.background: not admissible");
  AdjointOptions adj{s.mollifier, c.adjoint_lift_order};

  // observed data: diffusion model at u0 + w plus noise
  const CoefficientVector w_true = c.background + c.perturbation;
  const Medium truth = medium_from_coefficients(c.prior, w_true, s.grid);
  Eigen::MatrixXd y = forward_map_de(truth, s.measurement, s.grid).values;
  y += noise_realization(c.noise_seed, c.noise_std, y.rows(), y.cols());

  const Eigen::MatrixXd prior_cov = linearized_prior_covariance(c.prior);
  const Eigen::VectorXd prior_mean = Eigen::VectorXd::Zero(c.prior.basis_size);
  const KernelBank de_bank = kernel_bank_de(u0, s.measurement, s.grid, adj);
  const Eigen::MatrixXd g_de = linear_map(de_bank, c.prior, s.grid);
  const ForwardData bg_de = forward_map_de(u0, s.measurement, s.grid);
  const GaussianPosterior post_de = gaussian_update(g_de, prior_cov, prior_mean, c.noise_std, linearized_data(y, bg_de));
  art.json("kernels_de.json", kernel_bank_json(de_bank, s.grid));
  Json posteriors = {{"DE", posterior_json(post_de)}, {"RTE", Json::array()}};

  const std::size_t n = c.epsilons.size();
  std::vector<KernelBank> banks(n);
  std::vector<ForwardData> bg_rte(n);
  parallel_for(n, opts.threads, [&](std::size_t i) {
    banks[i] = kernel_bank_rte(u0, c.epsilons[i], s.measurement, s.grid, s.quad, adj, c.solver);
    bg_rte[i] = forward_map_rte(u0, c.epsilons[i], s.measurement, 1, s.grid, s.quad, c.solver);
  });

  std::vector<double> kernel_gap, map_gap, hell, mean_gap, cov_gap, bg_gap;
  std::vector<io::MetricRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = c.epsilons[i];
    double kg = 0.0;
    for (std::size_t q = 0; q < banks[i].kernels.size(); ++q) kg = std::max(kg, max_abs(banks[i].kernels[q] - de_bank.kernels[q]));
    const Eigen::MatrixXd g_rte = linear_map(banks[i], c.prior, s.grid);
    const double mg = Eigen::JacobiSVD<Eigen::MatrixXd>(g_rte - g_de).singularValues()[0];
    const GaussianPosterior post = gaussian_update(g_rte, prior_cov, prior_mean, c.noise_std, linearized_data(y, bg_rte[i]));
    const MomentGap mom = moment_distance(post, post_de);
    const double hd = gaussian_hellinger(post, post_de);
    kernel_gap.push_back(kg);
    map_gap.push_back(mg);
    hell.push_back(hd);
    mean_gap.push_back(mom.mean);
    cov_gap.push_back(mom.covariance);
    bg_gap.push_back((bg_rte[i].values - bg_de.values).cwiseAbs().maxCoeff());
    rows.push_back({e, "kernel_gap", kg});
    rows.push_back({e, "map_gap", mg});
    rows.push_back({e, "gaussian_hellinger", hd});
    rows.push_back({e, "mean_gap", mom.mean});
    rows.push_back({e, "covariance_gap", mom.covariance});
    rows.push_back({e, "background_gap", bg_gap.back()});
    Json pj = posterior_json(post);
    pj["epsilon"] = e;
    posteriors["RTE"].push_back(pj);
    art.json("kernels_rte_" + std::to_string(i) + ".json", kernel_bank_json(banks[i], s.grid));
  }
  for (const auto& [name, vals] : std::vector<std::pair<std::string, std::vector<double>>>{
           {"kernel_gap", kernel_gap}, {"map_gap", map_gap}, {"gaussian_hellinger", hell},
           {"mean_gap", mean_gap}, {"covariance_gap", cov_gap}})
    detail::add_study(r, c.epsilons, vals, name);

  if (c.tangent_amplitude > 0.0) {
    // |G w - (G(u0 + w) - G(u0))| for the diffusion map and the transport map at the smallest eps
    const CoefficientVector w = CoefficientVector::Constant(c.prior.basis_size, c.tangent_amplitude);
    const Medium pert = medium_from_coefficients(c.prior, c.background + w, s.grid);
    const double e = c.epsilons.back();
    const Eigen::VectorXd lin_de = g_de * w;
    const Eigen::VectorXd lin_rte = linear_map(banks.back(), c.prior, s.grid) * w;
    const Eigen::VectorXd fd_de = flatten(forward_map_de(pert, s.measurement, s.grid).values - bg_de.values);
    const Eigen::VectorXd fd_rte =
        flatten(forward_map_rte(pert, e, s.measurement, 1, s.grid, s.quad, c.solver).values - bg_rte.back().values);
    r.details["tangent"] = {{"amplitude", c.tangent_amplitude},
                            {"residual_de", (lin_de - fd_de).cwiseAbs().maxCoeff()},
                            {"residual_rte", (lin_rte - fd_rte).cwiseAbs().maxCoeff()},
                            {"epsilon", e}};
  }
  art.text("linearized.csv", io::metric_csv(rows));
  art.json("posteriors.json", posteriors);
  Json summary = Json::array();
  for (auto s2 : r.studies) {
    s2.fingerprint = r.fingerprint;
    summary.push_back(io::to_json(s2));
  }
  art.json("linearized_summary.json", {{"fingerprint", r.fingerprint}, {"studies", summary}});
  art.text("linearized.svg", io::loglog_svg(r.studies, "linearised posterior gaps"));
  detail::finish(r, art, c, start);
  return r;
}

inline RunReport run_command(const std::string& command, const ExperimentConfig& c, const RunOptions& opts) {
  if (command == "forward") return cmd_forward(c, opts);
  if (command == "rates") return cmd_rates(c, opts);
  if (command == "posterior-compare") return cmd_posterior_compare(c, opts);
  if (command == "linearized-compare") return cmd_linearized_compare(c, opts);
  if (command == "make-data") return cmd_make_data(c, opts);
  throw std::invalid_argument("unknown command '" + command + "'");
}

}  // namespace optomo
