#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sketchgrad/common.hpp"
#include "sketchgrad/config.hpp"
#include "sketchgrad/optimizer.hpp"
#include "sketchgrad/trace_io.hpp"

namespace sketchgrad {

// ---------------------------------------------------------------------------
// [problem] section -> Problem

inline Problem build_problem(const ConfigSection& s) {
  std::string kind = s.require_str("kind");
  if (kind == "regularized-linreg") {
    LinRegConfig cfg;
    cfg.samples = static_cast<int>(s.get_int("samples", 0));
    cfg.param_rows = static_cast<Index>(s.get_int("rows", 0));
    cfg.param_cols = static_cast<Index>(s.get_int("cols", 0));
    cfg.noise = s.get_num("noise", 0.0);
    cfg.bias = s.get_num("bias", 0.0);
    cfg.tail_strength = s.get_num("tail_strength", 0.1);
    cfg.effective_rank = static_cast<int>(s.get_int("effective_rank", 1));
    cfg.seed = static_cast<std::uint64_t>(s.get_int("seed", 0));
    std::string reg = s.get_str("reg_weight", "0");
    if (reg == "spectral")
      cfg.reg_weight_spectral = true;
    else
      cfg.reg_weight = s.require_num("reg_weight");
    return make_linreg(cfg);
  }
  if (kind == "quadratic-pl") {
    QuadraticPlConfig cfg;
    cfg.param_rows = static_cast<Index>(s.get_int("rows", 0));
    cfg.param_cols = static_cast<Index>(s.get_int("cols", 0));
    cfg.mu = s.get_num("mu", 1.0);
    cfg.l_max = s.get_num("l_max", 1.0);
    cfg.rotate = s.get_int("rotate", 1) != 0;
    cfg.planted_scale = s.get_num("planted_scale", 1.0);
    cfg.seed = static_cast<std::uint64_t>(s.get_int("seed", 0));
    return make_quadratic_pl(cfg);
  }
  if (kind == "nonsmooth-l1") {
    L1Config cfg;
    cfg.samples = static_cast<int>(s.get_int("samples", 0));
    cfg.param_rows = static_cast<Index>(s.get_int("rows", 0));
    cfg.param_cols = static_cast<Index>(s.get_int("cols", 0));
    cfg.planted_scale = s.get_num("planted_scale", 1.0);
    cfg.seed = static_cast<std::uint64_t>(s.get_int("seed", 0));
    return make_nonsmooth_l1(cfg);
  }
  throw ConfigError("config section [problem] (line " + std::to_string(s.line) +
                    "): unknown kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// [method] section

struct MethodConfig {
  std::string name;
  bool federated = false;
  EstimatorKind estimator = EstimatorKind::Gd;
  FederatedKind fed_kind = FederatedKind::FedGd;
  double p = 0.5;
  SketchDist left_dist = SketchDist::GaussianIid;
  SketchDist right_dist = SketchDist::GaussianIid;
  int rank_left = 1;
  int rank_right = 1;
  StepsizePolicy stepsize;
  int t_steps = 100;
  EstimatorParams eparams;
  int clients = 1;
  Compressor compressor = identity_compressor();
  double marina_q = 1.0;
  PartitionScheme partition = PartitionScheme::Random;
  ReportRule report = ReportRule::Uniform;
  std::string w0_kind = "zeros";
  double w0_scale = 1.0;
};

namespace detail {

inline SketchDist parse_dist(const std::string& v, int line) {
  if (v == "gaussian") return SketchDist::GaussianIid;
  if (v == "coordinate") return SketchDist::CoordinateSubset;
  throw ConfigError("config line " + std::to_string(line) + ": unknown sketch distribution '" +
                    v + "'");
}

inline Theorem parse_theorem(const std::string& v, int line) {
  static const std::map<std::string, Theorem> table = {
      {"gd", Theorem::GdSmooth},     {"gd-pl", Theorem::GdPl},
      {"sgd", Theorem::Sgd},         {"sgd-pl", Theorem::SgdPl},
      {"mvr", Theorem::Mvr},         {"mvr-pl", Theorem::MvrPl},
      {"page", Theorem::Page},       {"page-pl", Theorem::PagePl},
      {"qgd", Theorem::Qgd},         {"qgd-pl", Theorem::QgdPl},
      {"marina", Theorem::Marina},   {"marina-pl", Theorem::MarinaPl},
      {"ef21", Theorem::Ef21},       {"ef21-pl", Theorem::Ef21Pl},
      {"nonsmooth-const", Theorem::NonsmoothConstant},
  };
  auto it = table.find(v);
  if (it == table.end())
    throw ConfigError("config line " + std::to_string(line) + ": unknown theorem '" + v + "'");
  return it->second;
}

inline std::string sanitize_name(const std::string& name) {
  std::string out;
  for (char c : name)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')
               ? c
               : '-';
  return out;
}

}  // namespace detail

inline MethodConfig parse_method(const ConfigSection& s) {
  MethodConfig m;
  m.name = detail::sanitize_name(s.get_str("name", "method"));
  std::string est = s.require_str("estimator");
  if (est == "gd") m.estimator = EstimatorKind::Gd;
  else if (est == "sgd") m.estimator = EstimatorKind::Sgd;
  else if (est == "mvr") m.estimator = EstimatorKind::Mvr;
  else if (est == "page") m.estimator = EstimatorKind::Page;
  else if (est == "fed-gd") { m.federated = true; m.fed_kind = FederatedKind::FedGd; }
  else if (est == "qgd") { m.federated = true; m.fed_kind = FederatedKind::Qgd; }
  else if (est == "marina") { m.federated = true; m.fed_kind = FederatedKind::Marina; }
  else if (est == "ef21") { m.federated = true; m.fed_kind = FederatedKind::Ef21; }
  else
    throw ConfigError("config section [method] (line " + std::to_string(s.line) +
                      "): unknown estimator '" + est + "'");

  m.p = s.get_num("p", 0.5);
  int rank = static_cast<int>(s.get_int("rank", 1));
  m.rank_left = static_cast<int>(s.get_int("rank_left", rank));
  m.rank_right = static_cast<int>(s.get_int("rank_right", rank));
  m.left_dist = detail::parse_dist(s.get_str("left_dist", "gaussian"), s.line);
  m.right_dist = detail::parse_dist(s.get_str("right_dist", "gaussian"), s.line);
  m.t_steps = static_cast<int>(s.get_int("T", 100));

  std::string policy = s.get_str("stepsize", "theorem");
  if (policy == "constant") {
    m.stepsize.kind = StepsizePolicyKind::Constant;
    m.stepsize.value = s.require_num("gamma");
  } else if (policy == "over-l") {
    m.stepsize.kind = StepsizePolicyKind::OverL;
    m.stepsize.value = s.get_num("c", 1.0);
  } else if (policy == "theorem") {
    m.stepsize.kind = StepsizePolicyKind::FromTheorem;
    m.stepsize.value = s.get_num("c", 1.0);
    m.stepsize.theorem = detail::parse_theorem(s.get_str("theorem", est), s.line);
  } else if (policy == "polyak") {
    m.stepsize.kind = StepsizePolicyKind::Polyak;
  } else {
    throw ConfigError("config section [method] (line " + std::to_string(s.line) +
                      "): unknown stepsize policy '" + policy + "'");
  }

  m.eparams.batch = static_cast<int>(s.get_int("batch", 1));
  m.eparams.momentum_b = s.get_num("b", 0.5);
  m.eparams.full_prob_q = s.get_num("q", 0.5);
  m.marina_q = s.get_num("q", 1.0);
  m.clients = static_cast<int>(s.get_int("clients", 1));

  std::string comp = s.get_str("compressor", "identity");
  if (comp == "identity") m.compressor = identity_compressor();
  else if (comp == "rand-k") m.compressor = rand_k_compressor(static_cast<int>(s.get_int("k", 1)));
  else if (comp == "top-k") m.compressor = top_k_compressor(static_cast<int>(s.get_int("k", 1)));
  else if (comp == "dither")
    m.compressor = dither_compressor(static_cast<int>(s.get_int("levels", 1)));
  else
    throw ConfigError("config section [method] (line " + std::to_string(s.line) +
                      "): unknown compressor '" + comp + "'");
  if (s.get_int("scale_contractive", 0) != 0) m.compressor = scaled_to_contractive(m.compressor);

  std::string part = s.get_str("partition", "random");
  if (part == "random") m.partition = PartitionScheme::Random;
  else if (part == "sorted") m.partition = PartitionScheme::SortedByTarget;
  else if (part == "contiguous") m.partition = PartitionScheme::Contiguous;
  else
    throw ConfigError("config section [method] (line " + std::to_string(s.line) +
                      "): unknown partition scheme '" + part + "'");

  std::string rep = s.get_str("report", "uniform");
  if (rep == "uniform") m.report = ReportRule::Uniform;
  else if (rep == "weighted") m.report = ReportRule::Weighted;
  else
    throw ConfigError("config section [method] (line " + std::to_string(s.line) +
                      "): unknown report rule '" + rep + "'");

  m.w0_kind = s.get_str("w0", "zeros");
  m.w0_scale = s.get_num("w0_scale", 1.0);
  if (m.w0_kind != "zeros" && m.w0_kind != "gaussian")
    throw ConfigError("config section [method] (line " + std::to_string(s.line) +
                      "): unknown w0 '" + m.w0_kind + "'");
  return m;
}

// ---------------------------------------------------------------------------
// Whole experiment

struct ExperimentSpec {
  Problem problem;
  std::vector<MethodConfig> methods;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  double stop_grad_sq = 0.0;
  int jobs = 1;
};

inline ExperimentSpec parse_experiment(const ConfigFile& cfg) {
  ExperimentSpec spec;
  const ConfigSection* prob = cfg.first("problem");
  if (!prob) throw ConfigError("config: missing [problem] section");
  spec.problem = build_problem(*prob);

  auto methods = cfg.all("method");
  if (methods.empty()) throw ConfigError("config: needs at least one [method] section");
  for (const ConfigSection* m : methods) spec.methods.push_back(parse_method(*m));

  const ConfigSection* run = cfg.first("run");
  if (!run) throw ConfigError("config: missing [run] section");
  const ConfigEntry* seeds = run->find("seeds");
  if (!seeds)
    throw ConfigError("config section [run] (line " + std::to_string(run->line) +
                      "): missing required field 'seeds'");
  spec.seeds = parse_seed_list(seeds->value, seeds->line);
  spec.out_dir = run->get_str("out", "");
  spec.stop_grad_sq = run->get_num("stop_grad_sq", 0.0);
  spec.jobs = static_cast<int>(run->get_int("jobs", 1));
  require(spec.jobs >= 1, "config: jobs must be positive");
  return spec;
}

inline Matrix method_w0(const MethodConfig& m, const Problem& problem) {
  if (m.w0_kind == "zeros") return Matrix::Zero(problem.param_rows, problem.param_cols);
  // shared across seeds and methods: derived from the problem seed
  RngStream rng = RngBundle(problem.seed).make_stream("w0");
  Matrix w(problem.param_rows, problem.param_cols);
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 0; j < w.cols(); ++j) w(i, j) = m.w0_scale * rng.normal();
  return w;
}

inline DriverConfig method_driver_config(const MethodConfig& m, const Problem& problem,
                                         std::uint64_t seed, double stop_grad_sq) {
  DriverConfig d;
  d.p = m.p;
  d.t_steps = m.t_steps;
  d.stepsize = m.stepsize;
  if (m.p > 0.0)
    d.left = SketchSpec{SketchSide::Left, m.left_dist, m.rank_left, problem.param_rows};
  if (m.p < 1.0)
    d.right = SketchSpec{SketchSide::Right, m.right_dist, m.rank_right, problem.param_cols};
  d.estimator = m.federated ? EstimatorKind::Gd : m.estimator;
  d.eparams = m.eparams;
  d.seed = seed;
  d.report = m.report;
  d.stop_grad_sq = stop_grad_sq;
  d.w0 = method_w0(m, problem);
  return d;
}

// Clients are partitioned once per method from the problem seed, so every
// seed of a method optimizes the same federated objective.
inline std::vector<Problem> method_clients(const MethodConfig& m, const Problem& problem) {
  RngStream rng = RngBundle(problem.seed).make_stream("partition");
  bool optima = m.fed_kind == FederatedKind::Qgd;  // Delta* is only used by the QGD bound
  return partition(problem, m.clients, rng, m.partition, optima);
}

inline FederatedState method_federated_state(const MethodConfig& m,
                                             const std::vector<Problem>& clients,
                                             const Matrix& w0, std::uint64_t seed) {
  return init_federated(m.fed_kind, clients, m.compressor, w0, RngBundle(seed), m.marina_q);
}

struct MethodArtifacts {
  std::string base;  // out_dir/name
  double gamma = 0.0;
  double bound = std::numeric_limits<double>::quiet_NaN();
  double observed_avg_grad_sq = 0.0;
  TheoryParams theory;
};

inline MethodArtifacts run_method(const MethodConfig& m, const Problem& problem,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::string& out_dir, double stop_grad_sq, int jobs) {
  namespace fs = std::filesystem;
  MethodArtifacts art;
  art.base = (fs::path(out_dir) / m.name).string();

  std::vector<Problem> clients;
  if (m.federated) clients = method_clients(m, problem);

  std::vector<RunTrace> traces(seeds.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_msg;
  std::mutex error_mutex;

  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= seeds.size() || failed.load()) break;
      try {
        DriverConfig d = method_driver_config(m, problem, seeds[i], stop_grad_sq);
        if (m.federated) {
          FederatedState fed = method_federated_state(m, clients, d.w0, seeds[i]);
          traces[i] = run_chain(d, problem, &fed);
        } else {
          traces[i] = run_chain(d, problem);
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        error_msg = e.what();
        failed.store(true);
        break;
      }
    }
  };
  int n_workers = std::min<int>(jobs, static_cast<int>(seeds.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failed.load()) throw Error("method '" + m.name + "': " + error_msg);

  std::vector<LoadedTrace> loaded;
  double sum_grad = 0.0;
  long long count_grad = 0;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    write_trace_csv(art.base + "_seed" + std::to_string(seeds[i]) + ".csv", traces[i]);
    LoadedTrace lt;
    lt.rows = traces[i].rows;
    loaded.push_back(std::move(lt));
    for (const TraceRow& r : traces[i].rows) {
      sum_grad += r.grad_sq_norm;
      ++count_grad;
    }
  }
  art.observed_avg_grad_sq = count_grad ? sum_grad / count_grad : 0.0;

  write_rows_csv(art.base + "_median.csv", aggregate_traces(loaded, 0.5));
  write_rows_csv(art.base + "_p25.csv", aggregate_traces(loaded, 0.25));
  write_rows_csv(art.base + "_p75.csv", aggregate_traces(loaded, 0.75));

  // theory constants and the method's rate bound; gamma from the first trace
  art.gamma = traces.empty() ? 0.0 : traces[0].gamma;
  DriverConfig d0 = method_driver_config(m, problem, seeds[0], stop_grad_sq);
  DeriveContext dctx;
  dctx.w0 = d0.w0;
  dctx.p = m.p;
  dctx.left = d0.left;
  dctx.right = d0.right;
  dctx.estimator = d0.estimator;
  dctx.eparams = d0.eparams;
  dctx.t_horizon = m.t_steps;
  if (m.federated) {
    FederatedState fed = method_federated_state(m, clients, d0.w0, seeds[0]);
    art.theory = derive_constants(problem, dctx, &fed);
    art.bound = nc_rate_bound(art.theory, d0.estimator, &fed, art.gamma, m.t_steps);
  } else if (problem.is_smooth()) {
    art.theory = derive_constants(problem, dctx, nullptr);
    art.bound = nc_rate_bound(art.theory, d0.estimator, nullptr, art.gamma, m.t_steps);
  } else {
    art.theory = derive_constants(problem, dctx, nullptr);
  }

  std::ofstream meta(art.base + "_meta.txt", std::ios::binary);
  meta << "name = " << m.name << "\n";
  meta << "gamma = " << format_double(art.gamma) << "\n";
  meta << "T = " << m.t_steps << "\n";
  meta << "lambda_min_p = " << format_double(art.theory.lambda_min_p) << "\n";
  meta << "lambda_max_p = " << format_double(art.theory.lambda_max_p) << "\n";
  meta << "delta0 = "
       << format_double(art.theory.delta0.value.value_or(
              std::numeric_limits<double>::quiet_NaN()))
       << "\n";
  meta << "nc_bound = " << format_double(art.bound) << "\n";
  meta << "observed_avg_grad_sq = " << format_double(art.observed_avg_grad_sq) << "\n";
  return art;
}

// ---------------------------------------------------------------------------
// Summaries

struct SummaryRow {
  std::string method;
  long long iters_to_threshold = -1;
  double plateau_grad_sq = std::numeric_limits<double>::quiet_NaN();
  double total_comm = 0.0;
  double bound = std::numeric_limits<double>::quiet_NaN();
  double observed_avg_grad_sq = std::numeric_limits<double>::quiet_NaN();
  int bound_ok = -1;  // 1 yes, 0 no, -1 unknown
};

inline std::string summary_to_text(const std::vector<SummaryRow>& rows, double threshold) {
  std::ostringstream out;
  out << "threshold_grad_sq = " << format_double(threshold) << "\n";
  out << "method,iters_to_threshold,plateau_grad_sq,total_comm_scalars,nc_bound,"
         "observed_avg_grad_sq,bound_ok\n";
  for (const SummaryRow& r : rows) {
    out << r.method << ',';
    if (r.iters_to_threshold >= 0) out << r.iters_to_threshold;
    else out << '-';
    out << ',' << format_double(r.plateau_grad_sq) << ',' << format_double(r.total_comm) << ','
        << format_double(r.bound) << ',' << format_double(r.observed_avg_grad_sq) << ',';
    if (r.bound_ok < 0) out << '-';
    else out << r.bound_ok;
    out << "\n";
  }
  return out.str();
}

inline std::vector<SummaryRow> summarize(const std::string& dir, double threshold) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir)) throw InputError("summarize: directory does not exist: " + dir);
  std::vector<std::string> medians;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.size() > 11 && name.substr(name.size() - 11) == "_median.csv")
      medians.push_back(entry.path().string());
  }
  std::sort(medians.begin(), medians.end());

  std::vector<SummaryRow> rows;
  for (const std::string& path : medians) {
    SummaryRow row;
    std::string base = path.substr(0, path.size() - 11);
    row.method = fs::path(base).filename().string();
    LoadedTrace med = read_trace_csv(path);
    for (const TraceRow& r : med.rows) {
      if (r.grad_sq_norm <= threshold) {
        row.iters_to_threshold = r.iter;
        break;
      }
    }
    if (!med.rows.empty()) {
      std::size_t tail = std::max<std::size_t>(1, med.rows.size() / 10);
      std::vector<double> last;
      for (std::size_t i = med.rows.size() - tail; i < med.rows.size(); ++i)
        last.push_back(med.rows[i].grad_sq_norm);
      row.plateau_grad_sq = detail::percentile_sorted(last, 0.5);
      row.total_comm = med.rows.back().comm_scalars;
    }
    // optional meta with the theorem bound
    std::ifstream meta(base + "_meta.txt");
    if (meta) {
      std::string line;
      while (std::getline(meta, line)) {
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = detail::strip(line.substr(0, eq));
        std::string val = detail::strip(line.substr(eq + 1));
        if (key == "nc_bound") row.bound = std::strtod(val.c_str(), nullptr);
        if (key == "observed_avg_grad_sq")
          row.observed_avg_grad_sq = std::strtod(val.c_str(), nullptr);
      }
      if (std::isfinite(row.bound) && std::isfinite(row.observed_avg_grad_sq))
        row.bound_ok = row.observed_avg_grad_sq <= row.bound ? 1 : 0;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int run_experiment(const ExperimentSpec& spec, std::ostream& log) {
  namespace fs = std::filesystem;
  require(!spec.out_dir.empty(), "config: field 'out' (output directory) is required");
  fs::create_directories(spec.out_dir);

  for (const MethodConfig& m : spec.methods) {
    MethodArtifacts art =
        run_method(m, spec.problem, spec.seeds, spec.out_dir, spec.stop_grad_sq, spec.jobs);
    log << "method " << m.name << ": gamma = " << format_double(art.gamma)
        << ", observed avg ||grad||^2 = " << format_double(art.observed_avg_grad_sq)
        << ", nc bound = " << format_double(art.bound) << "\n";
  }

  double threshold = spec.stop_grad_sq > 0.0 ? spec.stop_grad_sq : 1e-10;
  std::vector<SummaryRow> rows = summarize(spec.out_dir, threshold);
  std::ofstream sf(fs::path(spec.out_dir) / "summary.txt", std::ios::binary);
  sf << summary_to_text(rows, threshold);
  log << "wrote " << (fs::path(spec.out_dir) / "summary.txt").string() << "\n";
  return 0;
}

}  // namespace sketchgrad
