// Experiment harness for randomized low-rank projected-update optimizers.
// Subcommands: run, summarize, check-assumptions, stepsize.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sketchgrad/experiment.hpp"
#include "sketchgrad/theory.hpp"

namespace sg = sketchgrad;

namespace {

std::string resolve_out_dir(const std::string& flag_value, const std::string& config_value) {
  if (!flag_value.empty()) return flag_value;
  if (!config_value.empty()) return config_value;
  if (const char* env = std::getenv("SKETCHGRAD_OUT_ROOT")) return std::string(env) + "/run";
  return "";
}

int cmd_run(const std::string& config_path, const std::string& seeds_flag,
            const std::string& out_flag, int jobs_flag, double stop_flag) {
  sg::ConfigFile cfg = sg::parse_config_file(config_path);
  sg::ExperimentSpec spec = sg::parse_experiment(cfg);
  if (!seeds_flag.empty()) spec.seeds = sg::parse_seed_list(seeds_flag, 0);
  spec.out_dir = resolve_out_dir(out_flag, spec.out_dir);
  if (jobs_flag > 0) spec.jobs = jobs_flag;
  if (stop_flag >= 0.0) spec.stop_grad_sq = stop_flag;
  return sg::run_experiment(spec, std::cout);
}

int cmd_summarize(const std::string& dir, double threshold) {
  std::vector<sg::SummaryRow> rows = sg::summarize(dir, threshold);
  if (rows.empty()) std::cerr << "warning: no aggregated traces found in " << dir << "\n";
  std::cout << sg::summary_to_text(rows, threshold);
  return 0;
}

int cmd_check_assumptions(const std::string& config_path, int probes) {
  sg::ConfigFile cfg = sg::parse_config_file(config_path);
  sg::ExperimentSpec spec = sg::parse_experiment(cfg);
  const sg::Problem& problem = spec.problem;
  const sg::MethodConfig& m = spec.methods.front();

  sg::DriverConfig d = sg::method_driver_config(m, problem, spec.seeds.front(), 0.0);
  sg::DeriveContext ctx;
  ctx.w0 = d.w0;
  ctx.p = m.p;
  ctx.left = d.left;
  ctx.right = d.right;
  ctx.estimator = d.estimator;
  ctx.eparams = d.eparams;
  ctx.t_horizon = m.t_steps;

  sg::TheoryParams tp;
  if (m.federated) {
    std::vector<sg::Problem> clients = sg::method_clients(m, problem);
    sg::FederatedState fed = sg::method_federated_state(m, clients, d.w0, spec.seeds.front());
    tp = sg::derive_constants(problem, ctx, &fed);
  } else {
    tp = sg::derive_constants(problem, ctx, nullptr);
  }

  sg::RngStream rng = sg::RngBundle(spec.seeds.front()).make_stream("assumption-probes");
  const sg::AssumptionName checks[] = {
      sg::AssumptionName::PositiveExpectedProjection, sg::AssumptionName::LowerBounded,
      sg::AssumptionName::LipschitzSmooth,            sg::AssumptionName::ExpectedSmoothness,
      sg::AssumptionName::BoundedVariance,            sg::AssumptionName::PlCondition,
      sg::AssumptionName::ExistenceOfMinimizer,       sg::AssumptionName::FunctionDissimilarity,
      sg::AssumptionName::ScalingExpectedProjection,
  };
  std::cout << "assumption,status,worst_ratio,detail\n";
  for (sg::AssumptionName name : checks) {
    sg::AssumptionReport rep = sg::check_assumption(name, problem, tp, probes, rng);
    std::cout << sg::assumption_label(name) << ','
              << (rep.pass ? "pass" : (rep.detail.find("unavailable") != std::string::npos ||
                                               rep.worst_ratio == 0.0
                                           ? "skipped"
                                           : "FAIL"))
              << ',' << sg::format_double(rep.worst_ratio) << ',' << rep.detail << "\n";
  }
  return 0;
}

int cmd_stepsize(const std::string& theorem, const std::vector<std::string>& kv) {
  static const std::map<std::string, sg::Theorem> table = {
      {"gd", sg::Theorem::GdSmooth},   {"gd-pl", sg::Theorem::GdPl},
      {"sgd", sg::Theorem::Sgd},       {"sgd-pl", sg::Theorem::SgdPl},
      {"mvr", sg::Theorem::Mvr},       {"mvr-pl", sg::Theorem::MvrPl},
      {"page", sg::Theorem::Page},     {"page-pl", sg::Theorem::PagePl},
      {"qgd", sg::Theorem::Qgd},       {"qgd-pl", sg::Theorem::QgdPl},
      {"marina", sg::Theorem::Marina}, {"marina-pl", sg::Theorem::MarinaPl},
      {"ef21", sg::Theorem::Ef21},     {"ef21-pl", sg::Theorem::Ef21Pl},
      {"nonsmooth-const", sg::Theorem::NonsmoothConstant},
  };
  auto it = table.find(theorem);
  if (it == table.end()) throw sg::ConfigError("unknown theorem '" + theorem + "'");

  sg::TheoryParams tp;
  tp.lambda_min_p = 1.0;
  tp.lambda_max_p = 1.0;
  for (const std::string& pair : kv) {
    std::size_t eq = pair.find('=');
    if (eq == std::string::npos)
      throw sg::ConfigError("stepsize parameters must look like key=value, got '" + pair + "'");
    std::string key = pair.substr(0, eq);
    double val = std::strtod(pair.c_str() + eq + 1, nullptr);
    if (key == "L") tp.l = sg::TheoryField::analytic(val);
    else if (key == "mu") tp.mu = sg::TheoryField::analytic(val);
    else if (key == "A1") tp.a1 = sg::TheoryField::analytic(val);
    else if (key == "B1") tp.b1 = sg::TheoryField::analytic(val);
    else if (key == "C1") tp.c1 = sg::TheoryField::analytic(val);
    else if (key == "omega") tp.omega = sg::TheoryField::analytic(val);
    else if (key == "beta") tp.beta = sg::TheoryField::analytic(val);
    else if (key == "q") tp.q = sg::TheoryField::analytic(val);
    else if (key == "b") tp.b = sg::TheoryField::analytic(val);
    else if (key == "L0") tp.l0 = sg::TheoryField::analytic(val);
    else if (key == "alpha") tp.alpha_scale = sg::TheoryField::analytic(val);
    else if (key == "R0") tp.r0 = sg::TheoryField::analytic(val);
    else if (key == "lambda_min_p") tp.lambda_min_p = val;
    else if (key == "lambda_max_p") tp.lambda_max_p = val;
    else if (key == "T") tp.t_horizon = static_cast<int>(val);
    else if (key == "M") tp.clients = static_cast<int>(val);
    else throw sg::ConfigError("unknown stepsize parameter '" + key + "'");
  }
  std::cout << sg::format_double(sg::theoretical_stepsize(it->second, tp)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"randomized low-rank projected-update optimization harness"};
  app.require_subcommand(1);

  std::string config_path, seeds_flag, out_flag, dir;
  int jobs_flag = 0, probes = 50;
  double stop_flag = -1.0, threshold = 1e-10;
  std::string theorem;
  std::vector<std::string> kv;

  CLI::App* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "experiment config file")->required();
  run->add_option("--seeds", seeds_flag, "comma-separated seed list (overrides config)");
  run->add_option("--out", out_flag, "output directory (overrides config)");
  run->add_option("--jobs", jobs_flag, "concurrent seed jobs");
  run->add_option("--stop-grad-sq", stop_flag, "stop when ||grad f||^2 falls below this");

  CLI::App* summ = app.add_subcommand("summarize", "summarize a run directory");
  summ->add_option("dir", dir, "run directory")->required();
  summ->add_option("--stop-grad-sq", threshold, "threshold for iterations-to-threshold");

  CLI::App* chk = app.add_subcommand("check-assumptions", "probe assumption reports");
  chk->add_option("config", config_path, "experiment config file")->required();
  chk->add_option("--probes", probes, "probe count");

  CLI::App* step = app.add_subcommand("stepsize", "print a theorem stepsize");
  step->add_option("theorem", theorem, "theorem name (gd, sgd, mvr, page, qgd, ...)")
      ->required();
  step->add_option("params", kv, "constants as key=value (L=, q=, lambda_max_p=, ...)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seeds_flag, out_flag, jobs_flag, stop_flag);
    if (summ->parsed()) return cmd_summarize(dir, threshold);
    if (chk->parsed()) return cmd_check_assumptions(config_path, probes);
    if (step->parsed()) return cmd_stepsize(theorem, kv);
  } catch (const sg::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
