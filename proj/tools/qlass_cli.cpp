// qlass command-line front end. Every verb reads a config file (optional),
// applies QLASS_* environment overrides, then --set/--seed/--budget flags.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qlass/io.hpp"
#include "qlass/pipeline.hpp"

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> budget;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "config file (dotted key = value)");
  cmd->add_option("--seed", c.seed, "run a single seed instead of run.seeds");
  cmd->add_option("--budget", c.budget, "policy-sample cap per task (search.budget / curve.budgets)");
  cmd->add_option("--set", c.sets, "override a key, e.g. --set tree.max_depth=6");
}

qlass::ExperimentConfig resolve(const Common& c, bool budget_is_curve = false) {
  qlass::ExperimentConfig cfg = c.config_path.empty() ? qlass::ExperimentConfig{}
                                                      : qlass::ExperimentConfig::load(c.config_path);
  cfg.apply_process_env();
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw qlass::ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.seeds = {*c.seed};
  if (c.budget) {
    if (budget_is_curve)
      cfg.curve_budgets = {*c.budget};
    else
      cfg.search_budget = *c.budget;
  }
  cfg.validate();
  return cfg;
}

void print_metrics(const std::vector<qlass::MetricsRow>& rows) { std::cout << qlass::metrics_to_csv(rows); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qlass: behavior cloning, exploration trees, Q-value extraction and Q-guided search"};
  app.require_subcommand(1);

  Common c;
  auto* bc = app.add_subcommand("bc-train", "train the BC policy (writes policy.txt, expert.jsonl)");
  auto* explore = app.add_subcommand("explore", "build exploration trees and the Q dataset");
  auto* qfn = app.add_subcommand("qfn-train", "fit the Q-function on the Q dataset");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate strategies and write metrics");
  auto* run = app.add_subcommand("run", "all four stages in order");
  auto* ablate = app.add_subcommand("ablate-prm", "self-training with each process-reward scheme");
  auto* low = app.add_subcommand("low-data", "full vs reduced BC data comparison");
  auto* curve = app.add_subcommand("budget-curve", "Best-of-N vs Q-guided reward per budget");
  auto* plot = app.add_subcommand("plot-data", "tidy strategy,budget,seed,reward CSV from a metrics file");
  for (auto* cmd : {bc, explore, qfn, evaluate, run, ablate, low, curve, plot}) add_common(cmd, c);

  std::vector<std::string> schemes;
  ablate->add_option("--schemes", schemes, "schemes (default selftrain.schemes)")->delimiter(',');
  double fraction = 0.516;
  low->add_option("--fraction", fraction, "share of expert data kept for BC")->capture_default_str();
  std::string plot_in, plot_out;
  plot->add_option("--input", plot_in, "metrics CSV (default <run dir>/budget_curve.csv)");
  plot->add_option("--output", plot_out, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    using qlass::Stage;
    if (bc->parsed()) {
      qlass::run_pipeline(resolve(c), {Stage::bc});
    } else if (explore->parsed()) {
      qlass::run_pipeline(resolve(c), {Stage::explore});
    } else if (qfn->parsed()) {
      qlass::run_pipeline(resolve(c), {Stage::qfn});
    } else if (evaluate->parsed()) {
      print_metrics(qlass::run_pipeline(resolve(c), {Stage::evaluate}));
    } else if (run->parsed()) {
      print_metrics(qlass::run_pipeline(resolve(c)));
    } else if (ablate->parsed()) {
      auto cfg = resolve(c);
      std::vector<qlass::SelfTrainScheme> list = cfg.selftrain_schemes;
      if (!schemes.empty()) {
        list.clear();
        for (const auto& s : schemes) list.push_back(qlass::self_train_scheme_from_string(s));
      }
      std::cout << qlass::ablation_to_csv(qlass::run_ablation(cfg, list));
    } else if (low->parsed()) {
      std::cout << qlass::low_data_to_csv(qlass::run_low_data(resolve(c), fraction));
    } else if (curve->parsed()) {
      print_metrics(qlass::run_budget_curve(resolve(c, true)));
    } else if (plot->parsed()) {
      const auto cfg = resolve(c);
      const auto in = plot_in.empty() ? qlass::run_dir(cfg) / "budget_curve.csv" : std::filesystem::path(plot_in);
      if (!std::filesystem::exists(in)) throw qlass::StageDependencyError("missing artifact " + in.string());
      const auto text = qlass::emit_plot_data(qlass::read_metrics(in));
      if (plot_out.empty())
        std::cout << text;
      else
        qlass::write_file_atomic(plot_out, text);
    }
  } catch (const qlass::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
