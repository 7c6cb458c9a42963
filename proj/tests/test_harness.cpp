#include <cstdlib>
#include <filesystem>

#include "doctest.h"
#include "qlass/io.hpp"
#include "qlass/pipeline.hpp"

using namespace qlass;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("qlass-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig cfg;
  cfg.out_dir = out;
  cfg.run_id = "small";
  cfg.seeds = {1, 2};
  cfg.env.num_tasks = 12;
  cfg.search.n = 2;
  return cfg;
}

std::string slurp_dir(const fs::path& dir) {
  std::string all;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + read_file(f);
  return all;
}

}  // namespace

TEST_CASE("config text round-trips and rejects unknown keys") {
  ExperimentConfig cfg;
  cfg.set("tree.max_depth", "6");
  cfg.set("run.seeds", "3, 4,5");
  cfg.set("eval.strategies", "greedy,q_guided");
  cfg.set("search.temperature", "0.25");
  const auto back = ExperimentConfig::parse(cfg.dump());
  CHECK(back == cfg);
  CHECK(back.tree.max_depth == 6);
  CHECK(back.seeds == std::vector<std::uint64_t>{3, 4, 5});
  CHECK(back.get("search.temperature") == cfg.get("search.temperature"));
  CHECK_THROWS_AS(cfg.set("tree.depth", "3"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("tree.max_width = 2\nbogus.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg.set("tree.max_depth", "three"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("just words\n"), ConfigError);
  CHECK(ExperimentConfig::parse("# comment\n\ntree.max_width = 2 # trailing\n").tree.max_width == 2);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/qlass.cfg"), ConfigError);
}

TEST_CASE("environment overrides") {
  ExperimentConfig cfg;
  cfg.apply_env_overrides({{"QLASS_TREE_MAX_WIDTH", "4"}, {"QLASS_RUN_ID", "envrun"}, {"HOME", "/root"}});
  CHECK(cfg.tree.max_width == 4);
  CHECK(cfg.run_id == "envrun");
  CHECK_THROWS_AS(cfg.apply_env_overrides({{"QLASS_NOT_A_KEY", "1"}}), ConfigError);
}

TEST_CASE("validation") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.tree.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.bc_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.curve_budgets = {20, 10};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("metrics csv round-trip and plot data") {
  const std::vector<MetricsRow> rows = {
      {"r", 2, "curve", "q_guided", 20, 0.75, 0.5, 0.0},
      {"r", 1, "curve", "q_guided", 20, 0.125, 0.0, 1.5},
      {"r", 1, "curve", "best_of_n", 40, 1.0 / 3.0, 0.25, 0.0},
      {"r", 1, "curve", "best_of_n", 10, 0.1, 0.0, 0.0},
  };
  const auto text = metrics_to_csv(rows);
  CHECK(text.rfind(metrics_header() + "\n", 0) == 0);
  CHECK(metrics_from_csv(text) == rows);

  CHECK(emit_plot_data({}) == "strategy,budget,seed,reward\n");
  const auto plot = emit_plot_data(rows);
  const auto lines = split(plot, '\n');
  REQUIRE(lines.size() >= 5);
  CHECK(lines[0] == "strategy,budget,seed,reward");
  CHECK(lines[1].rfind("best_of_n,10,1,", 0) == 0);
  CHECK(lines[2].rfind("best_of_n,40,1,", 0) == 0);
  CHECK(lines[3].rfind("q_guided,20,1,", 0) == 0);
  CHECK(lines[4].rfind("q_guided,20,2,", 0) == 0);
}

TEST_CASE("trajectory jsonl round-trip") {
  ExperimentConfig cfg;
  const auto env = make_environment(cfg.env);
  std::vector<Trajectory> trajs;
  for (const auto& t : env->tasks()) trajs.push_back(*t.expert);
  const auto dir = scratch("jsonl");
  write_trajectories(dir / "t.jsonl", trajs);
  CHECK(read_trajectories(dir / "t.jsonl") == trajs);
  write_trajectories(dir / "empty.jsonl", {});
  CHECK(read_trajectories(dir / "empty.jsonl").empty());
}

TEST_CASE("subsampling is seeded and order preserving") {
  ExperimentConfig cfg;
  cfg.env.num_tasks = 31;
  const auto env = make_environment(cfg.env);
  const auto all = ExpertDataset::from_tasks(env->tasks());
  const auto a = subsample_experts(all, 0.516, 9);
  const auto b = subsample_experts(all, 0.516, 9);
  CHECK(a.size() == 16);
  REQUIRE(a.size() == b.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.records[i].task.id == b.records[i].task.id);
    while (pos < all.size() && all.records[pos].task.id != a.records[i].task.id) ++pos;
    CHECK(pos < all.size());
  }
  CHECK(subsample_experts(all, 0.001, 1).size() == 1);
  CHECK(subsample_experts(all, 1.0, 1).size() == all.size());
  CHECK_THROWS_AS(subsample_experts(all, 0.0, 1), ConfigError);
}

TEST_CASE("stages name the artifact they are missing") {
  const auto cfg = small_config(scratch("missing"));
  try {
    run_pipeline(cfg, {Stage::explore});
    FAIL("expected a stage dependency error");
  } catch (const StageDependencyError& e) {
    CHECK(std::string(e.what()).find("policy.txt") != std::string::npos);
  }
  run_pipeline(cfg, {Stage::bc});
  try {
    run_pipeline(cfg, {Stage::qfn});
    FAIL("expected a stage dependency error");
  } catch (const StageDependencyError& e) {
    CHECK(std::string(e.what()).find("qdataset.tsv") != std::string::npos);
  }
  CHECK_THROWS_AS(run_pipeline(cfg, {Stage::evaluate}), StageDependencyError);
}

TEST_CASE("full runs are deterministic and stages are isolated") {
  auto cfg = small_config(scratch("determinism-a"));
  const auto rows = run_pipeline(cfg);
  CHECK(rows.size() == cfg.seeds.size() * cfg.eval_strategies.size());
  const auto first = slurp_dir(run_dir(cfg));
  const auto sum = directory_checksum(run_dir(cfg));

  cfg.out_dir = scratch("determinism-b");
  cfg.workers = 3;
  run_pipeline(cfg);
  CHECK(directory_checksum(run_dir(cfg)) == sum);
  CHECK(slurp_dir(run_dir(cfg)) == first);

  // Deleting one stage's outputs and re-running only that stage restores them.
  const auto qfn_path = seed_paths(cfg, 1).qfn;
  const auto before = read_file(qfn_path);
  fs::remove(qfn_path);
  run_pipeline(cfg, {Stage::qfn});
  CHECK(read_file(qfn_path) == before);
  fs::remove_all(seed_paths(cfg, 2).trees);
  run_pipeline(cfg, {Stage::explore});
  CHECK(directory_checksum(run_dir(cfg)) == sum);
}

TEST_CASE("retraining the value model alone leaves earlier artifacts untouched") {
  auto cfg = small_config(scratch("retrain"));
  cfg.seeds = {1};
  run_pipeline(cfg);
  const auto p = seed_paths(cfg, 1);
  const auto policy = read_file(p.policy);
  const auto qdata = read_file(p.qdataset);
  cfg.qfn.epochs = 2;
  run_pipeline(cfg, {Stage::qfn});
  CHECK(read_file(p.policy) == policy);
  CHECK(read_file(p.qdataset) == qdata);
  CHECK(fs::exists(p.qfn));
}

TEST_CASE("ablation schemes share one set of trees") {
  auto cfg = small_config(scratch("ablation"));
  cfg.seeds = {3};
  run_pipeline(cfg, {Stage::bc, Stage::explore});
  const auto rows = run_ablation(cfg, {SelfTrainScheme::q_value, SelfTrainScheme::avg_reward,
                                       SelfTrainScheme::outcome, SelfTrainScheme::rft_oracle});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.tree_checksum == rows[0].tree_checksum);
    CHECK(r.mean_reward >= 0.0);
    CHECK(r.mean_reward <= 1.0);
  }
  CHECK(fs::exists(run_dir(cfg) / "ablation.csv"));
}

TEST_CASE("budget curve and low-data runs write their tables") {
  auto cfg = small_config(scratch("curve"));
  cfg.seeds = {1};
  cfg.env.num_heldout = 6;
  cfg.curve_budgets = {5, 20};
  run_pipeline(cfg, {Stage::bc, Stage::explore, Stage::qfn});
  const auto rows = run_budget_curve(cfg);
  CHECK(rows.size() == 4);
  CHECK(fs::exists(run_dir(cfg) / "budget_curve.csv"));
  CHECK(read_file(run_dir(cfg) / "plot.csv") == emit_plot_data(rows));

  const auto low = run_low_data(cfg, 0.5);
  CHECK(low.size() == 2 * cfg.eval_strategies.size());
  CHECK(fs::exists(run_dir(cfg) / "low_data.csv"));
}
