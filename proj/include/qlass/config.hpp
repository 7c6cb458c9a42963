#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qlass/prm.hpp"
#include "qlass/qfn.hpp"
#include "qlass/search.hpp"
#include "qlass/toy_envs.hpp"
#include "qlass/tree.hpp"

namespace qlass {

/// Every tunable of a pipeline run. Text form is one `dotted.key = value` per
/// line; `#` starts a comment. Lists are comma-separated.
struct ExperimentConfig {
  std::string run_id = "qlass";
  std::filesystem::path out_dir = "out";
  std::vector<std::uint64_t> seeds = {1};
  int workers = 1;
  bool record_wall_time = false;

  EnvConfig env;
  /// Expert trajectories in JSONL; empty means the environment's own experts.
  std::filesystem::path expert_path;
  /// Fraction of expert records kept for behavior cloning (seeded subsample).
  double bc_fraction = 1.0;

  BcConfig bc;
  TreeParams tree;
  QTrainConfig qfn;
  SearchParams search;
  /// Policy-sample cap per task during evaluation; 0 means unlimited.
  std::uint64_t search_budget = 0;

  /// "train" or "heldout".
  std::string eval_suite = "train";
  std::vector<StrategyKind> eval_strategies = {StrategyKind::greedy, StrategyKind::best_of_n,
                                               StrategyKind::q_guided};

  int selftrain_traj_per_task = 1;
  double selftrain_success_threshold = 0.0;
  std::vector<SelfTrainScheme> selftrain_schemes = {SelfTrainScheme::q_value, SelfTrainScheme::avg_reward,
                                                    SelfTrainScheme::outcome};

  std::vector<std::uint64_t> curve_budgets = {10, 20, 40, 80, 160, 320, 640, 1280, 2560};
  std::string curve_suite = "heldout";

  /// Throws ConfigError on an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  std::string dump() const;
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Applies QLASS_<KEY> variables (dots become underscores, upper case).
  /// Unknown QLASS_ variables are rejected.
  void apply_env_overrides(const std::map<std::string, std::string>& environment);
  void apply_process_env();

  void validate() const;

  bool operator==(const ExperimentConfig& o) const { return dump() == o.dump(); }
};

}  // namespace qlass
