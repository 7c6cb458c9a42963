#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "qlass/config.hpp"

namespace qlass {

/// One aggregated measurement. `budget` is the policy-sample cap (0 when
/// unlimited); `success_rate` counts episodes with final reward 1.
struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string stage;
  std::string strategy;
  std::uint64_t budget = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double wall_time = 0.0;
  bool operator==(const MetricsRow&) const = default;
};

std::string metrics_header();
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> metrics_from_csv(const std::string& text);
void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Tidy `strategy,budget,seed,reward` rows grouped by strategy, then budget
/// and seed. Empty input gives the header line alone.
std::string emit_plot_data(const std::vector<MetricsRow>& rows);

enum class Stage { bc, explore, qfn, evaluate };
std::string to_string(Stage s);
inline const std::vector<Stage> kAllStages = {Stage::bc, Stage::explore, Stage::qfn, Stage::evaluate};

/// Artifact locations of one seed under `<out_dir>/<run_id>/seed-<s>/`.
struct SeedPaths {
  std::filesystem::path dir;
  std::filesystem::path policy;    // policy.txt
  std::filesystem::path expert;    // expert.jsonl, the BC subset
  std::filesystem::path trees;     // trees/<task id>.json
  std::filesystem::path qdataset;  // qdataset.tsv
  std::filesystem::path qfn;       // qfn.txt
  std::filesystem::path results;   // results.jsonl
  std::filesystem::path metrics;   // metrics.csv
};

std::filesystem::path run_dir(const ExperimentConfig& cfg);
SeedPaths seed_paths(const ExperimentConfig& cfg, std::uint64_t seed);

/// Expert records from `data.expert_path`, or the environment's own experts.
ExpertDataset load_expert_data(const ExperimentConfig& cfg, const Environment& env);

/// Seeded subsample keeping round(fraction * n) records (at least one) in
/// their original order. Fraction 1 returns the data unchanged.
ExpertDataset subsample_experts(const ExpertDataset& data, double fraction, std::uint64_t seed);

/// Evaluation tasks of a suite name ("train" or "heldout").
const std::vector<TaskSpec>& suite_tasks(const Environment& env, const std::string& suite);

/// Individual stages for one seed. Each reads the previous stage's artifacts
/// from disk and throws StageDependencyError naming the first missing file.
void run_bc_stage(const ExperimentConfig& cfg, std::uint64_t seed);
void run_explore_stage(const ExperimentConfig& cfg, std::uint64_t seed);
void run_qfn_stage(const ExperimentConfig& cfg, std::uint64_t seed);
std::vector<MetricsRow> run_evaluate_stage(const ExperimentConfig& cfg, std::uint64_t seed);

/// Runs the selected stages for every configured seed, then rewrites the
/// run-level metrics.csv from the per-seed files. Returns the combined rows.
std::vector<MetricsRow> run_pipeline(const ExperimentConfig& cfg, const std::vector<Stage>& stages = kAllStages);

struct AblationRow {
  std::uint64_t seed = 0;
  SelfTrainScheme scheme = SelfTrainScheme::q_value;
  /// FNV-1a over the tree dumps every scheme was trained from.
  std::uint64_t tree_checksum = 0;
  std::size_t generated = 0;
  double mean_reward = 0.0;
  double success_rate = 0.0;
};

/// For every seed: loads the explore-stage trees once, trains one value model
/// per scheme on them, self-trains the BC policy on the scheme's generated
/// data and evaluates it greedily. Writes ablation.csv in the run directory.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<SelfTrainScheme>& schemes);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

struct LowDataRow {
  std::uint64_t seed = 0;
  double fraction = 1.0;
  std::string strategy;
  double mean_reward = 0.0;
};

/// Runs the full pipeline twice per seed, with all expert data and with a
/// seeded `fraction` of it for BC. Exploration covers every training task in
/// both runs; the expert branch is added only for tasks kept for BC. Writes
/// low_data.csv in the run directory.
std::vector<LowDataRow> run_low_data(const ExperimentConfig& cfg, double fraction);
std::string low_data_to_csv(const std::vector<LowDataRow>& rows);

/// Budget sweep of Best-of-N (single-sample rollouts) and Q-guided generation
/// over `curve.budgets` on `curve.suite`, using each seed's stage artifacts.
/// Writes budget_curve.csv and plot.csv in the run directory.
std::vector<MetricsRow> run_budget_curve(const ExperimentConfig& cfg);

/// Checksum over every artifact file of a run directory (sorted relative
/// paths and contents).
std::uint64_t directory_checksum(const std::filesystem::path& dir);

}  // namespace qlass
