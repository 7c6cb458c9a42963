#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "qlass/env.hpp"
#include "qlass/policy.hpp"

namespace qlass {

class QFunction;

/// Scores a candidate action in the state it would be taken from.
using ActionScorer = std::function<double(const HistoryState&, const ActionToken&)>;

/// Cost accounting shared by every search strategy: one policy sample per
/// sampled candidate, one env step per executed action.
struct SearchBudget {
  static constexpr std::uint64_t kUnlimited = std::numeric_limits<std::uint64_t>::max();

  std::uint64_t policy_samples = 0;
  std::uint64_t env_steps = 0;
  std::uint64_t policy_sample_cap = kUnlimited;
  std::uint64_t env_step_cap = kUnlimited;

  static SearchBudget capped(std::uint64_t samples, std::uint64_t steps) { return {0, 0, samples, steps}; }
  bool affords(std::uint64_t samples, std::uint64_t steps) const {
    return policy_samples + samples <= policy_sample_cap && env_steps + steps <= env_step_cap;
  }
};

struct SearchParams {
  int m = 2;
  int n = 6;
  /// Max trajectory length L; the environment's own step limit also applies.
  int max_len = 40;
  double temperature = 0.7;
};

struct SearchResult {
  std::vector<Trajectory> trajectories;
  /// First trajectory attaining `best_reward`, in generation order.
  Trajectory best;
  double best_reward = 0.0;
  SearchBudget budget_used;
  bool budget_exhausted = false;
  bool env_failed = false;
  std::string error;
};

struct RolloutOutcome {
  Trajectory trajectory;
  EnvState end;
  bool budget_exhausted = false;
};

/// Continues an episode from `start` for at most `max_len` steps. At every
/// step `m` candidates are drawn from the policy; with a scorer the
/// highest-scored one is executed (ties to the lexicographically smallest
/// action), without one the first draw is. Stops early when the budget cannot
/// pay for another step.
RolloutOutcome guided_rollout(const Policy& policy, const ActionScorer* scorer, const Environment& env,
                              EnvState start, int m, int max_len, double temperature, Rng& rng,
                              SearchBudget& budget);

/// Index of the argmax-scored candidate, ties to the lexicographically
/// smallest action.
std::size_t select_candidate(const std::vector<ActionToken>& candidates, const std::vector<double>& scores);

SearchResult q_guided_generate(const Policy& policy, const ActionScorer& scorer, const Environment& env,
                               const TaskSpec& task, const SearchParams& params, std::uint64_t seed,
                               SearchBudget caps = {});
SearchResult q_guided_generate(const Policy& policy, const QFunction& qfn, const Environment& env,
                               const TaskSpec& task, const SearchParams& params, std::uint64_t seed,
                               SearchBudget caps = {});

/// N independent temperature-sampled rollouts; `params.m` is ignored.
SearchResult best_of_n(const Policy& policy, const Environment& env, const TaskSpec& task,
                       const SearchParams& params, std::uint64_t seed, SearchBudget caps = {});

/// Temperature-0 rollout of at most `max_len` steps.
Trajectory greedy_rollout(const Policy& policy, const Environment& env, const TaskSpec& task, int max_len);

enum class StrategyKind { greedy, best_of_n, q_guided };
std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

struct Strategy {
  StrategyKind kind = StrategyKind::best_of_n;
  const Policy* policy = nullptr;
  /// Required for q_guided.
  ActionScorer scorer;
  SearchParams params;
};

/// Runs a strategy on one task. With a budget cap the number of rollouts is
/// bounded only by the cap.
SearchResult run_strategy(const Strategy& strategy, const Environment& env, const TaskSpec& task,
                          std::uint64_t seed, SearchBudget caps = {});

struct BudgetPoint {
  std::uint64_t budget = 0;
  double mean_reward = 0.0;
  std::vector<double> task_rewards;
};

/// For each budget b, every task is searched under caps (b policy samples,
/// b env steps) and the best final rewards are averaged. Task i always uses
/// the seed stream mix_seed(seed, i), so larger budgets extend smaller ones.
std::vector<BudgetPoint> budget_curve(const Strategy& strategy, const Environment& env,
                                      const std::vector<TaskSpec>& tasks, const std::vector<std::uint64_t>& budgets,
                                      std::uint64_t seed, int workers = 1);

}  // namespace qlass
