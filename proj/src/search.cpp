#include "qlass/search.hpp"

#include <algorithm>

#include "qlass/qfn.hpp"

namespace qlass {

std::size_t select_candidate(const std::vector<ActionToken>& candidates, const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (scores[i] > scores[best] || (scores[i] == scores[best] && candidates[i] < candidates[best])) best = i;
  return best;
}

RolloutOutcome guided_rollout(const Policy& policy, const ActionScorer* scorer, const Environment& env,
                              EnvState start, int m, int max_len, double temperature, Rng& rng,
                              SearchBudget& budget) {
  if (m < 1) throw ContractError("candidate set size M must be >= 1");
  RolloutOutcome out;
  out.trajectory.task_id = start.task ? start.task->id : "";
  out.end = std::move(start);
  EnvState& s = out.end;
  for (int t = 0; t < max_len && !s.done; ++t) {
    if (!budget.affords(static_cast<std::uint64_t>(m), 1)) {
      out.budget_exhausted = true;
      break;
    }
    const auto legal = env.legal_actions(s);
    auto candidates = policy.sample_candidate_set(s.history, legal, temperature, m, rng);
    budget.policy_samples += static_cast<std::uint64_t>(m);
    std::size_t pick = 0;
    if (scorer && candidates.size() > 1) {
      std::vector<double> scores(candidates.size());
      for (std::size_t i = 0; i < candidates.size(); ++i) scores[i] = (*scorer)(s.history, candidates[i]);
      pick = select_candidate(candidates, scores);
    }
    const ActionToken action = candidates[pick];
    const StepResult r = env.step(s, action);
    budget.env_steps += 1;
    out.trajectory.steps.push_back({action, r.observation, r.reward});
  }
  out.trajectory.final_reward = s.final_reward();
  return out;
}

namespace {

SearchResult run_rollouts(const Policy& policy, const ActionScorer* scorer, const Environment& env,
                          const TaskSpec& task, int m, int n, int max_len, double temperature, std::uint64_t seed,
                          SearchBudget caps, const std::string& strategy) {
  if (n < 1) throw ContractError("number of rollouts N must be >= 1");
  if (max_len < 0) throw ContractError("max trajectory length must be >= 0");
  SearchResult result;
  result.budget_used = caps;
  result.budget_used.policy_samples = 0;
  result.budget_used.env_steps = 0;
  const Rng stream(seed);
  try {
    for (int i = 0; i < n; ++i) {
      if (!result.budget_used.affords(static_cast<std::uint64_t>(m), 1) && max_len > 0) {
        result.budget_exhausted = true;
        break;
      }
      Rng rng = stream.split(static_cast<std::uint64_t>(i));
      auto out = guided_rollout(policy, scorer, env, env.reset(task), m, max_len, temperature, rng,
                                result.budget_used);
      out.trajectory.meta = {seed, strategy};
      result.trajectories.push_back(std::move(out.trajectory));
      if (out.budget_exhausted) {
        result.budget_exhausted = true;
        break;
      }
    }
  } catch (const Error& e) {
    result.env_failed = true;
    result.error = e.what();
  }
  for (const auto& t : result.trajectories) {
    if (result.best.task_id.empty() || t.final_reward > result.best_reward) {
      result.best = t;
      result.best_reward = t.final_reward;
    }
  }
  if (result.best.task_id.empty()) result.best.task_id = task.id;
  return result;
}

}  // namespace

SearchResult q_guided_generate(const Policy& policy, const ActionScorer& scorer, const Environment& env,
                               const TaskSpec& task, const SearchParams& params, std::uint64_t seed,
                               SearchBudget caps) {
  if (params.m < 1 || params.n < 1 || params.max_len < 1)
    throw ContractError("q-guided generation needs M, N, L >= 1");
  return run_rollouts(policy, &scorer, env, task, params.m, params.n, params.max_len, params.temperature, seed, caps,
                      "q_guided");
}

SearchResult q_guided_generate(const Policy& policy, const QFunction& qfn, const Environment& env,
                               const TaskSpec& task, const SearchParams& params, std::uint64_t seed,
                               SearchBudget caps) {
  const ActionScorer scorer = [&qfn](const HistoryState& s, const ActionToken& a) { return qfn.predict(s, a); };
  return q_guided_generate(policy, scorer, env, task, params, seed, caps);
}

SearchResult best_of_n(const Policy& policy, const Environment& env, const TaskSpec& task,
                       const SearchParams& params, std::uint64_t seed, SearchBudget caps) {
  return run_rollouts(policy, nullptr, env, task, 1, params.n, params.max_len, params.temperature, seed, caps,
                      "best_of_n");
}

Trajectory greedy_rollout(const Policy& policy, const Environment& env, const TaskSpec& task, int max_len) {
  if (max_len < 0) throw ContractError("max trajectory length must be >= 0");
  Rng unused(0);
  SearchBudget budget;
  auto out = guided_rollout(policy, nullptr, env, env.reset(task), 1, max_len, 0.0, unused, budget);
  out.trajectory.meta.strategy = "greedy";
  return std::move(out.trajectory);
}

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::greedy: return "greedy";
    case StrategyKind::best_of_n: return "best_of_n";
    case StrategyKind::q_guided: return "q_guided";
  }
  return "unknown";
}

StrategyKind strategy_from_string(const std::string& name) {
  if (name == "greedy") return StrategyKind::greedy;
  if (name == "best_of_n") return StrategyKind::best_of_n;
  if (name == "q_guided") return StrategyKind::q_guided;
  throw ConfigError("unknown strategy '" + name + "'");
}

SearchResult run_strategy(const Strategy& strategy, const Environment& env, const TaskSpec& task,
                          std::uint64_t seed, SearchBudget caps) {
  if (!strategy.policy) throw ContractError("strategy has no policy");
  SearchParams p = strategy.params;
  const bool capped = caps.policy_sample_cap != SearchBudget::kUnlimited;
  if (capped) p.n = static_cast<int>(std::min<std::uint64_t>(caps.policy_sample_cap, 1u << 30));
  switch (strategy.kind) {
    case StrategyKind::greedy: {
      SearchResult r;
      r.budget_used = caps;
      r.budget_used.policy_samples = r.budget_used.env_steps = 0;
      Rng unused(0);
      auto out = guided_rollout(*strategy.policy, nullptr, env, env.reset(task), 1, p.max_len, 0.0, unused,
                                r.budget_used);
      out.trajectory.meta = {seed, "greedy"};
      r.budget_exhausted = out.budget_exhausted;
      r.best = out.trajectory;
      r.best_reward = out.trajectory.final_reward;
      r.trajectories.push_back(std::move(out.trajectory));
      return r;
    }
    case StrategyKind::best_of_n:
      return best_of_n(*strategy.policy, env, task, p, seed, caps);
    case StrategyKind::q_guided:
      if (!strategy.scorer) throw ContractError("q_guided strategy needs a scorer");
      return q_guided_generate(*strategy.policy, strategy.scorer, env, task, p, seed, caps);
  }
  throw ContractError("unknown strategy");
}

std::vector<BudgetPoint> budget_curve(const Strategy& strategy, const Environment& env,
                                      const std::vector<TaskSpec>& tasks, const std::vector<std::uint64_t>& budgets,
                                      std::uint64_t seed, int workers) {
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw ContractError("budgets must be sorted ascending");
  std::vector<BudgetPoint> out;
  for (const auto b : budgets) {
    BudgetPoint point;
    point.budget = b;
    point.task_rewards.assign(tasks.size(), 0.0);
    parallel_for(tasks.size(), workers, [&](std::size_t i) {
      const auto r = run_strategy(strategy, env, tasks[i], mix_seed(seed, i), SearchBudget::capped(b, b));
      point.task_rewards[i] = r.best_reward;
    });
    double sum = 0.0;
    for (double v : point.task_rewards) sum += v;
    point.mean_reward = tasks.empty() ? 0.0 : sum / static_cast<double>(tasks.size());
    out.push_back(std::move(point));
  }
  return out;
}

}  // namespace qlass
