#include "qlass/env.hpp"

#include <algorithm>
#include <mutex>

namespace qlass {

const TaskSpec& Environment::find_task(std::string_view id) const {
  for (const auto* set : {&tasks_, &heldout_})
    for (const auto& t : *set)
      if (t.id == id) return t;
  throw TaskNotFoundError(std::string(id));
}

EnvState Environment::reset(const TaskSpec& task) const {
  validate_task(task);
  if (task.max_steps < 1) throw ContractError("task '" + task.id + "' has max_steps < 1");
  EnvState s;
  s.task = std::make_shared<const TaskSpec>(task);
  s.history = HistoryState(task.description);
  s.internal = initial_internal(task);
  return s;
}

StepResult Environment::step(EnvState& state, std::string_view action) const {
  if (!state.task) throw ContractError("step on an uninitialized state");
  if (state.done) throw ContractError("step on a terminal state");
  const std::string act = normalize_tokens(action);
  const auto legal = enumerate_actions(*state.task, state.internal);
  Transition tr;
  if (std::find(legal.begin(), legal.end(), act) == legal.end()) {
    tr.observation = std::string(kNothingHappened);
  } else {
    tr = apply(*state.task, state.internal, act);
  }
  if (tr.reward < 0.0 || tr.reward > 1.0) throw ContractError("environment emitted a reward outside [0,1]");
  ++state.steps;
  state.done = tr.terminal || state.steps >= state.task->max_steps;
  state.last_reward = tr.reward;
  state.history.append(act, tr.observation);
  return {normalize_tokens(tr.observation), tr.reward, state.done};
}

std::vector<ActionToken> Environment::legal_actions(const EnvState& state) const {
  if (!state.task || state.done) return {};
  auto acts = enumerate_actions(*state.task, state.internal);
  std::sort(acts.begin(), acts.end());
  return acts;
}

std::string Environment::markov_key(const EnvState& state) const {
  std::string key = "t" + std::to_string(state.steps) + (state.done ? "d" : "");
  for (int v : state.internal) key += "," + std::to_string(v);
  return key;
}

void validate_trajectory(const Environment& env, const TaskSpec& task, const Trajectory& traj) {
  EnvState s = env.reset(task);
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const auto& st = traj.steps[i];
    if (s.done)
      throw DataValidationError("task '" + task.id + "': trajectory continues after terminal step " +
                                std::to_string(i));
    const StepResult r = env.step(s, st.action);
    if (r.observation != normalize_tokens(st.observation) || r.reward != st.reward)
      throw DataValidationError("task '" + task.id + "': step " + std::to_string(i) + " ('" + st.action +
                                "') replays to '" + r.observation + "' reward " + format_double(r.reward) +
                                ", recorded '" + st.observation + "' reward " + format_double(st.reward));
  }
  if (s.final_reward() != traj.final_reward)
    throw DataValidationError("task '" + task.id + "': final reward replays to " + format_double(s.final_reward()) +
                              ", recorded " + format_double(traj.final_reward));
}

Trajectory play(const Environment& env, const TaskSpec& task, const std::vector<ActionToken>& actions) {
  Trajectory traj;
  traj.task_id = task.id;
  EnvState s = env.reset(task);
  for (const auto& a : actions) {
    if (s.done) break;
    const StepResult r = env.step(s, a);
    traj.steps.push_back({normalize_tokens(a), r.observation, r.reward});
  }
  traj.final_reward = s.final_reward();
  return traj;
}

namespace {

struct OracleSolver {
  const Environment& env;
  double gamma;
  int horizon;
  std::size_t max_states;
  QStarTable table;

  double value(const EnvState& s) {
    if (s.done || s.steps >= horizon) return 0.0;
    const std::string key = env.markov_key(s);
    if (auto it = table.v.find(key); it != table.v.end()) return it->second;
    if (table.v.size() >= max_states)
      throw OracleTooLargeError("reachable state space exceeds " + std::to_string(max_states) + " states");
    double best = -1.0;
    for (const auto& a : env.legal_actions(s)) {
      EnvState next = s;
      const StepResult r = env.step(next, a);
      const double q = r.reward + gamma * value(next);
      table.q[{key, a}] = q;
      best = std::max(best, q);
    }
    table.v[key] = best;
    return best;
  }
};

}  // namespace

QStarTable brute_force_q(const Environment& env, const TaskSpec& task, double gamma, int horizon,
                         std::size_t max_states) {
  if (horizon < 0) throw ContractError("horizon must be >= 0");
  OracleSolver solver{env, gamma, horizon, max_states, {}};
  const EnvState s0 = env.reset(task);
  solver.table.initial_key = env.markov_key(s0);
  solver.value(s0);
  return std::move(solver.table);
}

namespace {

// Whole-phrase rewrites; every alternative keeps the content tokens intact.
const std::vector<std::pair<std::string, std::vector<std::string>>>& synonym_table() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
      {"i am looking for", {"i want", "find me", "i need", "please get me"}},
      {"take the key", {"grab the key", "pick up the key", "collect the key"}},
      {"open the door", {"unlock the door", "go through the door"}},
      {"starting from", {"beginning at", "from"}},
      {"then", {"and then", "after that"}},
      {"in size", {"sized", "with size"}},
  };
  return table;
}

std::string synonym_rewrite(std::string_view description, Rng& rng) {
  std::string text = " " + normalize_tokens(description) + " ";
  bool changed = false;
  for (const auto& [phrase, alternatives] : synonym_table()) {
    const std::string needle = " " + phrase + " ";
    const auto pos = text.find(needle);
    if (pos == std::string::npos) continue;
    const auto& pick = alternatives[rng.below(alternatives.size())];
    text.replace(pos, needle.size(), " " + pick + " ");
    changed = true;
  }
  if (!changed) text = " please" + text;
  return normalize_tokens(text);
}

struct PerturbRegistry {
  std::mutex mu;
  std::map<std::string, PerturbOperator> ops{
      {"identity", [](std::string_view d, Rng&) { return std::string(d); }},
      {"synonym", synonym_rewrite},
  };
};

PerturbRegistry& registry() {
  static PerturbRegistry r;
  return r;
}

}  // namespace

void register_perturbation(const std::string& name, PerturbOperator op) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.ops[name] = std::move(op);
}

bool has_perturbation(const std::string& name) {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  return r.ops.count(name) > 0;
}

TaskSpec perturb_task(const TaskSpec& task, const std::string& op_name, std::uint64_t seed) {
  PerturbOperator op;
  {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.ops.find(op_name);
    if (it == r.ops.end()) throw ContractError("unregistered perturbation operator '" + op_name + "'");
    op = it->second;
  }
  Rng rng(mix_seed(seed, fnv1a(task.id)));
  TaskSpec out = task;
  out.description = normalize_tokens(op(task.description, rng));
  return out;
}

}  // namespace qlass
