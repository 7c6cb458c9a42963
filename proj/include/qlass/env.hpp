#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qlass/common.hpp"
#include "qlass/state.hpp"

namespace qlass {

/// A task: identifier, surface description, optional expert demonstration and
/// step limit. `params` carries the goal semantics the environment interprets;
/// the description is surface text only.
struct TaskSpec {
  std::string id;
  std::string description;
  std::optional<Trajectory> expert;
  int max_steps = 1;
  std::vector<int> params;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
};

/// Everything needed to continue an episode. Copyable so that tree nodes can
/// snapshot it.
struct EnvState {
  std::shared_ptr<const TaskSpec> task;
  HistoryState history;
  std::vector<int> internal;
  int steps = 0;
  bool done = false;
  double last_reward = 0.0;

  double final_reward() const { return done ? last_reward : 0.0; }
};

inline constexpr std::string_view kNothingHappened = "nothing happened";

/// Deterministic sequential-decision environment. Instances are immutable
/// after construction, so `reset`/`step` are pure functions of their inputs and
/// one instance can serve any number of threads.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view kind() const = 0;

  /// Training tasks (the ones carrying expert trajectories).
  const std::vector<TaskSpec>& tasks() const noexcept { return tasks_; }
  const std::vector<TaskSpec>& heldout_tasks() const noexcept { return heldout_; }
  const TaskSpec& find_task(std::string_view id) const;

  EnvState reset(const TaskSpec& task) const;
  EnvState reset(std::string_view task_id) const { return reset(find_task(task_id)); }

  /// Actions outside `legal_actions` are absorbed: "nothing happened", reward 0,
  /// one step consumed.
  StepResult step(EnvState& state, std::string_view action) const;

  /// Sorted, nonempty until terminal, empty at terminal states.
  std::vector<ActionToken> legal_actions(const EnvState& state) const;

  /// Compact key of the Markov state (internal variables plus step counter);
  /// used by the brute-force oracle.
  std::string markov_key(const EnvState& state) const;

  /// Optimal demonstration for a task, when the environment can produce one.
  virtual std::optional<Trajectory> solve(const TaskSpec& task) const = 0;

 protected:
  struct Transition {
    Observation observation;
    double reward = 0.0;
    bool terminal = false;
  };

  virtual void validate_task(const TaskSpec& task) const = 0;
  virtual std::vector<int> initial_internal(const TaskSpec& task) const = 0;
  virtual std::vector<ActionToken> enumerate_actions(const TaskSpec& task, std::span<const int> internal) const = 0;
  virtual Transition apply(const TaskSpec& task, std::vector<int>& internal, std::string_view action) const = 0;

  std::vector<TaskSpec> tasks_;
  std::vector<TaskSpec> heldout_;
};

/// Replays a trajectory from reset. Throws DataValidationError on the first
/// mismatching observation, reward or done flag.
void validate_trajectory(const Environment& env, const TaskSpec& task, const Trajectory& traj);

/// Runs a fixed action sequence from reset and records the result.
Trajectory play(const Environment& env, const TaskSpec& task, const std::vector<ActionToken>& actions);

struct QStarTable {
  /// (markov key, action) -> Q*
  std::map<std::pair<std::string, ActionToken>, double> q;
  /// markov key -> V* for non-terminal states inside the horizon
  std::map<std::string, double> v;
  std::string initial_key;
};

/// Exhaustive backward induction over every state reachable within `horizon`
/// steps. Test oracle only.
QStarTable brute_force_q(const Environment& env, const TaskSpec& task, double gamma, int horizon,
                         std::size_t max_states = 1'000'000);

using PerturbOperator = std::function<std::string(std::string_view description, Rng& rng)>;

/// Built-ins: "identity" and "synonym".
void register_perturbation(const std::string& name, PerturbOperator op);
bool has_perturbation(const std::string& name);
TaskSpec perturb_task(const TaskSpec& task, const std::string& op_name, std::uint64_t seed);

}  // namespace qlass
