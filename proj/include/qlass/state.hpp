#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace qlass {

/// A complete per-step response; whitespace-normalized text.
using ActionToken = std::string;
using Observation = std::string;

struct HistoryStep {
  ActionToken action;
  Observation observation;
  bool operator==(const HistoryStep&) const = default;
};

/// Task description followed by every (action, observation) pair so far.
/// Append-only. `key()` is the canonical exact-match form used by every
/// tabular table in the library.
class HistoryState {
 public:
  HistoryState() = default;
  explicit HistoryState(std::string_view description);

  const std::string& description() const noexcept { return description_; }
  const std::vector<HistoryStep>& steps() const noexcept { return steps_; }
  std::size_t depth() const noexcept { return steps_.size(); }

  void append(std::string_view action, std::string_view observation);
  HistoryState extended(std::string_view action, std::string_view observation) const;

  /// JSON array [description, a1, o1, a2, o2, ...]; never contains tabs or newlines.
  std::string key() const;
  static HistoryState from_key(std::string_view key);

  bool operator==(const HistoryState&) const = default;

 private:
  std::string description_;
  std::vector<HistoryStep> steps_;
};

struct TrajectoryStep {
  ActionToken action;
  Observation observation;
  double reward = 0.0;
  bool operator==(const TrajectoryStep&) const = default;
};

struct TrajectoryMeta {
  std::uint64_t seed = 0;
  std::string strategy;
  bool operator==(const TrajectoryMeta&) const = default;
};

/// Alternating actions/observations with per-step rewards. `final_reward` is
/// the terminal reward when the episode ended, 0 for truncated rollouts.
struct Trajectory {
  std::string task_id;
  std::vector<TrajectoryStep> steps;
  double final_reward = 0.0;
  TrajectoryMeta meta;
  bool operator==(const Trajectory&) const = default;
};

}  // namespace qlass
