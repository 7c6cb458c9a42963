#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qlass/env.hpp"

namespace qlass {

struct ExpertRecord {
  TaskSpec task;
  Trajectory trajectory;
};

/// The demonstration set used for behavior cloning and self-training.
struct ExpertDataset {
  std::vector<ExpertRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  /// Expert trajectories carried by the given tasks, in task order.
  static ExpertDataset from_tasks(const std::vector<TaskSpec>& tasks);
};

/// Tabular softmax policy over the legal actions of each visited state.
/// States never seen in training fall back to uniform. Every probability is
/// mixed with the uniform distribution at weight `smoothing`, so expert actions
/// never get probability zero unless smoothing is 0.
class Policy {
 public:
  explicit Policy(double smoothing = 1e-3) : smoothing_(smoothing) {}

  double smoothing() const noexcept { return smoothing_; }

  /// Probabilities aligned with `legal`. Temperature 0 puts all mass on the
  /// argmax (ties to the lexicographically smallest action) before smoothing.
  std::vector<double> probabilities(const HistoryState& state, std::span<const ActionToken> legal,
                                    double temperature = 1.0) const;

  ActionToken sample_action(const HistoryState& state, std::span<const ActionToken> legal, double temperature,
                            Rng& rng) const;

  /// M independent draws; duplicates allowed.
  std::vector<ActionToken> sample_candidate_set(const HistoryState& state, std::span<const ActionToken> legal,
                                                double temperature, int m, Rng& rng) const;

  bool knows(const HistoryState& state) const { return table_.count(state.key()) > 0; }
  std::size_t num_states() const noexcept { return table_.size(); }
  double logit(const std::string& state_key, const ActionToken& action) const;
  void set_logit(const std::string& state_key, const ActionToken& action, double value);
  const std::map<std::string, std::map<ActionToken, double>>& table() const noexcept { return table_; }

  void save(const std::filesystem::path& path) const;
  static Policy load(const std::filesystem::path& path);

  bool operator==(const Policy&) const = default;

 private:
  double smoothing_;
  std::map<std::string, std::map<ActionToken, double>> table_;
};

struct BcConfig {
  int epochs = 3;
  double learning_rate = 3.0;
  double smoothing = 1e-3;
  std::uint64_t seed = 0;
};

struct BcReport {
  double initial_nll = 0.0;
  std::vector<double> epoch_nll;
};

/// One supervised step: the state before the expert action, the legal actions
/// there, and which of them the expert took.
struct BcSample {
  HistoryState state;
  std::vector<ActionToken> legal;
  std::size_t expert_index = 0;
};

/// Replays every record, throwing DataValidationError that names the offending
/// record when a trajectory does not reproduce or uses an illegal action.
std::vector<BcSample> bc_samples(const Environment& env, const ExpertDataset& data);

/// Minimizes the negative log-likelihood of expert actions by full-batch
/// gradient descent on the logits. Each state's gradient is averaged over its
/// visits, which keeps the step stable for any visit count.
Policy bc_train(const Environment& env, const ExpertDataset& data, const BcConfig& config,
                BcReport* report = nullptr);

/// Mean per-step NLL of the expert actions (temperature 1, smoothed).
/// Returns +inf when an expert action has probability zero.
double policy_nll(const Policy& policy, const Environment& env, const ExpertDataset& data);
double policy_nll(const Policy& policy, std::span<const BcSample> samples);

/// Gradient of the summed NLL with respect to every logit touched by the
/// samples: state key -> action -> d(sum NLL)/d(logit).
std::map<std::string, std::map<ActionToken, double>> policy_nll_gradient(const Policy& policy,
                                                                          std::span<const BcSample> samples);

}  // namespace qlass
