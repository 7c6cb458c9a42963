#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qlass/policy.hpp"
#include "qlass/qfn.hpp"

namespace qlass {

/// How self-training data is generated: guided by a value model trained on one
/// of the tree labelings, or unguided sampling filtered by reward.
enum class SelfTrainScheme { q_value, avg_reward, outcome, rft_oracle };
std::string to_string(SelfTrainScheme s);
SelfTrainScheme self_train_scheme_from_string(const std::string& name);
/// The tree labeling a guided scheme is trained on; throws for rft_oracle.
LabelScheme label_scheme_for(SelfTrainScheme s);

struct SelfTrainConfig {
  SelfTrainScheme scheme = SelfTrainScheme::q_value;
  int traj_per_task = 1;
  /// A trajectory is kept when its final reward exceeds this.
  double success_threshold = 0.0;
  bool merge_expert = true;
  int m = 2;
  int max_len = 40;
  double temperature = 0.7;
};

/// For every task, searches `traj_per_task` rollouts (Q-guided under the
/// scheme's value model, or plain sampling for rft_oracle) and keeps the best
/// one if it clears the threshold. Generated records follow task order; with
/// `merge_expert` they are appended after the expert records.
ExpertDataset generate_self_training_data(const Policy& policy,
                                          const std::map<SelfTrainScheme, const QFunction*>& qfn_by_scheme,
                                          const Environment& env, const std::vector<TaskSpec>& tasks,
                                          const ExpertDataset& expert, const SelfTrainConfig& config,
                                          std::uint64_t seed, int workers = 1);

/// Behavior cloning on base followed by generated records.
Policy self_train(const Environment& env, const ExpertDataset& base, const ExpertDataset& generated,
                  const BcConfig& config);

}  // namespace qlass
