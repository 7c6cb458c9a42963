#include "qlass/prm.hpp"

#include <optional>

#include "qlass/search.hpp"

namespace qlass {

std::string to_string(SelfTrainScheme s) {
  switch (s) {
    case SelfTrainScheme::q_value: return "q_value";
    case SelfTrainScheme::avg_reward: return "avg_reward";
    case SelfTrainScheme::outcome: return "outcome";
    case SelfTrainScheme::rft_oracle: return "rft_oracle";
  }
  return "unknown";
}

SelfTrainScheme self_train_scheme_from_string(const std::string& name) {
  if (name == "q_value") return SelfTrainScheme::q_value;
  if (name == "avg_reward") return SelfTrainScheme::avg_reward;
  if (name == "outcome") return SelfTrainScheme::outcome;
  if (name == "rft_oracle") return SelfTrainScheme::rft_oracle;
  throw ConfigError("unknown self-training scheme '" + name + "'");
}

LabelScheme label_scheme_for(SelfTrainScheme s) {
  switch (s) {
    case SelfTrainScheme::q_value: return LabelScheme::q_value;
    case SelfTrainScheme::avg_reward: return LabelScheme::avg_reward;
    case SelfTrainScheme::outcome: return LabelScheme::outcome;
    case SelfTrainScheme::rft_oracle: break;
  }
  throw ContractError("rft_oracle has no tree labeling");
}

ExpertDataset generate_self_training_data(const Policy& policy,
                                          const std::map<SelfTrainScheme, const QFunction*>& qfn_by_scheme,
                                          const Environment& env, const std::vector<TaskSpec>& tasks,
                                          const ExpertDataset& expert, const SelfTrainConfig& config,
                                          std::uint64_t seed, int workers) {
  if (config.traj_per_task < 1) throw ContractError("traj_per_task must be >= 1");
  if (!(config.success_threshold >= 0.0 && config.success_threshold < 1.0))
    throw ContractError("success_threshold must be in [0, 1)");
  const QFunction* qfn = nullptr;
  if (config.scheme != SelfTrainScheme::rft_oracle) {
    const auto it = qfn_by_scheme.find(config.scheme);
    if (it == qfn_by_scheme.end() || it->second == nullptr)
      throw ContractError("no q-function supplied for scheme '" + to_string(config.scheme) + "'");
    qfn = it->second;
  }

  SearchParams params;
  params.m = config.m;
  params.n = config.traj_per_task;
  params.max_len = config.max_len;
  params.temperature = config.temperature;

  std::vector<std::optional<Trajectory>> kept(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    const std::uint64_t s = mix_seed(seed, i);
    const SearchResult r = qfn ? q_guided_generate(policy, *qfn, env, tasks[i], params, s)
                               : best_of_n(policy, env, tasks[i], params, s);
    if (r.env_failed) throw ContractError("generation failed on task '" + tasks[i].id + "': " + r.error);
    if (!r.trajectories.empty() && r.best_reward > config.success_threshold) kept[i] = r.best;
  });

  ExpertDataset out;
  if (config.merge_expert) out.records = expert.records;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (kept[i]) out.records.push_back({tasks[i], *kept[i]});
  return out;
}

Policy self_train(const Environment& env, const ExpertDataset& base, const ExpertDataset& generated,
                  const BcConfig& config) {
  ExpertDataset all = base;
  all.records.insert(all.records.end(), generated.records.begin(), generated.records.end());
  if (all.empty()) throw ContractError("self-training needs at least one trajectory");
  return bc_train(env, all, config);
}

}  // namespace qlass
