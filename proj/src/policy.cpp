#include "qlass/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "qlass/io.hpp"

namespace qlass {

namespace {

std::vector<double> softmax(const std::vector<double>& z, double temperature) {
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - zmax) / temperature);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t argmax_lexicographic(std::span<const ActionToken> legal, const std::vector<double>& z) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i)
    if (z[i] > z[best] || (z[i] == z[best] && legal[i] < legal[best])) best = i;
  return best;
}

}  // namespace

ExpertDataset ExpertDataset::from_tasks(const std::vector<TaskSpec>& tasks) {
  ExpertDataset d;
  for (const auto& t : tasks)
    if (t.expert) d.records.push_back({t, *t.expert});
  return d;
}

double Policy::logit(const std::string& state_key, const ActionToken& action) const {
  auto it = table_.find(state_key);
  if (it == table_.end()) return 0.0;
  auto jt = it->second.find(action);
  return jt == it->second.end() ? 0.0 : jt->second;
}

void Policy::set_logit(const std::string& state_key, const ActionToken& action, double value) {
  table_[state_key][action] = value;
}

std::vector<double> Policy::probabilities(const HistoryState& state, std::span<const ActionToken> legal,
                                          double temperature) const {
  if (legal.empty()) throw ContractError("no legal actions to choose from");
  if (!(temperature >= 0.0)) throw ContractError("temperature must be >= 0");
  std::vector<double> z(legal.size(), 0.0);
  if (auto it = table_.find(state.key()); it != table_.end()) {
    for (std::size_t i = 0; i < legal.size(); ++i) {
      auto jt = it->second.find(legal[i]);
      if (jt != it->second.end()) z[i] = jt->second;
    }
  }
  std::vector<double> base;
  if (temperature == 0.0) {
    base.assign(legal.size(), 0.0);
    base[argmax_lexicographic(legal, z)] = 1.0;
  } else {
    base = softmax(z, temperature);
  }
  const double k = static_cast<double>(legal.size());
  for (auto& p : base) p = (1.0 - smoothing_) * p + smoothing_ / k;
  return base;
}

ActionToken Policy::sample_action(const HistoryState& state, std::span<const ActionToken> legal,
                                  double temperature, Rng& rng) const {
  if (!(temperature >= 0.0)) throw ContractError("temperature must be >= 0");
  if (legal.empty()) throw ContractError("no legal actions to choose from");
  if (temperature == 0.0) {
    std::vector<double> z(legal.size());
    for (std::size_t i = 0; i < legal.size(); ++i) z[i] = logit(state.key(), legal[i]);
    return legal[argmax_lexicographic(legal, z)];
  }
  const auto p = probabilities(state, legal, temperature);
  double u = rng.uniform();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (u < p[i]) return legal[i];
    u -= p[i];
  }
  return legal.back();
}

std::vector<ActionToken> Policy::sample_candidate_set(const HistoryState& state, std::span<const ActionToken> legal,
                                                      double temperature, int m, Rng& rng) const {
  if (m < 1) throw ContractError("candidate set size M must be >= 1");
  std::vector<ActionToken> out;
  out.reserve(m);
  for (int i = 0; i < m; ++i) out.push_back(sample_action(state, legal, temperature, rng));
  return out;
}

void Policy::save(const std::filesystem::path& path) const {
  std::ostringstream os;
  os << "qlass-policy 1\n";
  os << "smoothing\t" << format_double(smoothing_) << "\n";
  for (const auto& [key, row] : table_)
    for (const auto& [action, z] : row) os << key << '\t' << action << '\t' << format_double(z) << '\n';
  write_file_atomic(path, os.str());
}

Policy Policy::load(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != "qlass-policy 1")
    throw DataValidationError(path.string() + ": not a version-1 policy file");
  if (!std::getline(is, line) || line.rfind("smoothing\t", 0) != 0)
    throw DataValidationError(path.string() + ": missing smoothing record");
  Policy p(parse_double(line.substr(10)));
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw DataValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    p.table_[fields[0]][fields[1]] = parse_double(fields[2]);
  }
  return p;
}

std::vector<BcSample> bc_samples(const Environment& env, const ExpertDataset& data) {
  std::vector<BcSample> out;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const auto& rec = data.records[i];
    const std::string where = "record " + std::to_string(i) + " (task '" + rec.task.id + "')";
    try {
      validate_trajectory(env, rec.task, rec.trajectory);
    } catch (const Error& e) {
      throw DataValidationError(where + ": " + e.what());
    }
    EnvState s = env.reset(rec.task);
    for (std::size_t t = 0; t < rec.trajectory.steps.size(); ++t) {
      const auto& step = rec.trajectory.steps[t];
      BcSample sample{s.history, env.legal_actions(s), 0};
      const ActionToken act = normalize_tokens(step.action);
      auto it = std::find(sample.legal.begin(), sample.legal.end(), act);
      if (it == sample.legal.end())
        throw DataValidationError(where + ": step " + std::to_string(t) + " uses illegal action '" + act + "'");
      sample.expert_index = static_cast<std::size_t>(it - sample.legal.begin());
      out.push_back(std::move(sample));
      env.step(s, act);
    }
  }
  return out;
}

double policy_nll(const Policy& policy, std::span<const BcSample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : samples) {
    const double p = policy.probabilities(s.state, s.legal, 1.0)[s.expert_index];
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    total -= std::log(p);
  }
  return total / static_cast<double>(samples.size());
}

double policy_nll(const Policy& policy, const Environment& env, const ExpertDataset& data) {
  const auto samples = bc_samples(env, data);
  return policy_nll(policy, samples);
}

namespace {

// d(-log p_mix(a)) / dz_j accumulated into `grad`, scaled by `weight`.
void accumulate_nll_grad(const std::vector<double>& sigma, std::size_t a, double smoothing, double weight,
                         std::vector<double>& grad) {
  const double k = static_cast<double>(sigma.size());
  const double pmix = (1.0 - smoothing) * sigma[a] + smoothing / k;
  const double coef = -(1.0 - smoothing) * sigma[a] / pmix;
  for (std::size_t j = 0; j < sigma.size(); ++j) grad[j] += weight * coef * ((j == a ? 1.0 : 0.0) - sigma[j]);
}

struct StateGroup {
  std::string key;
  std::vector<ActionToken> legal;
  std::vector<double> counts;
  double visits = 0.0;
};

}  // namespace

std::map<std::string, std::map<ActionToken, double>> policy_nll_gradient(const Policy& policy,
                                                                          std::span<const BcSample> samples) {
  std::map<std::string, std::map<ActionToken, double>> out;
  for (const auto& s : samples) {
    const std::string key = s.state.key();
    std::vector<double> z(s.legal.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = policy.logit(key, s.legal[i]);
    std::vector<double> grad(z.size(), 0.0);
    accumulate_nll_grad(softmax(z, 1.0), s.expert_index, policy.smoothing(), 1.0, grad);
    auto& row = out[key];
    for (std::size_t i = 0; i < z.size(); ++i) row[s.legal[i]] += grad[i];
  }
  return out;
}

Policy bc_train(const Environment& env, const ExpertDataset& data, const BcConfig& config, BcReport* report) {
  if (data.empty()) throw DataValidationError("behavior cloning needs a nonempty expert dataset");
  if (config.epochs < 0) throw ConfigError("bc epochs must be >= 0");
  if (config.smoothing < 0.0 || config.smoothing >= 1.0) throw ConfigError("bc smoothing must be in [0, 1)");
  const auto samples = bc_samples(env, data);

  std::vector<StateGroup> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& s : samples) {
    std::string key = s.state.key();
    auto [it, inserted] = index.try_emplace(key, groups.size());
    if (inserted) groups.push_back({std::move(key), s.legal, std::vector<double>(s.legal.size(), 0.0), 0.0});
    auto& g = groups[it->second];
    g.counts[s.expert_index] += 1.0;
    g.visits += 1.0;
  }

  Policy policy(config.smoothing);
  for (const auto& g : groups)
    for (const auto& a : g.legal) policy.set_logit(g.key, a, 0.0);

  if (report) {
    report->initial_nll = policy_nll(policy, samples);
    report->epoch_nll.clear();
  }
  std::vector<double> z, grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& g : groups) {
      z.resize(g.legal.size());
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = policy.logit(g.key, g.legal[i]);
      const auto sigma = softmax(z, 1.0);
      grad.assign(z.size(), 0.0);
      for (std::size_t a = 0; a < g.counts.size(); ++a)
        if (g.counts[a] > 0.0) accumulate_nll_grad(sigma, a, config.smoothing, g.counts[a] / g.visits, grad);
      for (std::size_t i = 0; i < z.size(); ++i) policy.set_logit(g.key, g.legal[i], z[i] - config.learning_rate * grad[i]);
    }
    if (report) report->epoch_nll.push_back(policy_nll(policy, samples));
  }
  return policy;
}

}  // namespace qlass
