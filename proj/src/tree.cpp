#include "qlass/tree.hpp"

#include <algorithm>
#include <climits>
#include <deque>
#include <sstream>

#include "json.hpp"
#include "qlass/io.hpp"
#include "qlass/search.hpp"

namespace qlass {

ExplorationTree::ExplorationTree(TaskSpec task, TreeParams params, EnvState root_state)
    : task_(std::move(task)), params_(params) {
  TreeNode root;
  root.env = std::move(root_state);
  root.reward = 0.0;
  nodes_.push_back(std::move(root));
}

ExplorationTree::ExplorationTree(std::string description, TreeParams params) : params_(params) {
  task_.id = "manual";
  task_.description = description;
  TreeNode root;
  root.env.history = HistoryState(description);
  root.reward = 0.0;
  nodes_.push_back(std::move(root));
}

std::optional<NodeId> ExplorationTree::find_child(NodeId parent, const ActionToken& action) const {
  for (NodeId c : nodes_.at(parent).children)
    if (nodes_[c].action == action) return c;
  return std::nullopt;
}

NodeId ExplorationTree::add_child(NodeId parent, const ActionToken& action, EnvState state,
                                  std::optional<double> reward, bool terminal) {
  if (find_child(parent, action)) throw ContractError("duplicate child action '" + action + "'");
  TreeNode child;
  child.env = std::move(state);
  child.action = action;
  child.reward = reward;
  child.depth = nodes_[parent].depth + 1;
  child.parent = parent;
  child.terminal = terminal;
  const NodeId id = nodes_.size();
  nodes_.push_back(std::move(child));
  nodes_[parent].children.push_back(id);
  return id;
}

NodeId ExplorationTree::add_child(NodeId parent, const ActionToken& action, const Observation& observation,
                                  std::optional<double> reward, bool terminal) {
  EnvState s = nodes_.at(parent).env;
  s.history.append(action, observation);
  s.steps += 1;
  s.done = terminal;
  return add_child(parent, normalize_tokens(action), std::move(s), reward, terminal);
}

std::vector<NodeId> ExplorationTree::preorder() const {
  std::vector<NodeId> order;
  order.reserve(nodes_.size());
  std::vector<NodeId> stack{root()};
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    order.push_back(id);
    const auto& ch = nodes_[id].children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return order;
}

namespace {

struct MergeResult {
  std::vector<NodeId> path;       // nodes below the start node, shallow to deep
  std::vector<NodeId> new_nodes;
};

// A node may take a new child if it is a fresh chain end, or if it is still
// expandable and below the width bound.
bool may_branch(const ExplorationTree& tree, NodeId id) {
  const auto& n = tree.node(id);
  if (n.children.empty()) return !n.terminal;
  return n.expandable && n.children.size() < static_cast<std::size_t>(tree.params().max_width);
}

MergeResult merge_branch(ExplorationTree& tree, NodeId start, const std::vector<TrajectoryStep>& steps,
                         const Environment& env) {
  MergeResult m;
  NodeId cur = start;
  for (const auto& step : steps) {
    if (auto child = tree.find_child(cur, step.action)) {
      cur = *child;
      m.path.push_back(cur);
      continue;
    }
    if (!may_branch(tree, cur)) break;
    EnvState next = tree.node(cur).env;
    const StepResult r = env.step(next, step.action);
    const bool done = next.done;
    cur = tree.add_child(cur, step.action, std::move(next), r.reward, done);
    m.path.push_back(cur);
    m.new_nodes.push_back(cur);
  }
  return m;
}

void stop_expansion(ExplorationTree& tree, const std::vector<NodeId>& path) {
  if (path.empty()) return;
  NodeId target = path.back();
  for (NodeId id : path) {
    if (tree.node(id).children.size() == 1) {
      target = id;
      break;
    }
  }
  auto& n = tree.node(target);
  if (n.expandable) {
    n.expandable = false;
    n.children_when_stopped = n.children.size();
  }
}

}  // namespace

ExplorationTree build_tree(const Policy& policy, const Environment& env, const TaskSpec& task,
                           const std::optional<Trajectory>& expert, const TreeParams& params, Rng& rng) {
  if (params.max_depth < 1 || params.max_width < 1)
    throw ContractError("tree construction needs max_depth >= 1 and max_width >= 1");
  if (params.node_budget < 0) throw ContractError("node_budget must be >= 0");
  ExplorationTree tree(task, params, env.reset(task));
  std::deque<NodeId> queue{ExplorationTree::root()};

  auto enqueue_shallow = [&](const std::vector<NodeId>& nodes) {
    for (NodeId id : nodes)
      if (tree.node(id).depth <= params.max_depth && !tree.node(id).terminal) queue.push_back(id);
  };

  auto expand = [&] {
    while (!queue.empty() && tree.rollouts_used < params.node_budget) {
      const NodeId id = queue.front();
      queue.pop_front();
      {
        const auto& n = tree.node(id);
        if (n.terminal || !n.expandable || n.depth > params.max_depth ||
            n.children.size() >= static_cast<std::size_t>(params.max_width))
          continue;
      }
      MergeResult merged;
      double final_reward = 0.0;
      try {
        SearchBudget unlimited;
        auto out = guided_rollout(policy, nullptr, env, tree.node(id).env, 1, INT_MAX, params.temperature, rng,
                                  unlimited);
        ++tree.rollouts_used;
        ++tree.node(id).rollouts_started;
        final_reward = out.trajectory.final_reward;
        merged = merge_branch(tree, id, out.trajectory.steps, env);
      } catch (const Error& e) {
        throw PartialTreeError(std::string("rollout failed for task '") + task.id + "': " + e.what(),
                               std::make_shared<const ExplorationTree>(tree));
      }
      if (final_reward != 0.0)
        enqueue_shallow(merged.new_nodes);
      else
        stop_expansion(tree, merged.path);
      const auto& n = tree.node(id);
      if (n.expandable && n.children.size() < static_cast<std::size_t>(params.max_width)) queue.push_back(id);
    }
  };

  // The expert branch goes into the bare root first so that no width bound or
  // stop flag can block it; its nodes queue behind the root.
  if (expert) {
    MergeResult merged;
    try {
      merged = merge_branch(tree, ExplorationTree::root(), expert->steps, env);
    } catch (const Error& e) {
      throw PartialTreeError(std::string("expert branch failed to replay for task '") + task.id + "': " + e.what(),
                             std::make_shared<const ExplorationTree>(tree));
    }
    enqueue_shallow(merged.path);
  }
  expand();
  return tree;
}

std::vector<double> backup_values(const ExplorationTree& tree, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("gamma must be in (0, 1]");
  std::vector<double> q(tree.size(), 0.0);
  // Children always have larger ids than their parent, so a reverse sweep is a
  // valid post-order.
  for (std::size_t i = tree.size(); i-- > 0;) {
    const auto& n = tree.node(i);
    if (n.children.empty()) {
      if (!n.reward) throw ContractError("leaf node " + std::to_string(i) + " has no reward");
      q[i] = *n.reward;
      continue;
    }
    double best = q[n.children.front()];
    for (NodeId c : n.children) best = std::max(best, q[c]);
    q[i] = n.reward.value_or(0.0) + gamma * best;
  }
  return q;
}

namespace {

std::vector<double> min_max_normalize(std::vector<double> q) {
  const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
  const double qmin = *lo, qmax = *hi;
  for (auto& v : q) v = qmax == qmin ? 0.0 : (v - qmin) / (qmax - qmin);
  return q;
}

}  // namespace

void estimate_q(ExplorationTree& tree, double gamma) {
  if (tree.normalized) throw ContractError("estimate_q must not be re-run on a normalized tree");
  const auto raw = backup_values(tree, gamma);
  const auto norm = min_max_normalize(raw);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    tree.node(i).raw_q = raw[i];
    tree.node(i).norm_q = norm[i];
  }
  tree.q_estimated = true;
  tree.normalized = true;
}

std::string to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::q_value: return "q_value";
    case LabelScheme::avg_reward: return "avg_reward";
    case LabelScheme::outcome: return "outcome";
  }
  return "unknown";
}

LabelScheme label_scheme_from_string(const std::string& name) {
  if (name == "q_value") return LabelScheme::q_value;
  if (name == "avg_reward") return LabelScheme::avg_reward;
  if (name == "outcome") return LabelScheme::outcome;
  throw ConfigError("unknown label scheme '" + name + "'");
}

std::vector<double> label_tree(const ExplorationTree& tree, LabelScheme scheme) {
  if (scheme == LabelScheme::q_value) return min_max_normalize(backup_values(tree, tree.params().gamma));
  std::vector<double> sum(tree.size(), 0.0), count(tree.size(), 0.0), best(tree.size(), 0.0);
  for (std::size_t i = tree.size(); i-- > 0;) {
    const auto& n = tree.node(i);
    if (n.children.empty()) {
      if (!n.reward) throw ContractError("leaf node " + std::to_string(i) + " has no reward");
      sum[i] = *n.reward;
      count[i] = 1.0;
      best[i] = *n.reward;
      continue;
    }
    best[i] = best[n.children.front()];
    for (NodeId c : n.children) {
      sum[i] += sum[c];
      count[i] += count[c];
      best[i] = std::max(best[i], best[c]);
    }
  }
  if (scheme == LabelScheme::outcome) return best;
  for (std::size_t i = 0; i < tree.size(); ++i) sum[i] /= count[i];
  return sum;
}

namespace {

void append_samples(const ExplorationTree& tree, const std::vector<double>& labels, QDataset& out) {
  for (NodeId id : tree.preorder()) {
    const auto& n = tree.node(id);
    if (!n.parent) continue;
    out.samples.push_back({tree.node(*n.parent).state(), *n.action, labels[id]});
  }
}

}  // namespace

QDataset collect_q_dataset(const std::vector<ExplorationTree>& trees) {
  QDataset out;
  for (const auto& tree : trees) {
    if (!tree.normalized)
      throw ContractError("tree for task '" + tree.task().id + "' has not been through estimate_q");
    std::vector<double> labels(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) labels[i] = tree.node(i).norm_q;
    append_samples(tree, labels, out);
  }
  return out;
}

QDataset collect_labeled_dataset(const std::vector<ExplorationTree>& trees, LabelScheme scheme) {
  QDataset out;
  for (const auto& tree : trees) append_samples(tree, label_tree(tree, scheme), out);
  return out;
}

void QDataset::save(const std::filesystem::path& path) const {
  std::ostringstream os;
  os << "qlass-qdataset 1\n";
  for (const auto& s : samples) os << s.state.key() << '\t' << s.action << '\t' << format_double(s.q) << '\n';
  write_file_atomic(path, os.str());
}

QDataset QDataset::load(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  if (!std::getline(is, line) || line != "qlass-qdataset 1")
    throw DataValidationError(path.string() + ": not a version-1 q-dataset file");
  QDataset d;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f.size() != 3) throw DataValidationError(path.string() + ": expected 3 tab-separated fields");
    d.samples.push_back({HistoryState::from_key(f[0]), f[1], parse_double(f[2])});
  }
  return d;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json node_to_json(const ExplorationTree& tree, NodeId id) {
  const auto& n = tree.node(id);
  ordered_json j;
  j["depth"] = n.depth;
  j["action"] = n.action ? ordered_json(*n.action) : ordered_json(nullptr);
  j["reward"] = n.reward ? ordered_json(*n.reward) : ordered_json(nullptr);
  j["raw_q"] = n.raw_q;
  j["norm_q"] = n.norm_q;
  j["expandable"] = n.expandable;
  j["terminal"] = n.terminal;
  j["children"] = ordered_json::array();
  for (NodeId c : n.children) j["children"].push_back(node_to_json(tree, c));
  return j;
}

void node_from_json(const nlohmann::json& j, ExplorationTree& tree, NodeId id, const Environment& env) {
  auto& n = tree.node(id);
  n.raw_q = j.at("raw_q").get<double>();
  n.norm_q = j.at("norm_q").get<double>();
  n.expandable = j.at("expandable").get<bool>();
  n.terminal = j.at("terminal").get<bool>();
  if (!j.at("reward").is_null()) n.reward = j["reward"].get<double>();
  for (const auto& cj : j.at("children")) {
    const std::string action = cj.at("action").get<std::string>();
    EnvState next = tree.node(id).env;
    env.step(next, action);
    const NodeId c = tree.add_child(id, action, std::move(next), std::nullopt, false);
    if (tree.node(c).depth != cj.at("depth").get<int>())
      throw DataValidationError("tree dump depth mismatch at action '" + action + "'");
    node_from_json(cj, tree, c, env);
  }
  auto& after = tree.node(id);
  if (!after.expandable) after.children_when_stopped = after.children.size();
}

}  // namespace

std::string tree_to_json(const ExplorationTree& tree) {
  ordered_json j;
  j["task_id"] = tree.task().id;
  j["gamma"] = tree.params().gamma;
  j["max_depth"] = tree.params().max_depth;
  j["max_width"] = tree.params().max_width;
  j["node_budget"] = tree.params().node_budget;
  j["temperature"] = tree.params().temperature;
  j["rollouts_used"] = tree.rollouts_used;
  j["normalized"] = tree.normalized;
  j["root"] = node_to_json(tree, ExplorationTree::root());
  return j.dump(1);
}

ExplorationTree tree_from_json(const std::string& text, const Environment& env) {
  try {
    const auto j = nlohmann::json::parse(text);
    TreeParams p;
    p.gamma = j.at("gamma").get<double>();
    p.max_depth = j.at("max_depth").get<int>();
    p.max_width = j.at("max_width").get<int>();
    p.node_budget = j.at("node_budget").get<int>();
    p.temperature = j.at("temperature").get<double>();
    const TaskSpec& task = env.find_task(j.at("task_id").get<std::string>());
    ExplorationTree tree(task, p, env.reset(task));
    tree.rollouts_used = j.at("rollouts_used").get<int>();
    node_from_json(j.at("root"), tree, ExplorationTree::root(), env);
    tree.q_estimated = tree.normalized = j.at("normalized").get<bool>();
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw DataValidationError(std::string("malformed tree dump: ") + e.what());
  }
}

}  // namespace qlass
