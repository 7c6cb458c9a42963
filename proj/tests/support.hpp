#pragma once

// Fixtures and independent oracles shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "qlass/env.hpp"
#include "qlass/qfn.hpp"
#include "qlass/tree.hpp"

namespace qlass::testing {

/// One decision: "a" ends with reward `ra`, "b" with reward `rb`.
/// With `chain_len` > 1 the episode first walks through `chain_len - 1`
/// forced "go" steps.
class TwoArmEnv final : public Environment {
 public:
  explicit TwoArmEnv(double ra = 0.0, double rb = 1.0, int chain_len = 1) : ra_(ra), rb_(rb), chain_(chain_len) {
    TaskSpec t;
    t.id = "arm";
    t.description = "pick the better arm";
    t.max_steps = chain_len;
    t.params = {chain_len};
    tasks_.push_back(t);
  }
  std::string_view kind() const override { return "twoarm"; }
  std::optional<Trajectory> solve(const TaskSpec& task) const override {
    std::vector<ActionToken> acts(chain_ - 1, "go");
    acts.push_back(rb_ >= ra_ ? "b" : "a");
    return play(*this, task, acts);
  }

 protected:
  void validate_task(const TaskSpec&) const override {}
  std::vector<int> initial_internal(const TaskSpec&) const override { return {0}; }
  std::vector<ActionToken> enumerate_actions(const TaskSpec&, std::span<const int> in) const override {
    if (in[0] < chain_ - 1) return {"go"};
    return {"a", "b"};
  }
  Transition apply(const TaskSpec&, std::vector<int>& in, std::string_view action) const override {
    if (in[0] < chain_ - 1) {
      ++in[0];
      return {"walked", 0.0, false};
    }
    if (action == "a") return {"arm a", ra_, true};
    return {"arm b", rb_, true};
  }

 private:
  double ra_, rb_;
  int chain_;
};

/// Three-step episodes over actions {x, y}; taking "y" at the second step
/// throws, imitating an environment crash.
class FlakyEnv final : public Environment {
 public:
  FlakyEnv() {
    TaskSpec t;
    t.id = "flaky";
    t.description = "avoid the crash";
    t.max_steps = 3;
    tasks_.push_back(t);
  }
  std::string_view kind() const override { return "flaky"; }
  std::optional<Trajectory> solve(const TaskSpec& task) const override { return play(*this, task, {"x", "x", "x"}); }

 protected:
  void validate_task(const TaskSpec&) const override {}
  std::vector<int> initial_internal(const TaskSpec&) const override { return {0}; }
  std::vector<ActionToken> enumerate_actions(const TaskSpec&, std::span<const int>) const override {
    return {"x", "y"};
  }
  Transition apply(const TaskSpec&, std::vector<int>& in, std::string_view action) const override {
    if (in[0] == 1 && action == "y") throw IoError("simulated environment crash");
    ++in[0];
    return {"ok", in[0] == 3 ? 1.0 : 0.0, in[0] == 3};
  }
};

/// Random hand-built tree of at most `max_nodes` nodes. Every node carries a
/// reward in [0,1]; internal rewards are zeroed when `sparse`.
inline ExplorationTree random_tree(Rng& rng, int max_nodes, double gamma, bool sparse = false) {
  TreeParams params;
  params.gamma = gamma;
  ExplorationTree tree("random tree", params);
  const int target = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_nodes)));
  std::vector<NodeId> open = {ExplorationTree::root()};
  int made = 1;
  while (made < target && !open.empty()) {
    const std::size_t pick = rng.below(open.size());
    const NodeId parent = open[pick];
    const auto fanout = tree.node(parent).children.size();
    if (fanout >= 4) {
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(pick));
      continue;
    }
    const double reward = sparse ? 0.0 : rng.uniform();
    const NodeId child =
        tree.add_child(parent, "act" + std::to_string(fanout), "obs" + std::to_string(made), reward);
    open.push_back(child);
    ++made;
  }
  // Leaves get terminal rewards.
  for (NodeId id = 1; id < tree.size(); ++id) {
    auto& n = tree.node(id);
    if (n.children.empty()) {
      n.reward = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
      n.terminal = true;
    }
  }
  return tree;
}

/// Plain recursive evaluation of q = r + gamma * max(child q), leaves keep r.
inline double reference_q(const ExplorationTree& tree, NodeId id, double gamma, std::vector<double>& out) {
  const auto& n = tree.node(id);
  const double r = n.reward.value_or(0.0);
  double q = r;
  if (!n.children.empty()) {
    double best = -INFINITY;
    for (NodeId c : n.children) best = std::max(best, reference_q(tree, c, gamma, out));
    q = r + gamma * best;
  }
  out[id] = q;
  return q;
}

inline std::vector<double> reference_backup(const ExplorationTree& tree, double gamma) {
  std::vector<double> out(tree.size(), 0.0);
  reference_q(tree, ExplorationTree::root(), gamma, out);
  return out;
}

/// Leaf rewards of the subtree under `id`, collected recursively.
inline void subtree_leaf_rewards(const ExplorationTree& tree, NodeId id, std::vector<double>& out) {
  const auto& n = tree.node(id);
  if (n.children.empty()) {
    out.push_back(n.reward.value_or(0.0));
    return;
  }
  for (NodeId c : n.children) subtree_leaf_rewards(tree, c, out);
}

/// First violated construction invariant of a built tree, or "" if none.
inline std::string structure_violation(const ExplorationTree& tree, const TreeParams& p) {
  if (tree.rollouts_used > p.node_budget) return "rollout budget exceeded";
  for (NodeId id = 0; id < tree.size(); ++id) {
    const auto& n = tree.node(id);
    const std::string at = "node " + std::to_string(id) + ": ";
    if (n.children.size() > static_cast<std::size_t>(p.max_width)) return at + "wider than max_width";
    if (n.depth > p.max_depth && n.rollouts_started > 0) return at + "rollout started below max_depth";
    if (!n.expandable) {
      if (!n.children_when_stopped) return at + "flag without recorded child count";
      if (n.children.size() != *n.children_when_stopped) return at + "children added after the stop flag";
    }
    if (n.terminal && !n.children.empty()) return at + "terminal node has children";
    if (n.depth > tree.task().max_steps) return at + "deeper than the step limit";
    std::set<ActionToken> actions;
    for (NodeId c : n.children) {
      const auto& ch = tree.node(c);
      if (ch.depth != n.depth + 1 || ch.parent != id) return at + "bad child link";
      if (!actions.insert(*ch.action).second) return at + "duplicate child action";
      if (ch.state().depth() != n.state().depth() + 1 ||
          !(ch.state() == n.state().extended(*ch.action, ch.state().steps().back().observation)))
        return at + "child state is not the parent state plus one step";
    }
  }
  return "";
}

/// Random text (state, action, target) samples for value-model checks.
inline QDataset random_dataset(Rng& rng, std::size_t n) {
  static const std::vector<std::string> verbs = {"search", "color", "size", "buy", "view", "back"};
  static const std::vector<std::string> words = {"red", "blue", "shirt", "lamp", "large", "tiny", "mug"};
  QDataset d;
  for (std::size_t i = 0; i < n; ++i) {
    HistoryState s("i am looking for a " + words[rng.below(words.size())] + " " + words[rng.below(words.size())]);
    const auto depth = rng.below(4);
    for (std::uint64_t t = 0; t < depth; ++t)
      s.append(verbs[rng.below(verbs.size())] + " " + words[rng.below(words.size())], "saw " + words[rng.below(words.size())]);
    d.samples.push_back({s, verbs[rng.below(verbs.size())] + " " + words[rng.below(words.size())], rng.uniform()});
  }
  return d;
}

}  // namespace qlass::testing
