#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qlass/env.hpp"
#include "qlass/policy.hpp"

namespace qlass {

using NodeId = std::size_t;

struct TreeParams {
  int max_depth = 3;        // D
  int max_width = 3;        // W
  double gamma = 0.9;
  int node_budget = 24;     // rollouts per tree
  double temperature = 0.7;
};

struct TreeNode {
  /// Episode state after this node's action (the root holds the bare task).
  EnvState env;
  std::optional<ActionToken> action;
  /// Immediate reward r_t; unset only in hand-built trees.
  std::optional<double> reward;
  int depth = 0;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  double raw_q = 0.0;
  double norm_q = 0.0;
  bool expandable = true;
  bool terminal = false;
  /// Child count at the moment the stop-expansion flag was set.
  std::optional<std::size_t> children_when_stopped;
  /// Number of rollouts started from this node during construction.
  int rollouts_started = 0;

  const HistoryState& state() const noexcept { return env.history; }
};

/// Arena-backed exploration tree. Node 0 is the root.
class ExplorationTree {
 public:
  ExplorationTree(TaskSpec task, TreeParams params, EnvState root_state);
  /// A root over a bare description; for hand-built trees.
  explicit ExplorationTree(std::string description, TreeParams params = {});

  const TaskSpec& task() const noexcept { return task_; }
  const TreeParams& params() const noexcept { return params_; }
  static constexpr NodeId root() noexcept { return 0; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const TreeNode& node(NodeId id) const { return nodes_.at(id); }
  TreeNode& node(NodeId id) { return nodes_.at(id); }

  std::optional<NodeId> find_child(NodeId parent, const ActionToken& action) const;
  /// Adds a child; throws ContractError on a duplicate action.
  NodeId add_child(NodeId parent, const ActionToken& action, EnvState state, std::optional<double> reward,
                   bool terminal);
  /// Convenience for hand-built trees: the child state extends the parent's
  /// history by (action, observation).
  NodeId add_child(NodeId parent, const ActionToken& action, const Observation& observation,
                   std::optional<double> reward, bool terminal = false);

  std::vector<NodeId> preorder() const;

  int rollouts_used = 0;
  bool q_estimated = false;
  bool normalized = false;

 private:
  TaskSpec task_;
  TreeParams params_;
  std::vector<TreeNode> nodes_;
};

/// Thrown when the environment fails mid-rollout; carries the tree built so far.
struct PartialTreeError : Error {
  PartialTreeError(const std::string& m, std::shared_ptr<const ExplorationTree> t)
      : Error("partial-tree", m), partial(std::move(t)) {}
  std::shared_ptr<const ExplorationTree> partial;
};

/// Grows an exploration tree by repeated policy rollouts.
///
/// The expert trajectory (if any) is merged into the bare root first and its
/// depth <= D nodes are queued behind the root. Popping an expandable,
/// non-terminal node with depth <= D and fewer than W children costs one
/// rollout from its state. The rollout is merged by action. It may branch off
/// an existing node only if that node is expandable and below width W;
/// anything past a blocked divergence point is discarded. Nodes deeper than D
/// never start rollouts. A rollout ending with nonzero reward enqueues its new
/// nodes of depth <= D; a zero-reward rollout flags the shallowest
/// single-child node on its path as not expandable. The popped node is
/// re-enqueued while it stays below width W. Halts when the queue is empty or
/// `node_budget` rollouts are spent.
ExplorationTree build_tree(const Policy& policy, const Environment& env, const TaskSpec& task,
                           const std::optional<Trajectory>& expert, const TreeParams& params, Rng& rng);

/// Bellman backup q = r + gamma * max(child q) with leaves keeping their own
/// reward, followed by min-max normalization over every node. A tree whose raw
/// values are all equal normalizes to all zeros. Must not be re-run on a
/// normalized tree.
void estimate_q(ExplorationTree& tree, double gamma);

/// Raw (pre-normalization) backup values indexed by node id.
std::vector<double> backup_values(const ExplorationTree& tree, double gamma);

enum class LabelScheme { q_value, avg_reward, outcome };
std::string to_string(LabelScheme s);
LabelScheme label_scheme_from_string(const std::string& name);

/// Per-node labels (indexed by node id) without mutating the tree.
/// q_value: normalized backup with the tree's gamma; avg_reward: mean leaf
/// reward over the subtree; outcome: max leaf reward over the subtree.
std::vector<double> label_tree(const ExplorationTree& tree, LabelScheme scheme);

struct QSample {
  HistoryState state;  // s_t, before the action
  ActionToken action;  // a_t
  double q = 0.0;
  bool operator==(const QSample&) const = default;
};

struct QDataset {
  std::vector<QSample> samples;
  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  void save(const std::filesystem::path& path) const;
  static QDataset load(const std::filesystem::path& path);
};

/// One sample per non-root node, (parent state, node action, normalized q),
/// in tree order then pre-order.
QDataset collect_q_dataset(const std::vector<ExplorationTree>& trees);
/// Same layout with labels from `label_tree`.
QDataset collect_labeled_dataset(const std::vector<ExplorationTree>& trees, LabelScheme scheme);

/// Nested JSON dump: {task_id, params..., root: {depth, action, reward, raw_q,
/// norm_q, expandable, terminal, children: [...]}}.
std::string tree_to_json(const ExplorationTree& tree);
/// Rebuilds node states by replaying actions in the environment.
ExplorationTree tree_from_json(const std::string& text, const Environment& env);

}  // namespace qlass
