#include <cmath>
#include <set>

#include "doctest.h"
#include "qlass/toy_envs.hpp"
#include "qlass/tree.hpp"
#include "support.hpp"

using namespace qlass;

namespace {

// root -> mid (r=0) -> leaf (r=1)
ExplorationTree chain() {
  ExplorationTree t("find the exit");
  const NodeId mid = t.add_child(ExplorationTree::root(), "walk", "hall", 0.0);
  t.add_child(mid, "open", "outside", 1.0, true);
  return t;
}

Policy uniform_policy() { return Policy(); }

void check_structure(const ExplorationTree& tree, const TreeParams& p) {
  CHECK(testing::structure_violation(tree, p) == "");
}

}  // namespace

TEST_CASE("chain backup and normalization") {
  ExplorationTree t = chain();
  const auto raw = backup_values(t, 0.9);
  CHECK(std::abs(raw[0] - 0.81) < 1e-12);
  CHECK(std::abs(raw[1] - 0.9) < 1e-12);
  CHECK(raw[2] == 1.0);
  estimate_q(t, 0.9);
  CHECK(t.node(0).norm_q == 0.0);
  CHECK(std::abs(t.node(1).norm_q - 0.47368421052631576) < 1e-9);
  CHECK(t.node(2).norm_q == 1.0);
  CHECK(std::abs(t.node(1).raw_q - 0.9) < 1e-12);
  CHECK_THROWS_AS(estimate_q(t, 0.9), ContractError);
}

TEST_CASE("all-zero leaves normalize to zero") {
  ExplorationTree t("nothing works");
  const NodeId a = t.add_child(0, "a", "x", 0.0);
  t.add_child(a, "b", "y", 0.0, true);
  t.add_child(0, "c", "z", 0.0, true);
  estimate_q(t, 0.9);
  for (NodeId id = 0; id < t.size(); ++id) CHECK(t.node(id).norm_q == 0.0);
}

TEST_CASE("unset leaf reward is an error") {
  ExplorationTree t("broken");
  t.add_child(0, "a", "x", std::nullopt, true);
  CHECK_THROWS_AS(estimate_q(t, 0.9), ContractError);
}

TEST_CASE("Q dataset from the chain") {
  ExplorationTree t = chain();
  estimate_q(t, 0.9);
  const auto d = collect_q_dataset({t});
  REQUIRE(d.size() == 2);
  CHECK(d.samples[0].state == t.node(0).state());
  CHECK(d.samples[0].action == "walk");
  CHECK(std::abs(d.samples[0].q - 0.47368421052631576) < 1e-9);
  CHECK(d.samples[1].state == t.node(1).state());
  CHECK(d.samples[1].action == "open");
  CHECK(d.samples[1].q == 1.0);

  CHECK(collect_q_dataset({}).empty());
  const auto twice = collect_q_dataset({t, t});
  REQUIRE(twice.size() == 4);
  CHECK(twice.samples[0] == twice.samples[2]);
  CHECK(twice.samples[1] == twice.samples[3]);
  CHECK_THROWS_AS(collect_q_dataset({chain()}), ContractError);
}

TEST_CASE("Q dataset save and load round-trip") {
  ExplorationTree t = chain();
  estimate_q(t, 0.9);
  const auto d = collect_q_dataset({t});
  const auto path = std::filesystem::temp_directory_path() / "qlass_qdataset.tsv";
  d.save(path);
  CHECK(QDataset::load(path).samples == d.samples);
  std::filesystem::remove(path);
}

TEST_CASE("label schemes") {
  ExplorationTree fork("fork");
  fork.add_child(0, "good", "win", 1.0, true);
  fork.add_child(0, "bad", "lose", 0.0, true);
  CHECK(label_tree(fork, LabelScheme::avg_reward)[0] == 0.5);
  CHECK(label_tree(fork, LabelScheme::outcome)[0] == 1.0);

  ExplorationTree line("line");
  const NodeId a = line.add_child(0, "a", "x", 0.0);
  const NodeId b = line.add_child(a, "b", "y", 0.0);
  line.add_child(b, "c", "z", 0.8, true);
  for (double v : label_tree(line, LabelScheme::outcome)) CHECK(v == 0.8);
  for (double v : label_tree(line, LabelScheme::avg_reward)) CHECK(v == 0.8);

  ExplorationTree c = chain();
  const auto labels = label_tree(c, LabelScheme::q_value);
  estimate_q(c, 0.9);
  for (NodeId id = 0; id < c.size(); ++id) CHECK(labels[id] == c.node(id).norm_q);
  CHECK_THROWS(label_scheme_from_string("median"));
  CHECK(label_scheme_from_string(to_string(LabelScheme::avg_reward)) == LabelScheme::avg_reward);
}

TEST_CASE("labels agree with recursive subtree oracles on random trees") {
  Rng rng(21);
  for (int rep = 0; rep < 100; ++rep) {
    const auto t = testing::random_tree(rng, 60, 0.9);
    const auto avg = label_tree(t, LabelScheme::avg_reward);
    const auto out = label_tree(t, LabelScheme::outcome);
    for (NodeId id = 0; id < t.size(); ++id) {
      std::vector<double> leaves;
      testing::subtree_leaf_rewards(t, id, leaves);
      double sum = 0.0;
      for (double v : leaves) sum += v;
      CHECK(std::abs(avg[id] - sum / static_cast<double>(leaves.size())) < 1e-12);
      CHECK(out[id] == *std::max_element(leaves.begin(), leaves.end()));
    }
  }
}

TEST_CASE("backup matches an independent recursive evaluator") {
  Rng rng(7);
  for (int rep = 0; rep < 200; ++rep) {
    const double gamma = std::vector<double>{0.5, 0.9, 1.0}[rng.below(3)];
    ExplorationTree t = testing::random_tree(rng, 200, gamma);
    const auto expect = testing::reference_backup(t, gamma);
    const auto got = backup_values(t, gamma);
    for (NodeId id = 0; id < t.size(); ++id) CHECK(std::abs(got[id] - expect[id]) <= 1e-9);

    estimate_q(t, gamma);
    double lo = INFINITY, hi = -INFINITY;
    for (NodeId id = 0; id < t.size(); ++id) {
      lo = std::min(lo, t.node(id).norm_q);
      hi = std::max(hi, t.node(id).norm_q);
      CHECK(t.node(id).norm_q >= 0.0);
      CHECK(t.node(id).norm_q <= 1.0);
    }
    const bool distinct = *std::max_element(expect.begin(), expect.end()) > *std::min_element(expect.begin(), expect.end());
    CHECK(lo == 0.0);
    CHECK(hi == (distinct ? 1.0 : 0.0));
  }
}

TEST_CASE("strictly increasing leaf transforms keep the argmax child when gamma is 1") {
  Rng rng(13);
  for (int rep = 0; rep < 100; ++rep) {
    ExplorationTree t = testing::random_tree(rng, 80, 1.0, true);
    ExplorationTree u = t;
    for (NodeId id = 0; id < u.size(); ++id) {
      auto& n = u.node(id);
      if (n.children.empty()) n.reward = std::exp(3.0 * *n.reward) + 2.0 * *n.reward;
    }
    // Values are recomputed without normalization so the transform can leave [0,1].
    const auto qt = testing::reference_backup(t, 1.0);
    const auto qu = testing::reference_backup(u, 1.0);
    for (NodeId id = 0; id < t.size(); ++id) {
      const auto& kids = t.node(id).children;
      if (kids.empty()) continue;
      auto best = [&](const std::vector<double>& q) {
        NodeId b = kids[0];
        for (NodeId c : kids)
          if (q[c] > q[b]) b = c;
        return q[b];
      };
      // The max-valued children coincide.
      for (NodeId c : kids) CHECK((qt[c] == best(qt)) == (qu[c] == best(qu)));
    }
  }
}

TEST_CASE("width-1 depth-1 tree under a deterministic policy is a single branch") {
  EnvConfig ec;
  ec.num_tasks = 5;
  const auto env = make_environment(ec);
  const Policy p = bc_train(*env, ExpertDataset::from_tasks(env->tasks()), BcConfig{});
  const auto& task = env->tasks()[0];
  Rng rng(1);
  const auto tree = build_tree(p, *env, task, std::nullopt, TreeParams{1, 1, 0.9, 24, 0.0}, rng);
  CHECK(tree.rollouts_used == 1);
  CHECK(tree.size() == task.expert->steps.size() + 1);
  for (NodeId id = 0; id + 1 < tree.size(); ++id) CHECK(tree.node(id).children.size() == 1);
}

TEST_CASE("a zero-reward first rollout flags its depth-1 node") {
  EnvConfig ec;
  const auto env = make_environment(ec);
  const auto& task = env->tasks()[0];
  bool found = false;
  for (std::uint64_t seed = 0; seed < 50 && !found; ++seed) {
    Rng rng(seed);
    const auto tree = build_tree(uniform_policy(), *env, task, std::nullopt, TreeParams{3, 3, 0.9, 1, 0.7}, rng);
    REQUIRE(tree.rollouts_used == 1);
    std::vector<double> leaves;
    testing::subtree_leaf_rewards(tree, 0, leaves);
    if (leaves[0] != 0.0) continue;
    found = true;
    const auto& first = tree.node(tree.node(0).children[0]);
    CHECK_FALSE(first.expandable);
    CHECK(first.children_when_stopped == 1u);
    CHECK(first.rollouts_started == 0);
  }
  CHECK(found);
}

TEST_CASE("flagged nodes are never expanded again") {
  // A policy that always stops yields only zero-reward rollouts.
  const KeyDoorGrid env(3, 1, 1, 0, 0, 2, 2);
  const auto& task = env.tasks()[0];
  Policy p;
  p.set_logit(HistoryState(task.description).key(), "stop", 100.0);
  Rng rng(3);
  const auto tree = build_tree(p, env, task, std::nullopt, TreeParams{3, 3, 0.9, 10, 0.7}, rng);
  REQUIRE(tree.node(0).children.size() == 1);
  const auto& stop = tree.node(tree.node(0).children[0]);
  CHECK(*stop.action == "stop");
  CHECK_FALSE(stop.expandable);
  CHECK(stop.rollouts_started == 0);
  check_structure(tree, tree.params());
}

TEST_CASE("zero budget leaves the expert branch or a bare root") {
  EnvConfig ec;
  const auto env = make_environment(ec);
  const auto& task = env->tasks()[0];
  Rng rng(0);
  const TreeParams p{3, 3, 0.9, 0, 0.7};
  const auto bare = build_tree(uniform_policy(), *env, task, std::nullopt, p, rng);
  CHECK(bare.size() == 1);
  const auto with_expert = build_tree(uniform_policy(), *env, task, task.expert, p, rng);
  CHECK(with_expert.size() == task.expert->steps.size() + 1);
  CHECK(with_expert.rollouts_used == 0);
}

TEST_CASE("expert branch is part of the tree") {
  EnvConfig ec;
  ec.kind = "shop";
  ec.size = 6;
  ec.num_tasks = 10;
  const auto env = make_environment(ec);
  Rng rng(2);
  for (const auto& task : env->tasks()) {
    const auto tree = build_tree(uniform_policy(), *env, task, task.expert, TreeParams{}, rng);
    NodeId cur = 0;
    for (const auto& s : task.expert->steps) {
      const auto next = tree.find_child(cur, s.action);
      REQUIRE(next);
      cur = *next;
    }
    CHECK(tree.node(cur).terminal);
    CHECK(*tree.node(cur).reward == 1.0);
  }
}

TEST_CASE("randomized construction invariants") {
  Rng meta(99);
  for (int rep = 0; rep < 60; ++rep) {
    EnvConfig ec;
    ec.kind = meta.below(2) ? "shop" : "keydoor";
    ec.size = ec.kind == "shop" ? 4 : 3;
    ec.num_tasks = 10;
    ec.seed = meta.below(1000);
    const auto env = make_environment(ec);
    const auto& task = env->tasks()[meta.below(env->tasks().size())];
    const TreeParams p{1 + static_cast<int>(meta.below(8)), 1 + static_cast<int>(meta.below(4)), 0.9,
                       static_cast<int>(meta.below(40)), 0.7};
    Rng rng(meta.next_u64());
    const auto tree =
        build_tree(uniform_policy(), *env, task, meta.below(2) ? task.expert : std::nullopt, p, rng);
    check_structure(tree, p);
  }
}

TEST_CASE("environment failures surface as partial trees") {
  const testing::FlakyEnv env;
  Policy p;
  const HistoryState s0(env.tasks()[0].description);
  const auto s1 = s0.extended("x", "ok");
  p.set_logit(s0.key(), "x", 50.0);
  p.set_logit(s1.key(), "y", 50.0);
  Rng rng(0);
  try {
    build_tree(p, env, env.tasks()[0], std::nullopt, TreeParams{}, rng);
    FAIL("expected a partial-tree error");
  } catch (const PartialTreeError& e) {
    CHECK(e.category() == "partial-tree");
    REQUIRE(e.partial);
    CHECK(e.partial->size() >= 1);
  }
}

TEST_CASE("tree dump round-trip") {
  EnvConfig ec;
  ec.kind = "shop";
  ec.num_tasks = 5;
  const auto env = make_environment(ec);
  Rng rng(4);
  for (const auto& task : env->tasks()) {
    auto tree = build_tree(uniform_policy(), *env, task, task.expert, TreeParams{}, rng);
    estimate_q(tree, 0.9);
    const auto text = tree_to_json(tree);
    const auto back = tree_from_json(text, *env);
    CHECK(tree_to_json(back) == text);
    CHECK(collect_q_dataset({back}).samples == collect_q_dataset({tree}).samples);
    // Reloaded ids follow pre-order, so compare through the pre-order datasets.
    for (auto scheme : {LabelScheme::q_value, LabelScheme::avg_reward, LabelScheme::outcome})
      CHECK(collect_labeled_dataset({back}, scheme).samples == collect_labeled_dataset({tree}, scheme).samples);
  }
  CHECK_THROWS_AS(tree_from_json("{\"root\": 3}", *env), DataValidationError);
}

TEST_CASE("tree dump field names") {
  ExplorationTree t = chain();
  estimate_q(t, 0.9);
  const auto text = tree_to_json(t);
  for (const char* field : {"\"depth\"", "\"action\"", "\"reward\"", "\"raw_q\"", "\"norm_q\"", "\"expandable\"",
                            "\"terminal\"", "\"children\""})
    CHECK(text.find(field) != std::string::npos);
}
