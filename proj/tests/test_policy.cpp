#include <cmath>

#include "doctest.h"
#include "qlass/policy.hpp"
#include "qlass/search.hpp"
#include "qlass/toy_envs.hpp"
#include "support.hpp"

using namespace qlass;

namespace {

ExpertDataset arm_data(const testing::TwoArmEnv& env, const std::vector<ActionToken>& picks) {
  ExpertDataset d;
  for (const auto& a : picks) d.records.push_back({env.tasks()[0], play(env, env.tasks()[0], {a})});
  return d;
}

const std::vector<ActionToken> kAB = {"a", "b"};

}  // namespace

TEST_CASE("BC on a single decision approaches the smoothed maximum") {
  const testing::TwoArmEnv env;
  const auto data = arm_data(env, {"b"});
  BcConfig cfg;
  cfg.epochs = 200;
  const Policy p = bc_train(env, data, cfg);
  const auto probs = p.probabilities(HistoryState(env.tasks()[0].description), kAB, 1.0);
  // With smoothing eps the likelihood is maximized as P(b) -> 1 - eps/2.
  CHECK(probs[1] >= 0.99);
  CHECK(probs[1] <= 1.0 - cfg.smoothing / 2 + 1e-12);
}

TEST_CASE("uniform policy NLL over two actions is ln 2") {
  const testing::TwoArmEnv env;
  CHECK(std::abs(policy_nll(Policy(), env, arm_data(env, {"b"})) - std::log(2.0)) < 1e-12);
}

TEST_CASE("uniform policy NLL over k actions is ln k") {
  const KeyDoorGrid env(3, 1, 1, 0, 0, 2, 2);
  ExpertDataset d;
  d.records.push_back({env.tasks()[0], play(env, env.tasks()[0], {"up"})});
  CHECK(std::abs(policy_nll(Policy(), env, d) - std::log(7.0)) < 1e-12);
}

TEST_CASE("BC rejects an empty dataset") {
  const testing::TwoArmEnv env;
  CHECK_THROWS_AS(bc_train(env, ExpertDataset{}, BcConfig{}), DataValidationError);
}

TEST_CASE("BC rejects a record that does not replay") {
  const testing::TwoArmEnv env;
  auto data = arm_data(env, {"b"});
  data.records[0].trajectory.steps[0].observation = "something else";
  CHECK_THROWS_AS(bc_train(env, data, BcConfig{}), DataValidationError);
}

TEST_CASE("temperature 0 takes the argmax with lexicographic ties") {
  const HistoryState s("x");
  Policy p;
  p.set_logit(s.key(), "a", 2.0);
  p.set_logit(s.key(), "b", 1.0);
  Rng rng(1);
  CHECK(p.sample_action(s, kAB, 0.0, rng) == "a");
  Policy q;
  const std::vector<ActionToken> zyx = {"z", "y", "x"};
  CHECK(q.sample_action(s, zyx, 0.0, rng) == "x");
  CHECK_THROWS_AS(q.sample_action(s, zyx, -1.0, rng), ContractError);
}

TEST_CASE("temperature 0.7 sampling matches the softmax frequencies") {
  const HistoryState s("x");
  Policy p(0.0);
  const std::vector<ActionToken> acts = {"a", "b", "c"};
  const std::vector<double> z = {1.0, 0.3, -0.5};
  for (std::size_t i = 0; i < acts.size(); ++i) p.set_logit(s.key(), acts[i], z[i]);
  double norm = 0.0;
  std::vector<double> expect(3);
  for (std::size_t i = 0; i < 3; ++i) norm += expect[i] = std::exp(z[i] / 0.7);
  for (auto& e : expect) e /= norm;
  Rng rng(5);
  const int n = 10000;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < n; ++i) {
    const auto a = p.sample_action(s, acts, 0.7, rng);
    ++counts[static_cast<std::size_t>(a[0] - 'a')];
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const double sigma = std::sqrt(n * expect[i] * (1 - expect[i]));
    CHECK(std::abs(counts[i] - n * expect[i]) <= 3 * sigma);
  }
}

TEST_CASE("candidate sets") {
  const HistoryState s("x");
  const Policy p;
  Rng r1(3), r2(3);
  CHECK(p.sample_candidate_set(s, kAB, 0.7, 2, r1).size() == 2);
  Rng r3(9), r4(9);
  CHECK(p.sample_candidate_set(s, kAB, 0.7, 1, r3) == std::vector<ActionToken>{p.sample_action(s, kAB, 0.7, r4)});
  const std::vector<ActionToken> only = {"go"};
  CHECK(p.sample_candidate_set(s, only, 0.7, 4, r1) == std::vector<ActionToken>(4, "go"));
  CHECK_THROWS_AS(p.sample_candidate_set(s, kAB, 0.7, 0, r2), ContractError);
}

TEST_CASE("NLL of a deterministic policy on its own data is 0") {
  const testing::TwoArmEnv env;
  Policy p(0.0);
  const HistoryState s(env.tasks()[0].description);
  p.set_logit(s.key(), "b", 1000.0);
  CHECK(policy_nll(p, env, arm_data(env, {"b"})) == 0.0);
}

TEST_CASE("NLL of a mixed dataset matches direct summation") {
  const testing::TwoArmEnv env;
  Policy p(1e-3);
  const HistoryState s(env.tasks()[0].description);
  p.set_logit(s.key(), "a", 0.4);
  p.set_logit(s.key(), "b", -0.2);
  const double pa = std::exp(0.4) / (std::exp(0.4) + std::exp(-0.2));
  const double sa = (1 - 1e-3) * pa + 1e-3 / 2, sb = (1 - 1e-3) * (1 - pa) + 1e-3 / 2;
  const double expect = (-std::log(sa) * 2 - std::log(sb)) / 3;
  CHECK(std::abs(policy_nll(p, env, arm_data(env, {"a", "b", "a"})) - expect) < 1e-12);
}

TEST_CASE("zero-probability expert action without smoothing gives infinite NLL") {
  const testing::TwoArmEnv env;
  Policy p(0.0);
  p.set_logit(HistoryState(env.tasks()[0].description).key(), "a", 1e6);
  CHECK(std::isinf(policy_nll(p, env, arm_data(env, {"b"}))));
}

TEST_CASE("BC NLL decreases weakly across epochs and is deterministic") {
  EnvConfig ec;
  ec.num_tasks = 30;
  const auto env = make_environment(ec);
  const auto data = ExpertDataset::from_tasks(env->tasks());
  BcReport rep;
  BcConfig cfg;
  cfg.epochs = 8;
  const Policy p = bc_train(*env, data, cfg, &rep);
  REQUIRE(rep.epoch_nll.size() == 8);
  CHECK(rep.epoch_nll[0] <= rep.initial_nll);
  for (std::size_t i = 1; i < rep.epoch_nll.size(); ++i) CHECK(rep.epoch_nll[i] <= rep.epoch_nll[i - 1] + 1e-12);
  CHECK(bc_train(*env, data, cfg) == p);
}

TEST_CASE("probabilities sum to one at every temperature") {
  Rng rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    const HistoryState s("state " + std::to_string(rep));
    Policy p(rng.uniform() * 0.1);
    std::vector<ActionToken> acts;
    const auto k = 1 + rng.below(8);
    for (std::uint64_t i = 0; i < k; ++i) {
      acts.push_back("act" + std::to_string(i));
      p.set_logit(s.key(), acts.back(), rng.normal() * 5);
    }
    for (double t : {0.0, 0.3, 0.7, 1.0, 4.0}) {
      double sum = 0.0;
      for (double v : p.probabilities(s, acts, t)) sum += v;
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("analytic NLL gradient matches central differences") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<BcSample> samples;
    Policy p(0.01);
    for (int s = 0; s < 3; ++s) {
      BcSample b;
      b.state = HistoryState("s" + std::to_string(s));
      const auto k = 2 + rng.below(4);
      for (std::uint64_t i = 0; i < k; ++i) {
        b.legal.push_back("a" + std::to_string(i));
        p.set_logit(b.state.key(), b.legal.back(), rng.normal());
      }
      for (int v = 0; v < 2; ++v) {
        b.expert_index = rng.below(k);
        samples.push_back(b);
      }
    }
    const auto grad = policy_nll_gradient(p, samples);
    const double n = static_cast<double>(samples.size());
    const double eps = 1e-6;
    for (const auto& [key, row] : grad) {
      for (const auto& [action, g] : row) {
        Policy hi = p, lo = p;
        hi.set_logit(key, action, p.logit(key, action) + eps);
        lo.set_logit(key, action, p.logit(key, action) - eps);
        const double numeric = (policy_nll(hi, samples) - policy_nll(lo, samples)) * n / (2 * eps);
        CHECK(std::abs(numeric - g) / std::max({std::abs(numeric), std::abs(g), 1e-8}) < 1e-5);
      }
    }
  }
}

TEST_CASE("policy save and load round-trip") {
  EnvConfig ec;
  const auto env = make_environment(ec);
  const Policy p = bc_train(*env, ExpertDataset::from_tasks(env->tasks()), BcConfig{});
  const auto path = std::filesystem::temp_directory_path() / "qlass_policy_roundtrip.txt";
  p.save(path);
  CHECK(Policy::load(path) == p);
  std::filesystem::remove(path);
}

TEST_CASE("BC with full coverage reproduces the expert greedily") {
  EnvConfig ec;
  ec.num_tasks = 40;
  const auto env = make_environment(ec);
  const auto data = ExpertDataset::from_tasks(env->tasks());
  const Policy p = bc_train(*env, data, BcConfig{});
  CHECK(policy_nll(p, *env, data) <= policy_nll(Policy(), *env, data));
  std::size_t same = 0, total = 0;
  for (const auto& t : env->tasks()) {
    const auto g = greedy_rollout(p, *env, t, 100);
    for (std::size_t i = 0; i < t.expert->steps.size(); ++i) {
      ++total;
      if (i < g.steps.size() && g.steps[i].action == t.expert->steps[i].action) ++same;
    }
  }
  CHECK(static_cast<double>(same) >= 0.99 * static_cast<double>(total));
}
