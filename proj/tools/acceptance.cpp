// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails. `--only N` runs one criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../tests/support.hpp"
#include "CLI11.hpp"
#include "qlass/io.hpp"
#include "qlass/pipeline.hpp"
#include "qlass/search.hpp"
#include "qlass/toy_envs.hpp"

using namespace qlass;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path fresh_dir(const fs::path& root, const std::string& name) {
  const auto d = root / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Outcome backup_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double gamma = 0.5 + 0.5 * rng.uniform();
    const auto tree = testing::random_tree(rng, 200, gamma, rng.below(2) == 0);
    const auto expect = testing::reference_backup(tree, gamma);
    const auto got = backup_values(tree, gamma);
    for (NodeId id = 0; id < tree.size(); ++id) worst = std::max(worst, std::abs(got[id] - expect[id]));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0, "1000 trees, max |diff| " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome normalization() {
  Rng rng(1002);
  double worst = 0.0;
  int distinct_trees = 0, degenerate_trees = 0;
  for (int i = 0; i < 1000; ++i) {
    auto tree = testing::random_tree(rng, 200, 0.9);
    if (i % 4 == 0)
      for (NodeId id = 1; id < tree.size(); ++id) tree.node(id).reward = 0.0;
    const auto raw = backup_values(tree, 0.9);
    estimate_q(tree, 0.9);
    const bool distinct = *std::max_element(raw.begin(), raw.end()) > *std::min_element(raw.begin(), raw.end());
    double lo = INFINITY, hi = -INFINITY;
    for (NodeId id = 0; id < tree.size(); ++id) {
      lo = std::min(lo, tree.node(id).norm_q);
      hi = std::max(hi, tree.node(id).norm_q);
    }
    if (distinct) {
      ++distinct_trees;
      worst = std::max({worst, std::abs(lo), std::abs(hi - 1.0)});
    } else {
      ++degenerate_trees;
      worst = std::max({worst, std::abs(lo), std::abs(hi)});
    }
  }
  return {worst <= 1e-9 && degenerate_trees > 0, std::to_string(distinct_trees) + " spread / " +
                                                     std::to_string(degenerate_trees) + " degenerate trees, max err " +
                                                     fmt("%.3g", worst)};
}

Outcome build_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng meta(1003);
  std::map<std::string, std::unique_ptr<Environment>> envs;
  std::map<std::string, Policy> policies;
  for (const std::string kind : {"keydoor", "shop"}) {
    EnvConfig ec;
    ec.kind = kind;
    ec.size = kind == "shop" ? 5 : 4;
    ec.num_tasks = 30;
    ec.slack = 4;
    envs[kind] = make_environment(ec);
    ExpertDataset some;
    for (std::size_t i = 0; i < envs[kind]->tasks().size(); i += 3)
      some.records.push_back({envs[kind]->tasks()[i], *envs[kind]->tasks()[i].expert});
    policies[kind] = bc_train(*envs[kind], some, BcConfig{});
  }
  std::string first_failure;
  int failures = 0;
  for (int i = 0; i < 500; ++i) {
    const std::string kind = meta.below(2) ? "shop" : "keydoor";
    const auto& env = *envs[kind];
    const auto& task = env.tasks()[meta.below(env.tasks().size())];
    TreeParams p;
    p.max_depth = 1 + static_cast<int>(meta.below(8));
    p.max_width = 1 + static_cast<int>(meta.below(4));
    p.node_budget = static_cast<int>(meta.below(60));
    p.temperature = meta.below(4) == 0 ? 0.0 : 0.4 + meta.uniform();
    const Policy uniform;
    const Policy& pol = meta.below(2) ? policies[kind] : uniform;
    Rng rng(meta.next_u64());
    const auto tree = build_tree(pol, env, task, meta.below(2) ? task.expert : std::nullopt, p, rng);
    const auto v = testing::structure_violation(tree, p);
    if (!v.empty()) {
      ++failures;
      if (first_failure.empty()) first_failure = " first: run " + std::to_string(i) + " " + v;
    }
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0,
          "500 runs, " + std::to_string(failures) + " violations, " + fmt("%.2f", secs) + " s" + first_failure};
}

Outcome argmax_invariance() {
  EnvConfig ec;
  ec.kind = "shop";
  ec.size = 6;
  ec.num_tasks = 60;
  ec.num_heldout = 50;
  const auto env = make_environment(ec);
  ExpertDataset half;
  for (std::size_t i = 0; i < env->tasks().size(); i += 2)
    half.records.push_back({env->tasks()[i], *env->tasks()[i].expert});
  const Policy policy = bc_train(*env, half, BcConfig{});
  std::vector<ExplorationTree> trees;
  Rng trng(4);
  for (const auto& t : env->tasks()) {
    trees.push_back(build_tree(policy, *env, t, t.expert, TreeParams{}, trng));
    estimate_q(trees.back(), 0.9);
  }
  QTrainConfig qc;
  qc.kind = QfnKind::featurized;
  qc.seed = 4;
  const QFunction q = train_qfn(collect_q_dataset(trees), qc);

  // Random members of strictly increasing families.
  Rng rng(1004);
  std::vector<std::function<double(double)>> transforms;
  for (int i = 0; i < 10; ++i) {
    const double a = 0.5 + 4.0 * rng.uniform(), b = 4.0 * rng.uniform() - 2.0;
    switch (i % 5) {
      case 0: transforms.push_back([a, b](double x) { return a * x + b; }); break;
      case 1: transforms.push_back([a, b](double x) { return std::exp(a * x) + b; }); break;
      case 2: transforms.push_back([a](double x) { return x * x * x + a * x; }); break;
      case 3: transforms.push_back([a, b](double x) { return std::log1p(std::exp(a * x)) + b; }); break;
      default: transforms.push_back([a](double x) { return std::sinh(a * x); }); break;
    }
  }

  const SearchParams p{4, 1, 40, 0.8};
  const ActionScorer base = [&](const HistoryState& s, const ActionToken& a) { return q.predict(s, a); };
  int mismatches = 0, comparisons = 0;
  for (int e = 0; e < 50; ++e) {
    const auto& task = env->heldout_tasks()[static_cast<std::size_t>(e)];
    const std::uint64_t seed = mix_seed(1004, static_cast<std::uint64_t>(e));
    const auto ref = q_guided_generate(policy, base, *env, task, p, seed).best.steps;
    for (const auto& g : transforms) {
      const ActionScorer s = [&](const HistoryState& st, const ActionToken& a) { return g(q.predict(st, a)); };
      const auto got = q_guided_generate(policy, s, *env, task, p, seed).best.steps;
      ++comparisons;
      bool same = got.size() == ref.size();
      for (std::size_t k = 0; same && k < got.size(); ++k) same = got[k].action == ref[k].action;
      mismatches += !same;
    }
  }
  return {mismatches == 0, std::to_string(comparisons) + " episode/transform pairs, " + std::to_string(mismatches) +
                               " action-sequence mismatches"};
}

Outcome gradient_check() {
  Rng rng(1005);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int dim = 16 + static_cast<int>(rng.below(64));
    const int hidden = static_cast<int>(rng.below(6));
    const auto q = QFunction::make_featurized(dim, hidden, rng.next_u64(), 0.5);
    worst = std::max(worst, qfn_gradient_check(q, testing::random_dataset(rng, 1 + rng.below(12))));
  }
  return {worst < 1e-4, "20 instances, max relative error " + fmt("%.3g", worst)};
}

Outcome bc_sanity() {
  EnvConfig ec;
  ec.size = 5;
  ec.num_tasks = 60;
  const auto env = make_environment(ec);
  const auto data = ExpertDataset::from_tasks(env->tasks());
  const Policy policy = bc_train(*env, data, BcConfig{});
  const double nll = policy_nll(policy, *env, data);
  const double uniform_nll = policy_nll(Policy(), *env, data);
  std::size_t steps = 0, matched = 0;
  for (const auto& s : bc_samples(*env, data)) {
    const auto probs = policy.probabilities(s.state, s.legal, 0.0);
    const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    ++steps;
    matched += best == s.expert_index;
  }
  const double replay = static_cast<double>(matched) / static_cast<double>(steps);
  return {nll <= uniform_nll && replay >= 0.99, "NLL " + fmt("%.4f", nll) + " vs uniform " + fmt("%.4f", uniform_nll) +
                                                     ", greedy replay " + fmt("%.4f", replay)};
}

ExperimentConfig budget_curve_config(const fs::path& work) {
  return ExperimentConfig::parse(
      "run.id = budget-curve\n"
      "run.out_dir = " + work.string() + "\n"
      "run.seeds = 1,2,3,4,5\n"
      "env.kind = shop\n"
      "env.size = 6\n"
      "env.num_tasks = 100\n"
      "env.num_heldout = 100\n"
      "env.max_steps = 5\n"
      "tree.max_depth = 3\n"
      "tree.max_width = 3\n"
      "tree.node_budget = 24\n"
      "tree.temperature = 0.7\n"
      "qfn.kind = featurized\n"
      "search.m = 2\n"
      "search.temperature = 0.7\n"
      "curve.budgets = 10,20,40,80,160,320,640,1280,2560\n"
      "curve.suite = heldout\n");
}

Outcome budget_curve_analog(const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = budget_curve_config(fresh_dir(root, "c7"));
  run_pipeline(cfg, {Stage::bc, Stage::explore, Stage::qfn});
  const auto rows = run_budget_curve(cfg);

  std::map<std::uint64_t, std::map<std::uint64_t, double>> bon, qg;  // budget -> seed -> reward
  for (const auto& r : rows) (r.strategy == "best_of_n" ? bon : qg)[r.budget][r.seed] = r.mean_reward;
  std::vector<double> diffs;
  std::map<std::uint64_t, double> bon_mean, qg_mean;
  bool every_budget = true;
  for (const auto& [b, per_seed] : bon) {
    for (const auto& [s, v] : per_seed) {
      diffs.push_back(qg[b][s] - v);
      bon_mean[b] += v / static_cast<double>(per_seed.size());
      qg_mean[b] += qg[b][s] / static_cast<double>(per_seed.size());
    }
    every_budget = every_budget && qg_mean[b] >= bon_mean[b];
  }
  double mean = 0.0, var = 0.0;
  for (double d : diffs) mean += d / static_cast<double>(diffs.size());
  for (double d : diffs) var += (d - mean) * (d - mean) / static_cast<double>(diffs.size() - 1);
  const double t_stat = mean / std::sqrt(var / static_cast<double>(diffs.size()));
  // Exact one-sided sign test over the paired differences.
  int pos = 0, nonzero = 0;
  for (double d : diffs)
    if (d != 0.0) ++nonzero, pos += d > 0.0;
  double p_sign = 0.0;
  for (int k = pos; k <= nonzero; ++k) p_sign += std::exp(std::lgamma(nonzero + 1) - std::lgamma(k + 1) -
                                                          std::lgamma(nonzero - k + 1) - nonzero * std::log(2.0));

  // Plateau: the smallest budget at which Best-of-N is within 0.01 of its best mean.
  double bon_best = 0.0;
  for (const auto& [b, v] : bon_mean) bon_best = std::max(bon_best, v);
  std::uint64_t plateau_budget = 0;
  for (const auto& [b, v] : bon_mean)
    if (v >= bon_best - 0.01) {
      plateau_budget = b;
      break;
    }
  const double plateau_reward = bon_mean[plateau_budget];
  std::uint64_t qg_budget = 0;
  for (const auto& [b, v] : qg_mean)
    if (v >= plateau_reward) {
      qg_budget = b;
      break;
    }
  const bool plateau_ok = qg_budget > 0 && static_cast<double>(qg_budget) <= 0.7 * static_cast<double>(plateau_budget);
  const double secs = seconds_since(t0);

  std::ostringstream os;
  os << "mean paired diff " << fmt("%.4f", mean) << " (t " << fmt("%.2f", t_stat) << ", sign-test p "
     << fmt("%.3g", p_sign) << ", n " << diffs.size() << "); BoN plateau " << fmt("%.3f", plateau_reward) << " at "
     << plateau_budget << ", Q-guided reaches it at " << qg_budget << "; " << fmt("%.1f", secs) << " s";
  return {mean >= 0.0 && every_budget && plateau_ok && secs < 900.0, os.str()};
}

Outcome prm_ablation(const fs::path& root) {
  const auto cfg = ExperimentConfig::parse(
      "run.id = prm-ablation\n"
      "run.out_dir = " + fresh_dir(root, "c8").string() + "\n"
      "run.seeds = 1,2,3,4,5\n"
      "env.kind = keydoor\n"
      "env.size = 3\n"
      "env.num_tasks = 60\n"
      "env.slack = 6\n"
      "data.bc_fraction = 0.5\n"
      "qfn.kind = featurized\n"
      "search.m = 2\n"
      "search.max_len = 100\n"
      "eval.suite = train\n");
  run_pipeline(cfg, {Stage::bc, Stage::explore});
  const auto rows = run_ablation(cfg, {SelfTrainScheme::q_value, SelfTrainScheme::avg_reward, SelfTrainScheme::outcome});
  std::map<std::uint64_t, std::map<SelfTrainScheme, double>> by_seed;
  for (const auto& r : rows) by_seed[r.seed][r.scheme] = r.mean_reward;
  int q_ge_avg = 0, avg_ge_out = 0;
  std::ostringstream os;
  for (auto& [seed, m] : by_seed) {
    q_ge_avg += m[SelfTrainScheme::q_value] >= m[SelfTrainScheme::avg_reward];
    avg_ge_out += m[SelfTrainScheme::avg_reward] >= m[SelfTrainScheme::outcome];
    os << " [s" << seed << " " << fmt("%.3f", m[SelfTrainScheme::q_value]) << "/"
       << fmt("%.3f", m[SelfTrainScheme::avg_reward]) << "/" << fmt("%.3f", m[SelfTrainScheme::outcome]) << "]";
  }
  return {q_ge_avg >= 4 && avg_ge_out >= 4, "q_value>=avg_reward in " + std::to_string(q_ge_avg) +
                                                "/5, avg_reward>=outcome in " + std::to_string(avg_ge_out) +
                                                "/5; q/avg/out:" + os.str()};
}

Outcome low_data(const fs::path& root) {
  const auto cfg = ExperimentConfig::parse(
      "run.id = low-data\n"
      "run.out_dir = " + fresh_dir(root, "c9").string() + "\n"
      "run.seeds = 1,2,3,4,5\n"
      "eval.strategies = greedy,q_guided\n");
  const double fraction = 0.516;
  const auto rows = run_low_data(cfg, fraction);
  std::map<std::uint64_t, std::map<std::string, double>> full, cut;
  for (const auto& r : rows) (r.fraction == 1.0 ? full : cut)[r.seed][r.strategy] = r.mean_reward;
  int wins = 0;
  std::ostringstream os;
  for (const auto& [seed, m] : full) {
    const double greedy_drop = m.at("greedy") - cut[seed]["greedy"];
    const double guided_drop = m.at("q_guided") - cut[seed]["q_guided"];
    wins += guided_drop < greedy_drop;
    os << " [s" << seed << " " << fmt("%.3f", guided_drop) << " vs " << fmt("%.3f", greedy_drop) << "]";
  }
  return {wins >= 4, "Q-guided drop < greedy drop in " + std::to_string(wins) + "/5 seeds; drops:" + os.str()};
}

std::map<std::string, std::string> tree_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return out;
}

Outcome determinism(const fs::path& root) {
  std::vector<std::map<std::string, std::string>> runs;
  for (const std::string name : {"c10-a", "c10-b"}) {
    auto cfg = ExperimentConfig::parse("run.id = determinism\nrun.seeds = 1,2,3\nenv.num_heldout = 10\n"
                                       "curve.budgets = 10,40,160\n");
    cfg.out_dir = fresh_dir(root, name);
    run_pipeline(cfg);
    run_budget_curve(cfg);
    run_ablation(cfg, {SelfTrainScheme::q_value, SelfTrainScheme::rft_oracle});
    runs.push_back(tree_contents(run_dir(cfg)));
  }
  std::string diff;
  for (const auto& [path, text] : runs[0]) {
    const auto it = runs[1].find(path);
    if (it == runs[1].end() || it->second != text) {
      diff = " first difference: " + path;
      break;
    }
  }
  if (diff.empty() && runs[0].size() != runs[1].size()) diff = " file sets differ";
  return {diff.empty() && !runs[0].empty(), std::to_string(runs[0].size()) + " files compared byte for byte" + diff};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qlass acceptance criteria"};
  int only = 0;
  std::string work = (fs::temp_directory_path() / "qlass-acceptance").string();
  app.add_option("--only", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work-dir", work, "scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path root(work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"backup oracle equivalence", backup_oracle},
      {"normalization contract", normalization},
      {"tree construction invariants", build_invariants},
      {"argmax invariance", argmax_invariance},
      {"value-model gradient check", gradient_check},
      {"behavior cloning sanity", bc_sanity},
      {"budget curve: Q-guided vs Best-of-N", [&] { return budget_curve_analog(root); }},
      {"self-training label ablation", [&] { return prm_ablation(root); }},
      {"low-data robustness", [&] { return low_data(root); }},
      {"end-to-end determinism", [&] { return determinism(root); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
