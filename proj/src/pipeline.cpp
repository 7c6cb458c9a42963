#include "qlass/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "qlass/io.hpp"

namespace qlass {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSubsampleSalt = 0x5b5a;
constexpr std::uint64_t kExploreSalt = 0xe7b1;
constexpr std::uint64_t kEvalSalt = 0xe7a1;
constexpr std::uint64_t kSelfTrainSalt = 0x5e1f;

bool solved(double reward) { return reward >= 1.0; }

void require(const fs::path& p) {
  if (!fs::exists(p)) throw StageDependencyError("missing artifact " + p.string());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\n") != std::string::npos) throw ConfigError("CSV field contains a separator: '" + s + "'");
  return s;
}

std::uint64_t parse_u64(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataValidationError("not an unsigned integer: '" + s + "'");
  }
}

struct Clock {
  bool enabled;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    if (!enabled) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

ActionScorer scorer_for(const QFunction& q) {
  return [&q](const HistoryState& s, const ActionToken& a) { return q.predict(s, a); };
}

struct Evaluation {
  std::vector<SearchResult> results;
  double mean_reward = 0.0;
  double success_rate = 0.0;
};

Evaluation evaluate(const Strategy& strategy, const Environment& env, const std::vector<TaskSpec>& tasks,
                    std::uint64_t seed, SearchBudget caps, int workers) {
  Evaluation ev;
  ev.results.resize(tasks.size());
  parallel_for(tasks.size(), workers,
               [&](std::size_t i) { ev.results[i] = run_strategy(strategy, env, tasks[i], mix_seed(seed, i), caps); });
  double sum = 0.0, wins = 0.0;
  for (const auto& r : ev.results) {
    if (r.env_failed) throw DataValidationError("environment failure during evaluation: " + r.error);
    sum += r.best_reward;
    wins += solved(r.best_reward) ? 1.0 : 0.0;
  }
  if (!tasks.empty()) {
    ev.mean_reward = sum / static_cast<double>(tasks.size());
    ev.success_rate = wins / static_cast<double>(tasks.size());
  }
  return ev;
}

std::pair<double, double> greedy_score(const Policy& policy, const Environment& env,
                                       const std::vector<TaskSpec>& tasks, int max_len, int workers) {
  Strategy s{StrategyKind::greedy, &policy, {}, {1, 1, max_len, 0.0}};
  const auto ev = evaluate(s, env, tasks, 0, {}, workers);
  return {ev.mean_reward, ev.success_rate};
}

std::vector<ExplorationTree> load_trees(const Environment& env, const SeedPaths& paths, std::uint64_t* checksum) {
  std::vector<ExplorationTree> trees;
  std::string all;
  for (const auto& task : env.tasks()) {
    const auto file = paths.trees / (task.id + ".json");
    require(file);
    std::string text = read_file(file);
    trees.push_back(tree_from_json(text, env));
    all += text;
    all.push_back('\0');
  }
  if (checksum) *checksum = fnv1a(all);
  return trees;
}

}  // namespace

std::string metrics_header() { return "run_id,seed,stage,strategy,budget,mean_reward,success_rate,wall_time"; }

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = metrics_header() + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.run_id) + "," + std::to_string(r.seed) + "," + csv_field(r.stage) + "," +
           csv_field(r.strategy) + "," + std::to_string(r.budget) + "," + format_double(r.mean_reward) + "," +
           format_double(r.success_rate) + "," + format_double(r.wall_time) + "\n";
  }
  return out;
}

std::vector<MetricsRow> metrics_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) throw DataValidationError("metrics CSV has a bad header");
  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw DataValidationError("metrics CSV line " + std::to_string(lineno) + ": expected 8 fields");
    rows.push_back({f[0], parse_u64(f[1]), f[2], f[3], parse_u64(f[4]), parse_double(f[5]), parse_double(f[6]),
                    parse_double(f[7])});
  }
  return rows;
}

void write_metrics(const fs::path& path, const std::vector<MetricsRow>& rows) {
  write_file_atomic(path, metrics_to_csv(rows));
}

std::vector<MetricsRow> read_metrics(const fs::path& path) { return metrics_from_csv(read_file(path)); }

std::string emit_plot_data(const std::vector<MetricsRow>& rows) {
  std::vector<const MetricsRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const MetricsRow* a, const MetricsRow* b) {
    return std::tie(a->strategy, a->budget, a->seed) < std::tie(b->strategy, b->budget, b->seed);
  });
  std::string out = "strategy,budget,seed,reward\n";
  for (const auto* r : sorted) {
    out += csv_field(r->strategy) + "," + std::to_string(r->budget) + "," + std::to_string(r->seed) + "," +
           format_double(r->mean_reward) + "\n";
  }
  return out;
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::bc: return "bc";
    case Stage::explore: return "explore";
    case Stage::qfn: return "qfn";
    case Stage::evaluate: return "evaluate";
  }
  return "?";
}

fs::path run_dir(const ExperimentConfig& cfg) { return cfg.out_dir / cfg.run_id; }

SeedPaths seed_paths(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedPaths p;
  p.dir = run_dir(cfg) / ("seed-" + std::to_string(seed));
  p.policy = p.dir / "policy.txt";
  p.expert = p.dir / "expert.jsonl";
  p.trees = p.dir / "trees";
  p.qdataset = p.dir / "qdataset.tsv";
  p.qfn = p.dir / "qfn.txt";
  p.results = p.dir / "results.jsonl";
  p.metrics = p.dir / "metrics.csv";
  return p;
}

ExpertDataset load_expert_data(const ExperimentConfig& cfg, const Environment& env) {
  if (!cfg.expert_path.empty()) {
    if (!fs::exists(cfg.expert_path)) throw IoError("expert file not found: " + cfg.expert_path.string());
    return read_expert_dataset(cfg.expert_path, env);
  }
  return ExpertDataset::from_tasks(env.tasks());
}

ExpertDataset subsample_experts(const ExpertDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("BC fraction must be in (0, 1]");
  if (fraction == 1.0 || data.empty()) return data;
  const std::size_t n = data.size();
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  ExpertDataset out;
  for (std::size_t i : idx) out.records.push_back(data.records[i]);
  return out;
}

const std::vector<TaskSpec>& suite_tasks(const Environment& env, const std::string& suite) {
  if (suite == "train") return env.tasks();
  if (suite == "heldout") return env.heldout_tasks();
  throw ConfigError("unknown task suite '" + suite + "'");
}

void run_bc_stage(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto env = make_environment(cfg.env);
  const auto paths = seed_paths(cfg, seed);
  const auto subset = subsample_experts(load_expert_data(cfg, *env), cfg.bc_fraction, mix_seed(seed, kSubsampleSalt));
  BcConfig bc = cfg.bc;
  bc.seed = seed;
  const Policy policy = bc_train(*env, subset, bc);
  fs::create_directories(paths.dir);
  policy.save(paths.policy);
  write_expert_dataset(paths.expert, subset);
}

void run_explore_stage(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto env = make_environment(cfg.env);
  const auto paths = seed_paths(cfg, seed);
  require(paths.policy);
  require(paths.expert);
  const Policy policy = Policy::load(paths.policy);
  const ExpertDataset experts = read_expert_dataset(paths.expert, *env);
  std::map<std::string, const Trajectory*> expert_of;
  for (const auto& rec : experts.records) expert_of.emplace(rec.task.id, &rec.trajectory);

  const auto& tasks = env->tasks();
  std::vector<std::optional<ExplorationTree>> trees(tasks.size());
  parallel_for(tasks.size(), cfg.workers, [&](std::size_t i) {
    const auto it = expert_of.find(tasks[i].id);
    std::optional<Trajectory> expert;
    if (it != expert_of.end()) expert = *it->second;
    Rng rng(mix_seed(mix_seed(seed, kExploreSalt), i));
    ExplorationTree tree = build_tree(policy, *env, tasks[i], expert, cfg.tree, rng);
    estimate_q(tree, cfg.tree.gamma);
    trees[i] = std::move(tree);
  });

  fs::remove_all(paths.trees);
  fs::create_directories(paths.trees);
  std::vector<ExplorationTree> flat;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    write_file_atomic(paths.trees / (tasks[i].id + ".json"), tree_to_json(*trees[i]));
    flat.push_back(std::move(*trees[i]));
  }
  collect_q_dataset(flat).save(paths.qdataset);
}

void run_qfn_stage(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto paths = seed_paths(cfg, seed);
  require(paths.qdataset);
  QTrainConfig qc = cfg.qfn;
  qc.seed = seed;
  train_qfn(QDataset::load(paths.qdataset), qc).save(paths.qfn);
}

std::vector<MetricsRow> run_evaluate_stage(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto env = make_environment(cfg.env);
  const auto paths = seed_paths(cfg, seed);
  require(paths.policy);
  const bool guided = std::count(cfg.eval_strategies.begin(), cfg.eval_strategies.end(), StrategyKind::q_guided) > 0;
  if (guided) require(paths.qfn);
  const Policy policy = Policy::load(paths.policy);
  std::optional<QFunction> qfn;
  if (guided) qfn = QFunction::load(paths.qfn);

  const auto& tasks = suite_tasks(*env, cfg.eval_suite);
  const SearchBudget caps =
      cfg.search_budget > 0 ? SearchBudget::capped(cfg.search_budget, cfg.search_budget) : SearchBudget{};
  std::vector<MetricsRow> rows;
  std::vector<Trajectory> results;
  for (StrategyKind kind : cfg.eval_strategies) {
    Strategy s{kind, &policy, {}, cfg.search};
    if (kind == StrategyKind::q_guided) s.scorer = scorer_for(*qfn);
    const Clock clock{cfg.record_wall_time};
    const auto ev = evaluate(s, *env, tasks, mix_seed(seed, kEvalSalt), caps, cfg.workers);
    rows.push_back({cfg.run_id, seed, "evaluate", to_string(kind), cfg.search_budget, ev.mean_reward,
                    ev.success_rate, clock.seconds()});
    for (const auto& r : ev.results) {
      Trajectory t = r.best;
      t.meta.strategy = to_string(kind);
      results.push_back(std::move(t));
    }
  }
  write_trajectories(paths.results, results);
  write_metrics(paths.metrics, rows);
  return rows;
}

std::vector<MetricsRow> run_pipeline(const ExperimentConfig& cfg, const std::vector<Stage>& stages) {
  cfg.validate();
  const auto selected = [&](Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  for (std::uint64_t seed : cfg.seeds) {
    if (selected(Stage::bc)) run_bc_stage(cfg, seed);
    if (selected(Stage::explore)) run_explore_stage(cfg, seed);
    if (selected(Stage::qfn)) run_qfn_stage(cfg, seed);
    if (selected(Stage::evaluate)) run_evaluate_stage(cfg, seed);
  }
  std::vector<MetricsRow> all;
  if (!selected(Stage::evaluate)) return all;
  for (std::uint64_t seed : cfg.seeds) {
    const auto rows = read_metrics(seed_paths(cfg, seed).metrics);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_metrics(run_dir(cfg) / "metrics.csv", all);
  return all;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<SelfTrainScheme>& schemes) {
  cfg.validate();
  if (schemes.empty()) throw ConfigError("no self-training schemes selected");
  const auto env = make_environment(cfg.env);
  const auto& eval_tasks = suite_tasks(*env, cfg.eval_suite);
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const auto paths = seed_paths(cfg, seed);
    require(paths.policy);
    require(paths.expert);
    const Policy policy = Policy::load(paths.policy);
    const ExpertDataset experts = read_expert_dataset(paths.expert, *env);
    std::uint64_t checksum = 0;
    const auto trees = load_trees(*env, paths, &checksum);

    for (SelfTrainScheme scheme : schemes) {
      std::map<SelfTrainScheme, QFunction> owned;
      std::map<SelfTrainScheme, const QFunction*> qfns;
      if (scheme != SelfTrainScheme::rft_oracle) {
        QTrainConfig qc = cfg.qfn;
        qc.seed = seed;
        owned.emplace(scheme, train_qfn(collect_labeled_dataset(trees, label_scheme_for(scheme)), qc));
        qfns[scheme] = &owned.at(scheme);
      }
      SelfTrainConfig st;
      st.scheme = scheme;
      st.traj_per_task = cfg.selftrain_traj_per_task;
      st.success_threshold = cfg.selftrain_success_threshold;
      st.merge_expert = false;
      st.m = cfg.search.m;
      st.max_len = cfg.search.max_len;
      st.temperature = cfg.search.temperature;
      const auto generated = generate_self_training_data(policy, qfns, *env, env->tasks(), experts, st,
                                                         mix_seed(seed, kSelfTrainSalt), cfg.workers);
      write_expert_dataset(paths.dir / "ablation" / (to_string(scheme) + ".jsonl"), generated);
      BcConfig bc = cfg.bc;
      bc.seed = seed;
      const Policy trained = self_train(*env, experts, generated, bc);
      const auto [mean, success] = greedy_score(trained, *env, eval_tasks, cfg.search.max_len, cfg.workers);
      rows.push_back({seed, scheme, checksum, generated.size(), mean, success});
    }
  }
  write_file_atomic(run_dir(cfg) / "ablation.csv", ablation_to_csv(rows));
  return rows;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string out = "seed,scheme,tree_checksum,generated,mean_reward,success_rate\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + to_string(r.scheme) + "," + std::to_string(r.tree_checksum) + "," +
           std::to_string(r.generated) + "," + format_double(r.mean_reward) + "," + format_double(r.success_rate) +
           "\n";
  }
  return out;
}

std::vector<LowDataRow> run_low_data(const ExperimentConfig& cfg, double fraction) {
  cfg.validate();
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
  std::vector<LowDataRow> rows;
  for (double f : {1.0, fraction}) {
    ExperimentConfig sub = cfg;
    sub.bc_fraction = f;
    sub.run_id = cfg.run_id + "-frac-" + format_double(f);
    for (const auto& m : run_pipeline(sub)) rows.push_back({m.seed, f, m.strategy, m.mean_reward});
    if (fraction == 1.0) break;
  }
  write_file_atomic(run_dir(cfg) / "low_data.csv", low_data_to_csv(rows));
  return rows;
}

std::string low_data_to_csv(const std::vector<LowDataRow>& rows) {
  std::string out = "seed,fraction,strategy,mean_reward\n";
  for (const auto& r : rows)
    out += std::to_string(r.seed) + "," + format_double(r.fraction) + "," + r.strategy + "," +
           format_double(r.mean_reward) + "\n";
  return out;
}

std::vector<MetricsRow> run_budget_curve(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!std::is_sorted(cfg.curve_budgets.begin(), cfg.curve_budgets.end()))
    throw ConfigError("curve.budgets must be sorted ascending");
  const auto env = make_environment(cfg.env);
  const auto& tasks = suite_tasks(*env, cfg.curve_suite);
  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const auto paths = seed_paths(cfg, seed);
    require(paths.policy);
    require(paths.qfn);
    const Policy policy = Policy::load(paths.policy);
    const QFunction qfn = QFunction::load(paths.qfn);
    SearchParams bon_params = cfg.search;
    bon_params.m = 1;
    const Strategy bon{StrategyKind::best_of_n, &policy, {}, bon_params};
    const Strategy guided{StrategyKind::q_guided, &policy, scorer_for(qfn), cfg.search};
    for (const Strategy* s : {&bon, &guided}) {
      const Clock clock{cfg.record_wall_time};
      const auto curve = budget_curve(*s, *env, tasks, cfg.curve_budgets, mix_seed(seed, kEvalSalt), cfg.workers);
      const double elapsed = clock.seconds();
      for (const auto& point : curve) {
        const double wins = static_cast<double>(std::count_if(point.task_rewards.begin(), point.task_rewards.end(), solved));
        rows.push_back({cfg.run_id, seed, "budget-curve", to_string(s->kind), point.budget, point.mean_reward,
                        tasks.empty() ? 0.0 : wins / static_cast<double>(tasks.size()), elapsed});
      }
    }
  }
  write_metrics(run_dir(cfg) / "budget_curve.csv", rows);
  write_file_atomic(run_dir(cfg) / "plot.csv", emit_plot_data(rows));
  return rows;
}

std::uint64_t directory_checksum(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    all += f.generic_string();
    all.push_back('\0');
    all += read_file(dir / f);
    all.push_back('\0');
  }
  return fnv1a(all);
}

}  // namespace qlass
