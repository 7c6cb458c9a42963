#include "qlass/config.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <sstream>

#include "qlass/io.hpp"

extern char** environ;

namespace qlass {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  try {
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double to_real(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& part : split(v, ',')) {
    auto t = trim(part);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

template <typename T, typename F>
std::string join_list(const std::vector<T>& xs, F fmt) {
  std::vector<std::string> parts;
  for (const auto& x : xs) parts.push_back(fmt(x));
  return join(parts, ",");
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define QLASS_INT(KEY, MEMBER)                                                          \
  {KEY, {[](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },           \
         [](ExperimentConfig& c, const std::string& v) {                               \
           c.MEMBER = static_cast<decltype(c.MEMBER)>(to_int(KEY, v));                 \
         }}}
#define QLASS_U64(KEY, MEMBER)                                                          \
  {KEY, {[](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },           \
         [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_u64(KEY, v); }}}
#define QLASS_REAL(KEY, MEMBER)                                                         \
  {KEY, {[](const ExperimentConfig& c) { return format_double(c.MEMBER); },            \
         [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_real(KEY, v); }}}
#define QLASS_BOOL(KEY, MEMBER)                                                         \
  {KEY, {[](const ExperimentConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }, \
         [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); }}}
#define QLASS_STR(KEY, MEMBER)                                                          \
  {KEY, {[](const ExperimentConfig& c) { return std::string(c.MEMBER); },              \
         [](ExperimentConfig& c, const std::string& v) { c.MEMBER = v; }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      QLASS_STR("run.id", run_id),
      {"run.out_dir", {[](const ExperimentConfig& c) { return c.out_dir.string(); },
                       [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }}},
      {"run.seeds", {[](const ExperimentConfig& c) {
                       return join_list(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
                     },
                     [](ExperimentConfig& c, const std::string& v) {
                       c.seeds.clear();
                       for (const auto& s : to_list(v)) c.seeds.push_back(to_u64("run.seeds", s));
                     }}},
      QLASS_INT("run.workers", workers),
      QLASS_BOOL("run.record_wall_time", record_wall_time),

      QLASS_STR("env.kind", env.kind),
      QLASS_INT("env.size", env.size),
      QLASS_INT("env.num_tasks", env.num_tasks),
      QLASS_INT("env.num_heldout", env.num_heldout),
      QLASS_U64("env.seed", env.seed),
      QLASS_INT("env.slack", env.slack),
      QLASS_INT("env.max_steps", env.max_steps),
      QLASS_INT("env.info_pages", env.info_pages),

      {"data.expert_path", {[](const ExperimentConfig& c) { return c.expert_path.string(); },
                            [](ExperimentConfig& c, const std::string& v) { c.expert_path = v; }}},
      QLASS_REAL("data.bc_fraction", bc_fraction),

      QLASS_INT("bc.epochs", bc.epochs),
      QLASS_REAL("bc.learning_rate", bc.learning_rate),
      QLASS_REAL("bc.smoothing", bc.smoothing),

      QLASS_INT("tree.max_depth", tree.max_depth),
      QLASS_INT("tree.max_width", tree.max_width),
      QLASS_REAL("tree.gamma", tree.gamma),
      QLASS_INT("tree.node_budget", tree.node_budget),
      QLASS_REAL("tree.temperature", tree.temperature),

      {"qfn.kind", {[](const ExperimentConfig& c) { return to_string(c.qfn.kind); },
                    [](ExperimentConfig& c, const std::string& v) { c.qfn.kind = qfn_kind_from_string(v); }}},
      QLASS_INT("qfn.epochs", qfn.epochs),
      QLASS_REAL("qfn.learning_rate", qfn.learning_rate),
      QLASS_INT("qfn.batch_size", qfn.batch_size),
      QLASS_REAL("qfn.default_unseen_q", qfn.default_unseen_q),
      QLASS_INT("qfn.hidden", qfn.hidden),
      QLASS_INT("qfn.feature_dim", qfn.feature_dim),

      QLASS_INT("search.m", search.m),
      QLASS_INT("search.n", search.n),
      QLASS_INT("search.max_len", search.max_len),
      QLASS_REAL("search.temperature", search.temperature),
      QLASS_U64("search.budget", search_budget),

      QLASS_STR("eval.suite", eval_suite),
      {"eval.strategies",
       {[](const ExperimentConfig& c) {
          return join_list(c.eval_strategies, [](StrategyKind k) { return to_string(k); });
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.eval_strategies.clear();
          for (const auto& s : to_list(v)) c.eval_strategies.push_back(strategy_from_string(s));
        }}},

      QLASS_INT("selftrain.traj_per_task", selftrain_traj_per_task),
      QLASS_REAL("selftrain.success_threshold", selftrain_success_threshold),
      {"selftrain.schemes",
       {[](const ExperimentConfig& c) {
          return join_list(c.selftrain_schemes, [](SelfTrainScheme s) { return to_string(s); });
        },
        [](ExperimentConfig& c, const std::string& v) {
          c.selftrain_schemes.clear();
          for (const auto& s : to_list(v)) c.selftrain_schemes.push_back(self_train_scheme_from_string(s));
        }}},

      {"curve.budgets", {[](const ExperimentConfig& c) {
                           return join_list(c.curve_budgets, [](std::uint64_t b) { return std::to_string(b); });
                         },
                         [](ExperimentConfig& c, const std::string& v) {
                           c.curve_budgets.clear();
                           for (const auto& s : to_list(v)) c.curve_budgets.push_back(to_u64("curve.budgets", s));
                         }}},
      QLASS_STR("curve.suite", curve_suite),
  };
  return table;
}

#undef QLASS_INT
#undef QLASS_U64
#undef QLASS_REAL
#undef QLASS_BOOL
#undef QLASS_STR

std::string env_var_name(const std::string& key) {
  std::string name = "QLASS_";
  for (char ch : key) name += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return name;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, value);
}

std::string ExperimentConfig::get(const std::string& key) const {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> ks = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return ks;
}

std::string ExperimentConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, f] : fields()) os << k << " = " << f.get(*this) << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    try {
      cfg.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return parse(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ExperimentConfig::apply_env_overrides(const std::map<std::string, std::string>& environment) {
  std::map<std::string, std::string> by_var;
  for (const auto& k : keys()) by_var[env_var_name(k)] = k;
  for (const auto& [name, value] : environment) {
    if (name.rfind("QLASS_", 0) != 0) continue;
    const auto it = by_var.find(name);
    if (it == by_var.end()) throw ConfigError("unknown override variable " + name);
    set(it->second, value);
  }
}

void ExperimentConfig::apply_process_env() {
  std::map<std::string, std::string> vars;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) vars[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  apply_env_overrides(vars);
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (workers < 1) throw ConfigError("run.workers must be >= 1");
  if (!(bc_fraction > 0.0 && bc_fraction <= 1.0)) throw ConfigError("data.bc_fraction must be in (0, 1]");
  if (bc.epochs < 1) throw ConfigError("bc.epochs must be >= 1");
  if (tree.max_depth < 1 || tree.max_width < 1) throw ConfigError("tree.max_depth and tree.max_width must be >= 1");
  if (!(tree.gamma > 0.0 && tree.gamma <= 1.0)) throw ConfigError("tree.gamma must be in (0, 1]");
  if (tree.node_budget < 0) throw ConfigError("tree.node_budget must be >= 0");
  if (qfn.epochs < 1) throw ConfigError("qfn.epochs must be >= 1");
  if (search.m < 1 || search.n < 1 || search.max_len < 1) throw ConfigError("search.m, search.n, search.max_len must be >= 1");
  if (search.temperature < 0.0 || tree.temperature < 0.0) throw ConfigError("temperatures must be >= 0");
  if (eval_suite != "train" && eval_suite != "heldout") throw ConfigError("eval.suite must be train or heldout");
  if (curve_suite != "train" && curve_suite != "heldout") throw ConfigError("curve.suite must be train or heldout");
  if (!std::is_sorted(curve_budgets.begin(), curve_budgets.end())) throw ConfigError("curve.budgets must be ascending");
  if (selftrain_traj_per_task < 1) throw ConfigError("selftrain.traj_per_task must be >= 1");
  if (!(selftrain_success_threshold >= 0.0 && selftrain_success_threshold < 1.0))
    throw ConfigError("selftrain.success_threshold must be in [0, 1)");
}

}  // namespace qlass
