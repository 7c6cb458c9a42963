#include "qlass/qfn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "qlass/io.hpp"

namespace qlass {

std::string to_string(QfnKind k) { return k == QfnKind::tabular ? "tabular" : "featurized"; }

QfnKind qfn_kind_from_string(const std::string& name) {
  if (name == "tabular") return QfnKind::tabular;
  if (name == "featurized") return QfnKind::featurized;
  throw ConfigError("unknown q-function kind '" + name + "'");
}

namespace {

std::string table_key(const HistoryState& state, const ActionToken& action) {
  return state.key() + '\t' + action;
}

std::string verb_of(const std::string& action) {
  const auto pos = action.find(' ');
  return pos == std::string::npos ? action : action.substr(0, pos);
}

std::vector<std::string> args_of(const std::string& action) {
  auto toks = tokenize(action);
  if (!toks.empty()) toks.erase(toks.begin());
  return toks;
}

int overlap(const std::vector<std::string>& toks, const std::set<std::string>& desc) {
  int n = 0;
  for (const auto& t : toks) n += desc.count(t) ? 1 : 0;
  return n;
}

}  // namespace

SparseFeatures qfn_features(const HistoryState& state, const ActionToken& action, int dim) {
  if (dim < 1) throw ContractError("feature dimension must be >= 1");
  std::vector<std::pair<std::uint32_t, double>> raw;
  auto add = [&](const std::string& name, double v) {
    raw.emplace_back(static_cast<std::uint32_t>(fnv1a(name) % static_cast<std::uint64_t>(dim)), v);
  };

  const auto desc_toks = tokenize(state.description());
  const std::set<std::string> desc(desc_toks.begin(), desc_toks.end());
  const auto& steps = state.steps();
  const std::string verb = verb_of(action);
  const auto args = args_of(action);
  const std::size_t depth = steps.size();

  add("bias", 1.0);
  add("depth", static_cast<double>(depth) / 10.0);
  add("verb=" + verb, 1.0);
  for (const auto& t : tokenize(action)) add("tok=" + t, 1.0);
  add("verb@depth=" + verb + "@" + std::to_string(std::min<std::size_t>(depth, 6)), 1.0);
  add("verb|prev=" + verb + "|" + (steps.empty() ? std::string("<start>") : verb_of(steps.back().action)), 1.0);

  if (!args.empty()) {
    const int ov = overlap(args, desc);
    add("overlap|verb=" + verb, static_cast<double>(ov) / static_cast<double>(args.size()));
    if (ov == 0) add("miss|verb=" + verb, 1.0);
  }

  int matched_before = 0;
  bool repeat = false;
  for (const auto& s : steps) {
    matched_before += overlap(args_of(s.action), desc) > 0 ? 1 : 0;
    repeat = repeat || s.action == action;
  }
  add("verb&matched=" + verb + "&" + std::to_string(std::min(matched_before, 6)), 1.0);
  if (repeat) add("repeat", 1.0);

  if (!steps.empty()) {
    const auto& obs = steps.back().observation;
    if (obs == "nothing happened") add("nothing", 1.0);
    for (const auto& t : tokenize(obs)) add("obs=" + t, 0.5);
  }

  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseFeatures out;
  for (const auto& [i, v] : raw) {
    if (!out.empty() && out.back().first == i)
      out.back().second += v;
    else
      out.emplace_back(i, v);
  }
  return out;
}

QFunction QFunction::make_tabular(double default_unseen_q) {
  QFunction q;
  q.kind_ = QfnKind::tabular;
  q.default_q_ = default_unseen_q;
  return q;
}

QFunction QFunction::make_featurized(int dim, int hidden, std::uint64_t seed, double scale) {
  if (dim < 1 || hidden < 0) throw ContractError("featurized q-function needs dim >= 1 and hidden >= 0");
  QFunction q;
  q.kind_ = QfnKind::featurized;
  q.dim_ = dim;
  q.hidden_ = hidden;
  const std::size_t n = hidden == 0 ? static_cast<std::size_t>(dim) + 1
                                    : static_cast<std::size_t>(dim) * hidden + 2 * static_cast<std::size_t>(hidden) + 1;
  q.params_.resize(n);
  Rng rng(seed);
  for (auto& p : q.params_) p = scale * rng.normal();
  return q;
}

void QFunction::set_parameters(std::vector<double> p) {
  if (kind_ != QfnKind::featurized) throw UnsupportedKindError("tabular q-functions have no parameter vector");
  if (p.size() != params_.size()) throw ContractError("parameter vector has the wrong size");
  params_ = std::move(p);
}

void QFunction::set_entry(const HistoryState& state, const ActionToken& action, double q) {
  if (kind_ != QfnKind::tabular) throw UnsupportedKindError("set_entry needs a tabular q-function");
  table_[table_key(state, action)] = q;
}

double QFunction::forward(const SparseFeatures& x) const {
  if (hidden_ == 0) {
    double y = params_[static_cast<std::size_t>(dim_)];
    for (const auto& [i, v] : x) y += params_[i] * v;
    return y;
  }
  const std::size_t h = static_cast<std::size_t>(hidden_);
  const std::size_t b1 = static_cast<std::size_t>(dim_) * h, w2 = b1 + h, b2 = w2 + h;
  double y = params_[b2];
  for (std::size_t j = 0; j < h; ++j) {
    double z = params_[b1 + j];
    for (const auto& [i, v] : x) z += params_[i * h + j] * v;
    if (z > 0.0) y += params_[w2 + j] * z;
  }
  return y;
}

void QFunction::accumulate_gradient(const SparseFeatures& x, double g, std::vector<double>& grad) const {
  if (hidden_ == 0) {
    for (const auto& [i, v] : x) grad[i] += g * v;
    grad[static_cast<std::size_t>(dim_)] += g;
    return;
  }
  const std::size_t h = static_cast<std::size_t>(hidden_);
  const std::size_t b1 = static_cast<std::size_t>(dim_) * h, w2 = b1 + h, b2 = w2 + h;
  grad[b2] += g;
  for (std::size_t j = 0; j < h; ++j) {
    double z = params_[b1 + j];
    for (const auto& [i, v] : x) z += params_[i * h + j] * v;
    if (z <= 0.0) continue;
    grad[w2 + j] += g * z;
    const double gz = g * params_[w2 + j];
    grad[b1 + j] += gz;
    for (const auto& [i, v] : x) grad[i * h + j] += gz * v;
  }
}

double QFunction::predict(const HistoryState& state, const ActionToken& action) const {
  if (kind_ == QfnKind::tabular) {
    const auto it = table_.find(table_key(state, action));
    return it == table_.end() ? default_q_ : it->second;
  }
  return forward(qfn_features(state, action, dim_));
}

double QFunction::mse(const QDataset& data) const {
  if (data.empty()) throw ContractError("mse of an empty dataset");
  double sum = 0.0;
  for (const auto& s : data.samples) {
    const double e = predict(s.state, s.action) - s.q;
    sum += e * e;
  }
  return sum / static_cast<double>(data.size());
}

std::vector<double> QFunction::mse_gradient(const QDataset& data) const {
  if (kind_ != QfnKind::featurized) throw UnsupportedKindError("gradients need a featurized q-function");
  if (data.empty()) throw ContractError("gradient of an empty dataset");
  std::vector<double> grad(params_.size(), 0.0);
  const double n = static_cast<double>(data.size());
  for (const auto& s : data.samples) {
    const auto x = qfn_features(s.state, s.action, dim_);
    accumulate_gradient(x, 2.0 * (forward(x) - s.q) / n, grad);
  }
  return grad;
}

std::string QFunction::serialize() const {
  std::ostringstream os;
  os << "qlass-qfn 1\n";
  if (kind_ == QfnKind::tabular) {
    os << "kind\ttabular\n" << "default\t" << format_double(default_q_) << '\n';
    for (const auto& [k, v] : table_) os << k << '\t' << format_double(v) << '\n';
  } else {
    os << "kind\tfeaturized\n"
       << "dim\t" << dim_ << '\n'
       << "hidden\t" << hidden_ << '\n'
       << "params\t" << params_.size() << '\n';
    for (double p : params_) os << format_double(p) << '\n';
  }
  return os.str();
}

QFunction QFunction::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next = [&](const std::string& what) {
    if (!std::getline(is, line)) throw DataValidationError("q-function file truncated before " + what);
    return line;
  };
  auto field = [&](const std::string& name) {
    const auto f = split(next(name), '\t');
    if (f.size() != 2 || f[0] != name) throw DataValidationError("q-function file: expected '" + name + "'");
    return f[1];
  };
  if (next("header") != "qlass-qfn 1") throw DataValidationError("not a version-1 q-function file");
  const auto kind = qfn_kind_from_string(field("kind"));
  if (kind == QfnKind::tabular) {
    QFunction q = make_tabular(parse_double(field("default")));
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      const auto first = line.find('\t');
      if (tab == std::string::npos || tab == first) throw DataValidationError("q-function file: bad table row");
      q.table_[line.substr(0, tab)] = parse_double(std::string_view(line).substr(tab + 1));
    }
    return q;
  }
  QFunction q;
  q.kind_ = QfnKind::featurized;
  q.dim_ = std::stoi(field("dim"));
  q.hidden_ = std::stoi(field("hidden"));
  const std::size_t n = std::stoul(field("params"));
  q.params_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) q.params_.push_back(parse_double(next("parameter")));
  const std::size_t expect = q.hidden_ == 0 ? static_cast<std::size_t>(q.dim_) + 1
                                            : static_cast<std::size_t>(q.dim_) * q.hidden_ + 2 * q.hidden_ + 1;
  if (n != expect) throw DataValidationError("q-function file: parameter count does not match shape");
  return q;
}

void QFunction::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

QFunction QFunction::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const DataValidationError& e) {
    throw DataValidationError(path.string() + ": " + e.what());
  }
}

namespace {

void validate_data(const QDataset& data) {
  if (data.empty()) throw ContractError("cannot train a q-function on an empty dataset");
  for (const auto& s : data.samples)
    if (!(s.q >= 0.0 && s.q <= 1.0)) throw ContractError("q targets must lie in [0, 1]");
}

double constant_mse(const QDataset& data) {
  double mean = 0.0;
  for (const auto& s : data.samples) mean += s.q;
  mean /= static_cast<double>(data.size());
  double sum = 0.0;
  for (const auto& s : data.samples) sum += (s.q - mean) * (s.q - mean);
  return sum / static_cast<double>(data.size());
}

QFunction train_tabular(const QDataset& data, const QTrainConfig& cfg) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& s : data.samples) {
    auto& [sum, n] = acc[table_key(s.state, s.action)];
    sum += s.q;
    n += 1;
  }
  QFunction q = QFunction::make_tabular(cfg.default_unseen_q);
  for (const auto& s : data.samples) {
    const auto& [sum, n] = acc[table_key(s.state, s.action)];
    q.set_entry(s.state, s.action, sum / n);
  }
  return q;
}

}  // namespace

QFunction train_qfn(const QDataset& data, const QTrainConfig& cfg, QTrainReport* report) {
  if (cfg.epochs < 1) throw ContractError("epochs must be >= 1");
  validate_data(data);
  const double base = constant_mse(data);
  if (cfg.kind == QfnKind::tabular) {
    QFunction q = train_tabular(data, cfg);
    if (report) {
      report->constant_mse = base;
      report->epoch_mse.assign(static_cast<std::size_t>(cfg.epochs), q.mse(data));
    }
    return q;
  }
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) throw ContractError("need batch_size >= 1 and lr > 0");

  QFunction q = QFunction::make_featurized(cfg.feature_dim, cfg.hidden, cfg.seed, 0.1);
  std::vector<double> p = q.parameters();
  double mean = 0.0;
  for (const auto& s : data.samples) mean += s.q;
  mean /= static_cast<double>(data.size());
  // Zero output weights and a mean bias: the starting model is the constant predictor.
  if (cfg.hidden == 0) {
    std::fill(p.begin(), p.end() - 1, 0.0);
  } else {
    const std::size_t h = static_cast<std::size_t>(cfg.hidden);
    const std::size_t w2 = static_cast<std::size_t>(cfg.feature_dim) * h + h;
    std::fill(p.begin() + static_cast<std::ptrdiff_t>(w2), p.begin() + static_cast<std::ptrdiff_t>(w2 + h), 0.0);
  }
  p.back() = mean;
  q.set_parameters(p);

  std::vector<SparseFeatures> xs;
  xs.reserve(data.size());
  for (const auto& s : data.samples) xs.push_back(qfn_features(s.state, s.action, cfg.feature_dim));
  auto full_mse = [&](const QFunction& f) {
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double e = f.forward(xs[i]) - data.samples[i].q;
      sum += e * e;
    }
    return sum / static_cast<double>(xs.size());
  };

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<double> m(p.size(), 0.0), v(p.size(), 0.0), grad(p.size());
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(cfg.seed, 0x51f7));
  QFunction best = q;
  double best_mse = full_mse(q);
  std::uint64_t t = 0;
  if (report) {
    report->constant_mse = base;
    report->epoch_mse.clear();
  }
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double n = static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& x = xs[order[k]];
        q.accumulate_gradient(x, 2.0 * (q.forward(x) - data.samples[order[k]].q) / n, grad);
      }
      ++t;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        p[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
      q.set_parameters(p);
    }
    const double e = full_mse(q);
    if (e <= best_mse) {
      best = q;
      best_mse = e;
    }
    if (report) report->epoch_mse.push_back(best_mse);
  }
  return best;
}

double qfn_gradient_check(const QFunction& qfn, const QDataset& data, double epsilon, std::size_t max_coords,
                          std::uint64_t seed) {
  if (qfn.kind() != QfnKind::featurized) throw UnsupportedKindError("gradient check needs a featurized q-function");
  if (!(epsilon > 0.0)) throw ContractError("epsilon must be positive");
  const auto analytic = qfn.mse_gradient(data);
  const auto& p0 = qfn.parameters();

  std::vector<std::size_t> coords(p0.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > max_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coords; ++i) std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(max_coords);
  }

  QFunction probe = qfn;
  std::vector<double> p = p0;
  double worst = 0.0;
  for (std::size_t c : coords) {
    p[c] = p0[c] + epsilon;
    probe.set_parameters(p);
    const double up = probe.mse(data);
    p[c] = p0[c] - epsilon;
    probe.set_parameters(p);
    const double down = probe.mse(data);
    p[c] = p0[c];
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[c] - numeric) / denom);
  }
  return worst;
}

}  // namespace qlass
