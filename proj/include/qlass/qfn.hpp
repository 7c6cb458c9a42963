#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qlass/state.hpp"
#include "qlass/tree.hpp"

namespace qlass {

enum class QfnKind { tabular, featurized };
std::string to_string(QfnKind k);
QfnKind qfn_kind_from_string(const std::string& name);

struct QTrainConfig {
  QfnKind kind = QfnKind::featurized;
  int epochs = 2;
  double learning_rate = 0.02;
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Tabular fallback for unseen (state, action) pairs.
  double default_unseen_q = 0.0;
  /// Hidden width of the featurized head; 0 gives a linear model.
  int hidden = 32;
  int feature_dim = 1024;
};

struct QTrainReport {
  /// MSE of the constant predictor at the target mean.
  double constant_mse = 0.0;
  /// Training-set MSE of the retained model after each epoch.
  std::vector<double> epoch_mse;
};

/// Hashed sparse feature vector, sorted by index with duplicates summed.
using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

/// Hand-crafted state-action features hashed into `dim` buckets: action verb
/// and tokens, depth, previous verb, overlap between the action's arguments
/// and the task description, repeats, and the latest observation.
SparseFeatures qfn_features(const HistoryState& state, const ActionToken& action, int dim);

class QFunction {
 public:
  static QFunction make_tabular(double default_unseen_q = 0.0);
  /// Featurized model with every parameter drawn from N(0, scale^2).
  static QFunction make_featurized(int dim, int hidden, std::uint64_t seed, double scale = 0.1);

  QfnKind kind() const noexcept { return kind_; }
  int feature_dim() const noexcept { return dim_; }
  int hidden() const noexcept { return hidden_; }

  /// Pure and thread-safe.
  double predict(const HistoryState& state, const ActionToken& action) const;
  double mse(const QDataset& data) const;

  /// Featurized parameters, laid out [W1 (dim x hidden, feature-major), b1,
  /// w2, b2], or [w (dim), b] for a linear head.
  const std::vector<double>& parameters() const noexcept { return params_; }
  void set_parameters(std::vector<double> p);
  /// Analytic gradient of the mean squared error over `data`.
  std::vector<double> mse_gradient(const QDataset& data) const;

  const std::map<std::string, double>& table() const noexcept { return table_; }
  double default_unseen_q() const noexcept { return default_q_; }
  void set_entry(const HistoryState& state, const ActionToken& action, double q);

  void save(const std::filesystem::path& path) const;
  static QFunction load(const std::filesystem::path& path);
  std::string serialize() const;
  static QFunction deserialize(const std::string& text);

  // Internal: forward/backward on a precomputed feature vector.
  double forward(const SparseFeatures& x) const;
  void accumulate_gradient(const SparseFeatures& x, double dloss_dy, std::vector<double>& grad) const;

 private:
  QfnKind kind_ = QfnKind::tabular;
  double default_q_ = 0.0;
  std::map<std::string, double> table_;
  int dim_ = 0;
  int hidden_ = 0;
  std::vector<double> params_;
};

/// Fits a Q-function by minimizing MSE. Tabular: per-key mean of targets.
/// Featurized: Adam over shuffled minibatches starting from a head whose output
/// equals the target mean; after each epoch the model with the lowest
/// training MSE seen so far is retained.
QFunction train_qfn(const QDataset& data, const QTrainConfig& config, QTrainReport* report = nullptr);

/// Max relative error between the analytic MSE gradient and central finite
/// differences at the model's current parameters. Models with more than
/// `max_coords` parameters are checked on a seeded subset of coordinates.
double qfn_gradient_check(const QFunction& qfn, const QDataset& data, double epsilon = 1e-5,
                          std::size_t max_coords = 4000, std::uint64_t seed = 0);

}  // namespace qlass
