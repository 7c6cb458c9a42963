#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qlass {

// Error categories surface as the machine-readable prefix of CLI failures.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct TaskNotFoundError : Error {
  explicit TaskNotFoundError(const std::string& id) : Error("task-not-found", "unknown task id '" + id + "'") {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct DataValidationError : Error {
  explicit DataValidationError(const std::string& m) : Error("data-validation", m) {}
};
struct OracleTooLargeError : Error {
  explicit OracleTooLargeError(const std::string& m) : Error("oracle-too-large", m) {}
};
struct StageDependencyError : Error {
  explicit StageDependencyError(const std::string& m) : Error("stage-dependency", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};
struct UnsupportedKindError : Error {
  explicit UnsupportedKindError(const std::string& m) : Error("unsupported-kind", m) {}
};

/// Splitmix-seeded xoshiro256** generator. Bit-exact across platforms, unlike
/// the standard distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Box-Muller).
  double normal();

  /// Independent child stream; the parent state is not advanced.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t s_[4];
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Whitespace tokenization; the canonical form of any token sequence.
std::vector<std::string> tokenize(std::string_view text);
/// Collapses runs of whitespace to single spaces and trims.
std::string normalize_tokens(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::vector<std::string> split(std::string_view text, char sep);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);
double parse_double(std::string_view s);

std::uint64_t fnv1a(std::string_view data);

/// Runs fn(0..n-1) on up to `workers` threads. Results must be written to
/// per-index slots so the outcome does not depend on scheduling. The first
/// exception (lowest index) is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace qlass
