#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "qlass/env.hpp"

namespace qlass {

struct KeyDoorConfig {
  int size = 3;
  int num_tasks = 40;
  int num_heldout = 0;
  std::uint64_t seed = 1;
  /// Step limit is the optimal solution length plus this slack.
  int slack = 2;
};

/// Pick up the key, then use the door. Using the door without the key ends the
/// episode with partial reward 0.5; "stop" ends it with 0.
///
/// internal = {row, col, has_key}
/// params   = {size, start_r, start_c, key_r, key_c, door_r, door_c}
class KeyDoorGrid final : public Environment {
 public:
  explicit KeyDoorGrid(const KeyDoorConfig& cfg);
  /// A single hand-specified task.
  KeyDoorGrid(int size, int start_r, int start_c, int key_r, int key_c, int door_r, int door_c, int slack = 2);

  std::string_view kind() const override { return "keydoor"; }
  std::optional<Trajectory> solve(const TaskSpec& task) const override;

  static TaskSpec make_task(int size, int start_r, int start_c, int key_r, int key_c, int door_r, int door_c,
                            int slack);

 protected:
  void validate_task(const TaskSpec& task) const override;
  std::vector<int> initial_internal(const TaskSpec& task) const override;
  std::vector<ActionToken> enumerate_actions(const TaskSpec& task, std::span<const int> internal) const override;
  Transition apply(const TaskSpec& task, std::vector<int>& internal, std::string_view action) const override;
};

struct SynthShopConfig {
  /// Options per attribute (keyword, color, size); at most 8.
  int options = 6;
  int num_tasks = 100;
  int num_heldout = 100;
  std::uint64_t seed = 1;
  int max_steps = 5;
  /// Read-only "view <page>" actions on the product page; they cost a step and
  /// change nothing.
  int info_pages = 0;
};

/// Search a keyword, pick a color and a size, then buy. The purchase reward is
/// the fraction of the three target attributes that match.
///
/// internal = {page (0 search, 1 product), keyword, color, size}; -1 = unset
/// params   = {options, keyword, color, size, info_pages}
class SynthShop final : public Environment {
 public:
  explicit SynthShop(const SynthShopConfig& cfg);

  std::string_view kind() const override { return "shop"; }
  std::optional<Trajectory> solve(const TaskSpec& task) const override;

  static TaskSpec make_task(int options, int keyword, int color, int size, int max_steps, int info_pages = 0);

 protected:
  void validate_task(const TaskSpec& task) const override;
  std::vector<int> initial_internal(const TaskSpec& task) const override;
  std::vector<ActionToken> enumerate_actions(const TaskSpec& task, std::span<const int> internal) const override;
  Transition apply(const TaskSpec& task, std::vector<int>& internal, std::string_view action) const override;
};

struct EnvConfig {
  std::string kind = "keydoor";
  int size = 3;
  int num_tasks = 40;
  int num_heldout = 0;
  std::uint64_t seed = 1;
  int slack = 2;
  int max_steps = 5;
  int info_pages = 0;
};

std::unique_ptr<Environment> make_environment(const EnvConfig& cfg);

}  // namespace qlass
