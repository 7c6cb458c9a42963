#include "qlass/toy_envs.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>

namespace qlass {

namespace {

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::string cell(int r, int c) { return std::to_string(r) + " " + std::to_string(c); }

}  // namespace

// ---------------------------------------------------------------- KeyDoorGrid

TaskSpec KeyDoorGrid::make_task(int size, int sr, int sc, int kr, int kc, int dr, int dc, int slack) {
  TaskSpec t;
  t.id = "kd" + std::to_string(size) + "-" + std::to_string(sr) + "." + std::to_string(sc) + "-" +
         std::to_string(kr) + "." + std::to_string(kc) + "-" + std::to_string(dr) + "." + std::to_string(dc);
  t.description = "grid " + std::to_string(size) + " starting from " + cell(sr, sc) + " take the key at " +
                  cell(kr, kc) + " then open the door at " + cell(dr, dc);
  const int optimal = std::abs(sr - kr) + std::abs(sc - kc) + 1 + std::abs(kr - dr) + std::abs(kc - dc) + 1;
  t.max_steps = optimal + slack;
  t.params = {size, sr, sc, kr, kc, dr, dc};
  return t;
}

KeyDoorGrid::KeyDoorGrid(const KeyDoorConfig& cfg) {
  if (cfg.size < 2) throw ConfigError("keydoor size must be >= 2");
  if (cfg.slack < 0) throw ConfigError("keydoor slack must be >= 0");
  const int n = cfg.size;
  std::vector<std::array<int, 6>> combos;
  for (int s = 0; s < n * n; ++s)
    for (int k = 0; k < n * n; ++k)
      for (int d = 0; d < n * n; ++d)
        if (s != k && k != d && s != d) combos.push_back({s / n, s % n, k / n, k % n, d / n, d % n});
  if (static_cast<std::size_t>(cfg.num_tasks + cfg.num_heldout) > combos.size() || cfg.num_tasks < 0 ||
      cfg.num_heldout < 0)
    throw ConfigError("keydoor grid of size " + std::to_string(n) + " has only " + std::to_string(combos.size()) +
                      " distinct tasks");
  Rng rng(mix_seed(cfg.seed, 0x6b6579646f6f72ULL));
  shuffle(combos, rng);
  for (int i = 0; i < cfg.num_tasks + cfg.num_heldout; ++i) {
    const auto& c = combos[i];
    TaskSpec t = make_task(n, c[0], c[1], c[2], c[3], c[4], c[5], cfg.slack);
    if (i < cfg.num_tasks) {
      t.expert = solve(t);
      tasks_.push_back(std::move(t));
    } else {
      heldout_.push_back(std::move(t));
    }
  }
}

KeyDoorGrid::KeyDoorGrid(int size, int sr, int sc, int kr, int kc, int dr, int dc, int slack) {
  TaskSpec t = make_task(size, sr, sc, kr, kc, dr, dc, slack);
  validate_task(t);
  t.expert = solve(t);
  tasks_.push_back(std::move(t));
}

void KeyDoorGrid::validate_task(const TaskSpec& task) const {
  const auto& p = task.params;
  if (p.size() != 7) throw ContractError("task '" + task.id + "' is not a keydoor task");
  const int n = p[0];
  for (int i = 1; i < 7; ++i)
    if (p[i] < 0 || p[i] >= n) throw ContractError("task '" + task.id + "' has a cell outside the grid");
  if ((p[1] == p[3] && p[2] == p[4]) || (p[3] == p[5] && p[4] == p[6]) || (p[1] == p[5] && p[2] == p[6]))
    throw ContractError("task '" + task.id + "' has overlapping start/key/door cells");
}

std::vector<int> KeyDoorGrid::initial_internal(const TaskSpec& task) const {
  return {task.params[1], task.params[2], 0};
}

std::vector<ActionToken> KeyDoorGrid::enumerate_actions(const TaskSpec& task, std::span<const int> in) const {
  const int n = task.params[0];
  std::vector<ActionToken> acts;
  if (in[0] > 0) acts.emplace_back("up");
  if (in[0] < n - 1) acts.emplace_back("down");
  if (in[1] > 0) acts.emplace_back("left");
  if (in[1] < n - 1) acts.emplace_back("right");
  acts.emplace_back("take key");
  acts.emplace_back("use door");
  acts.emplace_back("stop");
  return acts;
}

KeyDoorGrid::Transition KeyDoorGrid::apply(const TaskSpec& task, std::vector<int>& in, std::string_view action) const {
  const auto& p = task.params;
  const bool at_key = in[0] == p[3] && in[1] == p[4];
  const bool at_door = in[0] == p[5] && in[1] == p[6];
  if (action == "take key") {
    if (at_key && in[2] == 0) {
      in[2] = 1;
      return {"picked up key", 0.0, false};
    }
    return {std::string(kNothingHappened), 0.0, false};
  }
  if (action == "use door") {
    if (!at_door) return {std::string(kNothingHappened), 0.0, false};
    if (in[2] == 1) return {"door opened", 1.0, true};
    return {"door forced open without key", 0.5, true};
  }
  if (action == "stop") return {"stopped", 0.0, true};

  if (action == "up") --in[0];
  else if (action == "down") ++in[0];
  else if (action == "left") --in[1];
  else if (action == "right") ++in[1];
  std::string obs = "at " + cell(in[0], in[1]);
  if (in[0] == p[3] && in[1] == p[4] && in[2] == 0) obs += " key here";
  if (in[0] == p[5] && in[1] == p[6]) obs += " door here";
  return {obs, 0.0, false};
}

std::optional<Trajectory> KeyDoorGrid::solve(const TaskSpec& task) const {
  validate_task(task);
  const auto& p = task.params;
  std::vector<ActionToken> actions;
  auto walk = [&](int r0, int c0, int r1, int c1) {
    for (; r0 < r1; ++r0) actions.emplace_back("down");
    for (; r0 > r1; --r0) actions.emplace_back("up");
    for (; c0 < c1; ++c0) actions.emplace_back("right");
    for (; c0 > c1; --c0) actions.emplace_back("left");
  };
  walk(p[1], p[2], p[3], p[4]);
  actions.emplace_back("take key");
  walk(p[3], p[4], p[5], p[6]);
  actions.emplace_back("use door");
  Trajectory t = play(*this, task, actions);
  t.meta.strategy = "expert";
  return t;
}

// ------------------------------------------------------------------ SynthShop

namespace {

constexpr std::array<const char*, 8> kKeywords = {"shirt", "shoes", "lamp", "mug", "jacket", "backpack", "watch", "pillow"};
constexpr std::array<const char*, 8> kColors = {"red", "blue", "green", "black", "white", "yellow", "purple", "orange"};
constexpr std::array<const char*, 8> kSizes = {"small", "medium", "large", "huge", "tiny", "regular", "compact", "giant"};
constexpr std::array<const char*, 3> kInfoPages = {"description", "features", "reviews"};

enum ShopSlot { kPage = 0, kKeyword = 1, kColor = 2, kSize = 3 };

}  // namespace

TaskSpec SynthShop::make_task(int options, int keyword, int color, int size, int max_steps, int info_pages) {
  TaskSpec t;
  t.id = std::string("shop-") + kKeywords.at(keyword) + "-" + kColors.at(color) + "-" + kSizes.at(size);
  t.description = std::string("i am looking for a ") + kColors[color] + " " + kKeywords[keyword] + " in size " +
                  kSizes[size];
  t.max_steps = max_steps;
  t.params = {options, keyword, color, size, info_pages};
  return t;
}

SynthShop::SynthShop(const SynthShopConfig& cfg) {
  if (cfg.options < 2 || cfg.options > 8) throw ConfigError("shop options must be in [2, 8]");
  if (cfg.max_steps < 1) throw ConfigError("shop max_steps must be >= 1");
  if (cfg.info_pages < 0 || cfg.info_pages > 3) throw ConfigError("shop info_pages must be in [0, 3]");
  const int n = cfg.options;
  std::vector<std::array<int, 3>> combos;
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < n; ++c)
      for (int s = 0; s < n; ++s) combos.push_back({k, c, s});
  if (static_cast<std::size_t>(cfg.num_tasks + cfg.num_heldout) > combos.size() || cfg.num_tasks < 0 ||
      cfg.num_heldout < 0)
    throw ConfigError("shop with " + std::to_string(n) + " options has only " + std::to_string(combos.size()) +
                      " distinct tasks");
  Rng rng(mix_seed(cfg.seed, 0x73686f70ULL));
  shuffle(combos, rng);
  for (int i = 0; i < cfg.num_tasks + cfg.num_heldout; ++i) {
    TaskSpec t = make_task(n, combos[i][0], combos[i][1], combos[i][2], cfg.max_steps, cfg.info_pages);
    if (i < cfg.num_tasks) {
      t.expert = solve(t);
      tasks_.push_back(std::move(t));
    } else {
      heldout_.push_back(std::move(t));
    }
  }
}

void SynthShop::validate_task(const TaskSpec& task) const {
  const auto& p = task.params;
  if (p.size() != 5 || p[0] < 2 || p[0] > 8 || p[4] < 0 || p[4] > 3)
    throw ContractError("task '" + task.id + "' is not a shop task");
  for (int i = 1; i < 4; ++i)
    if (p[i] < 0 || p[i] >= p[0]) throw ContractError("task '" + task.id + "' has an attribute out of range");
}

std::vector<int> SynthShop::initial_internal(const TaskSpec&) const { return {0, -1, -1, -1}; }

std::vector<ActionToken> SynthShop::enumerate_actions(const TaskSpec& task, std::span<const int> in) const {
  const int n = task.params[0];
  std::vector<ActionToken> acts;
  if (in[kPage] == 0) {
    for (int k = 0; k < n; ++k) acts.push_back(std::string("search ") + kKeywords[k]);
    return acts;
  }
  if (in[kColor] < 0)
    for (int c = 0; c < n; ++c) acts.push_back(std::string("color ") + kColors[c]);
  if (in[kSize] < 0)
    for (int s = 0; s < n; ++s) acts.push_back(std::string("size ") + kSizes[s]);
  for (int i = 0; i < task.params[4]; ++i) acts.push_back(std::string("view ") + kInfoPages[i]);
  acts.emplace_back("buy");
  acts.emplace_back("back");
  return acts;
}

SynthShop::Transition SynthShop::apply(const TaskSpec& task, std::vector<int>& in, std::string_view action) const {
  const auto& p = task.params;
  const auto words = tokenize(action);
  auto index_of = [&](const auto& names, const std::string& w) {
    for (int i = 0; i < p[0]; ++i)
      if (w == names[i]) return i;
    return -1;
  };
  if (words[0] == "search") {
    in = {1, index_of(kKeywords, words[1]), -1, -1};
    return {std::string("showing ") + kKeywords[in[kKeyword]] + " items", 0.0, false};
  }
  if (words[0] == "color") {
    in[kColor] = index_of(kColors, words[1]);
    return {std::string("selected color ") + kColors[in[kColor]], 0.0, false};
  }
  if (words[0] == "size") {
    in[kSize] = index_of(kSizes, words[1]);
    return {std::string("selected size ") + kSizes[in[kSize]], 0.0, false};
  }
  if (words[0] == "view") return {words[1] + " of the " + kKeywords[in[kKeyword]], 0.0, false};
  if (words[0] == "back") {
    in = {0, -1, -1, -1};
    return {"back to search", 0.0, false};
  }
  // buy
  const int matched = (in[kKeyword] == p[1]) + (in[kColor] == p[2]) + (in[kSize] == p[3]);
  std::string obs = std::string("bought ") + kKeywords[in[kKeyword]] + " " +
                    (in[kColor] >= 0 ? kColors[in[kColor]] : "nocolor") + " " +
                    (in[kSize] >= 0 ? kSizes[in[kSize]] : "nosize");
  return {obs, matched / 3.0, true};
}

std::optional<Trajectory> SynthShop::solve(const TaskSpec& task) const {
  validate_task(task);
  const auto& p = task.params;
  Trajectory t = play(*this, task,
                      {std::string("search ") + kKeywords[p[1]], std::string("color ") + kColors[p[2]],
                       std::string("size ") + kSizes[p[3]], "buy"});
  t.meta.strategy = "expert";
  return t;
}

std::unique_ptr<Environment> make_environment(const EnvConfig& cfg) {
  if (cfg.kind == "keydoor")
    return std::make_unique<KeyDoorGrid>(KeyDoorConfig{cfg.size, cfg.num_tasks, cfg.num_heldout, cfg.seed, cfg.slack});
  if (cfg.kind == "shop")
    return std::make_unique<SynthShop>(
        SynthShopConfig{cfg.size, cfg.num_tasks, cfg.num_heldout, cfg.seed, cfg.max_steps, cfg.info_pages});
  throw ConfigError("unknown environment kind '" + cfg.kind + "' (expected keydoor or shop)");
}

}  // namespace qlass
