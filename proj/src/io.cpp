#include "qlass/io.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "qlass/common.hpp"
#include "qlass/env.hpp"
#include "qlass/policy.hpp"

namespace qlass {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void write_file_atomic(const fs::path& path, const std::string& contents) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(tid % 100000) + "-" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out.flush()) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string trajectory_to_json(const Trajectory& traj) {
  ordered_json j;
  j["task_id"] = traj.task_id;
  j["steps"] = ordered_json::array();
  for (const auto& s : traj.steps) {
    ordered_json step;
    step["action"] = s.action;
    step["observation"] = s.observation;
    step["reward"] = s.reward;
    j["steps"].push_back(std::move(step));
  }
  j["final_reward"] = traj.final_reward;
  j["meta"]["seed"] = traj.meta.seed;
  j["meta"]["strategy"] = traj.meta.strategy;
  return j.dump();
}

Trajectory trajectory_from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    Trajectory t;
    t.task_id = j.at("task_id").get<std::string>();
    for (const auto& s : j.at("steps"))
      t.steps.push_back({s.at("action").get<std::string>(), s.at("observation").get<std::string>(),
                         s.at("reward").get<double>()});
    t.final_reward = j.at("final_reward").get<double>();
    if (j.contains("meta")) {
      const auto& m = j["meta"];
      if (m.contains("seed")) t.meta.seed = m["seed"].get<std::uint64_t>();
      if (m.contains("strategy")) t.meta.strategy = m["strategy"].get<std::string>();
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataValidationError(std::string("malformed trajectory record: ") + e.what());
  }
}

std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajs) {
  std::string out;
  for (const auto& t : trajs) {
    out += trajectory_to_json(t);
    out += '\n';
  }
  return out;
}

void write_trajectories(const fs::path& path, const std::vector<Trajectory>& trajs) {
  write_file_atomic(path, trajectories_to_jsonl(trajs));
}

std::vector<Trajectory> read_trajectories(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trajectory_from_json(line));
    } catch (const DataValidationError& e) {
      throw DataValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

ExpertDataset read_expert_dataset(const fs::path& path, const Environment& env) {
  ExpertDataset data;
  for (auto& t : read_trajectories(path)) {
    const TaskSpec& task = env.find_task(t.task_id);
    data.records.push_back({task, std::move(t)});
  }
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    try {
      validate_trajectory(env, data.records[i].task, data.records[i].trajectory);
    } catch (const Error& e) {
      throw DataValidationError(path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return data;
}

void write_expert_dataset(const fs::path& path, const ExpertDataset& data) {
  std::vector<Trajectory> trajs;
  trajs.reserve(data.size());
  for (const auto& r : data.records) trajs.push_back(r.trajectory);
  write_trajectories(path, trajs);
}

}  // namespace qlass
