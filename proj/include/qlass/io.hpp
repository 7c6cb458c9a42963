#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qlass/state.hpp"

namespace qlass {

class Environment;
struct ExpertDataset;

/// Writes to a sibling temp file, then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

/// One trajectory per line:
/// {"task_id":..,"steps":[{"action":..,"observation":..,"reward":..}],"final_reward":..,"meta":{"seed":..,"strategy":..}}
std::string trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const std::string& line);

std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajs);
void write_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories(const std::filesystem::path& path);

/// Resolves each line's task_id against the environment and validates replay.
ExpertDataset read_expert_dataset(const std::filesystem::path& path, const Environment& env);
void write_expert_dataset(const std::filesystem::path& path, const ExpertDataset& data);

}  // namespace qlass
