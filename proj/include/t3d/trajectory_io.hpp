#pragma once

// JSON-lines trajectory datasets: one object per line with fields
// prompt, output, order (1-based steps, 0 = padding), steps_total and the
// embedded decode config.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "t3d/decoder.hpp"

namespace t3d {

nlohmann::json to_json(const DecodeConfig& cfg);
DecodeConfig decode_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const nlohmann::json& j);

// Structural checks a stored record must pass: lengths agree, steps form
// 1..steps_total, each block finishes before the next starts.
void validate_trajectory(const Trajectory& traj);

void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories(std::istream& is);

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs);
std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);

}  // namespace t3d
