#include "t3d/trajectory_io.hpp"

#include <fstream>
#include <set>
#include <string>

#include "t3d/errors.hpp"

namespace t3d {

using nlohmann::json;

json to_json(const DecodeConfig& cfg) {
  json j;
  j["block_size"] = cfg.block_size;
  j["mode"] = to_string(cfg.mode);
  j["steps_per_block"] = cfg.steps_per_block;
  j["threshold"] = cfg.threshold;
  j["temperature"] = cfg.temperature;
  j["max_new_tokens"] = cfg.max_new_tokens;
  j["stop_token"] = cfg.stop_token ? json(*cfg.stop_token) : json(nullptr);
  return j;
}

DecodeConfig decode_config_from_json(const json& j) {
  DecodeConfig c;
  c.block_size = j.value("block_size", c.block_size);
  c.mode = decode_mode_from_string(j.value("mode", std::string("full")));
  c.steps_per_block = j.value("steps_per_block", c.steps_per_block);
  c.threshold = j.value("threshold", c.threshold);
  c.temperature = j.value("temperature", c.temperature);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  if (j.contains("stop_token") && !j["stop_token"].is_null()) c.stop_token = j["stop_token"].get<Token>();
  c.validate();
  return c;
}

json to_json(const Trajectory& traj) {
  json j;
  j["prompt"] = traj.prompt;
  j["output"] = traj.output;
  j["order"] = traj.order;
  j["steps_total"] = traj.steps_total;
  j["config"] = to_json(traj.config);
  return j;
}

void validate_trajectory(const Trajectory& traj) {
  if (traj.output.size() != traj.order.size()) throw CorruptRecordError("output and order differ in length");
  if (traj.output.size() != static_cast<std::size_t>(traj.config.max_new_tokens)) {
    throw CorruptRecordError("output length does not match max_new_tokens");
  }
  std::set<int> steps;
  for (int o : traj.order) {
    if (o < 0 || o > traj.steps_total) throw CorruptRecordError("order entry outside [0, steps_total]");
    if (o > 0) steps.insert(o);
  }
  if (static_cast<int>(steps.size()) != traj.steps_total) {
    throw CorruptRecordError("steps_total does not equal the number of distinct step indices");
  }
  // semi-autoregressive: every step of block b precedes every step of block b+1
  const std::size_t P = traj.prompt.size();
  const std::size_t B = static_cast<std::size_t>(traj.config.block_size);
  int prev_block_max = 0;
  std::size_t current = static_cast<std::size_t>(-1);
  int cur_min = 0, cur_max = 0;
  for (std::size_t i = 0; i <= traj.order.size(); ++i) {
    const bool flush = i == traj.order.size() || (P + i) / B != current;
    if (flush && current != static_cast<std::size_t>(-1) && cur_max > 0) {
      if (cur_min <= prev_block_max) throw CorruptRecordError("blocks are not decoded in order");
      prev_block_max = cur_max;
    }
    if (i == traj.order.size()) break;
    if (flush) {
      current = (P + i) / B;
      cur_min = 0;
      cur_max = 0;
    }
    const int o = traj.order[i];
    if (o > 0) {
      cur_min = cur_min == 0 ? o : std::min(cur_min, o);
      cur_max = std::max(cur_max, o);
    }
  }
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  try {
    t.prompt = j.at("prompt").get<Tokens>();
    t.output = j.at("output").get<Tokens>();
    t.order = j.at("order").get<std::vector<int>>();
    t.steps_total = j.at("steps_total").get<int>();
    t.config = decode_config_from_json(j.at("config"));
  } catch (const json::exception& e) {
    throw CorruptRecordError(std::string("trajectory record: ") + e.what());
  }
  validate_trajectory(t);
  t.per_step_positions.assign(static_cast<std::size_t>(t.steps_total), {});
  for (std::size_t i = 0; i < t.order.size(); ++i) {
    if (t.order[i] > 0) t.per_step_positions[static_cast<std::size_t>(t.order[i] - 1)].push_back(i);
  }
  return t;
}

void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trajs) {
  for (const auto& t : trajs) os << to_json(t).dump() << '\n';
}

std::vector<Trajectory> read_trajectories(std::istream& is) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw CorruptRecordError("line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(trajectory_from_json(j));
  }
  return out;
}

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_trajectories(os, trajs);
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open trajectory file " + path.string());
  return read_trajectories(is);
}

}  // namespace t3d
