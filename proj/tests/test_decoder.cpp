#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "t3d/decoder.hpp"
#include "t3d/errors.hpp"
#include "t3d/trajectory_io.hpp"
#include "test_support.hpp"

using namespace t3d;
using t3d::testing::perturbed_params;

namespace {

ModelConfig decoder_config() {
  ModelConfig c;
  c.vocab_size = 9;
  c.mask_id = 8;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 24;
  c.block_size = 4;
  return c;
}

Tokens prompt_for(std::uint64_t seed) {
  Rng rng(seed);
  Tokens p(8);
  for (auto& t : p) t = static_cast<Token>(uniform_index(rng, 8));
  return p;
}

DecodeConfig base_cfg(DecodeMode mode, int block, int steps) {
  DecodeConfig d;
  d.mode = mode;
  d.block_size = block;
  d.steps_per_block = steps;
  d.max_new_tokens = 16;
  return d;
}

}  // namespace

TEST_CASE("decode_full: one token per step, bijective order") {
  auto p = perturbed_params(decoder_config(), 1);
  Rng rng(0);
  auto traj = decode_full(p, prompt_for(1), base_cfg(DecodeMode::Full, 4, 4), rng);
  CHECK(traj.steps_total == 16);
  std::vector<int> sorted = traj.order;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 16; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i + 1);
  for (Token t : traj.output) CHECK(t != 8);

  Rng rng2(123);
  auto again = decode_full(p, prompt_for(1), base_cfg(DecodeMode::Full, 4, 4), rng2);
  CHECK(again.output == traj.output);
  CHECK(again.order == traj.order);
}

TEST_CASE("decode_static step accounting") {
  auto p = perturbed_params(decoder_config(), 2);
  Rng rng(0);
  SUBCASE("B=4, TokPS=2 gives two steps per block") {
    auto cfg = base_cfg(DecodeMode::Static, 4, 2);
    CHECK(tokps(cfg) == 2.0);
    auto traj = decode_static(p, prompt_for(2), cfg, rng);
    CHECK(traj.steps_total == 8);
    for (const auto& step : traj.per_step_positions) CHECK(step.size() == 2);
    auto within = within_block_steps(traj);
    for (int w : within) CHECK((w == 1 || w == 2));
  }
  SUBCASE("B=8, TokPS=8 commits a block per step") {
    auto traj = decode_static(p, prompt_for(3), base_cfg(DecodeMode::Static, 8, 1), rng);
    CHECK(traj.steps_total == 2);
    for (std::size_t i = 0; i < 8; ++i) CHECK(traj.order[i] == 1);
    for (std::size_t i = 8; i < 16; ++i) CHECK(traj.order[i] == 2);
  }
  SUBCASE("B=4, S=4 reproduces the full-step schedule") {
    auto st = decode_static(p, prompt_for(4), base_cfg(DecodeMode::Static, 4, 4), rng);
    auto fu = decode_full(p, prompt_for(4), base_cfg(DecodeMode::Full, 4, 4), rng);
    CHECK(st.order == fu.order);
    CHECK(st.output == fu.output);
  }
  SUBCASE("invalid step budgets") {
    CHECK_THROWS_AS(base_cfg(DecodeMode::Static, 4, 3).validate(), ConfigError);
    CHECK_THROWS_AS(base_cfg(DecodeMode::Static, 4, 5).validate(), ConfigError);
  }
}

TEST_CASE("decode_dynamic thresholds") {
  auto p = perturbed_params(decoder_config(), 3);
  Rng rng(0);
  SUBCASE("everything clears a tiny threshold: one step per block") {
    auto cfg = base_cfg(DecodeMode::Dynamic, 4, 4);
    cfg.threshold = 1e-9;
    auto traj = decode_dynamic(p, prompt_for(5), cfg, rng);
    CHECK(traj.steps_total == 4);
  }
  SUBCASE("nothing clears threshold 1: falls back to one token per step") {
    auto cfg = base_cfg(DecodeMode::Dynamic, 4, 4);
    cfg.threshold = 1.0;
    auto dyn = decode_dynamic(p, prompt_for(6), cfg, rng);
    auto full = decode_full(p, prompt_for(6), cfg, rng);
    CHECK(dyn.order == full.order);
    CHECK(dyn.output == full.output);
    CHECK(dyn.steps_total == 16);
  }
  SUBCASE("benchmark setting never exceeds generated length") {
    auto cfg = base_cfg(DecodeMode::Dynamic, 4, 4);
    cfg.threshold = 0.9;
    cfg.temperature = 0.1;
    auto traj = decode_dynamic(p, prompt_for(7), cfg, rng);
    CHECK(traj.steps_total <= static_cast<int>(traj.generated_length()));
    CHECK(traj.steps_total >= 4);
  }
}

TEST_CASE("replay reconstructs recorded decoder states") {
  auto c = decoder_config();
  std::size_t checked = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto p = perturbed_params(c, 100 + trial % 5, 1.0);
    const DecodeMode modes[] = {DecodeMode::Full, DecodeMode::Static, DecodeMode::Dynamic};
    auto cfg = base_cfg(modes[trial % 3], trial % 2 ? 8 : 4, trial % 2 ? 2 : 1);
    cfg.temperature = (trial % 4 == 0) ? 0.0 : 0.7;
    cfg.threshold = 0.3;
    Rng rng(trial);
    auto traj = decode(p, prompt_for(trial), cfg, rng, {.record_states = true});
    REQUIRE(traj.states.size() == static_cast<std::size_t>(traj.steps_total) + 1);
    for (int s = 0; s <= traj.steps_total; ++s) {
      CHECK(replay_states(traj, s, 8) == traj.states[static_cast<std::size_t>(s)]);
      ++checked;
    }
    CHECK(traj.steps_total == static_cast<int>(traj.per_step_positions.size()));
    CHECK_NOTHROW(validate_trajectory(traj));
  }
  CHECK(checked > 100);
}

TEST_CASE("replay edge cases") {
  auto p = perturbed_params(decoder_config(), 4);
  Rng rng(0);
  auto traj = decode_full(p, prompt_for(8), base_cfg(DecodeMode::Full, 4, 4), rng);
  auto final_state = replay_states(traj, traj.steps_total, 8);
  CHECK(Tokens(final_state.begin() + 8, final_state.end()) == traj.output);
  auto start = replay_states(traj, 0, 8);
  CHECK(Tokens(start.begin(), start.begin() + 8) == traj.prompt);
  for (std::size_t i = 8; i < start.size(); ++i) CHECK(start[i] == 8);
  CHECK_THROWS_AS(replay_states(traj, traj.steps_total + 1, 8), DomainError);
}

TEST_CASE("stop token halts at a block boundary") {
  auto p = perturbed_params(decoder_config(), 5);
  Rng rng(0);
  auto cfg = base_cfg(DecodeMode::Full, 4, 4);
  auto free_run = decode_full(p, prompt_for(9), cfg, rng);
  cfg.stop_token = free_run.output[1];
  auto stopped = decode_full(p, prompt_for(9), cfg, rng);
  CHECK(stopped.steps_total == 4);
  for (std::size_t i = 4; i < 16; ++i) {
    CHECK(stopped.order[i] == 0);
    CHECK(stopped.output[i] == 8);
  }
  CHECK(stopped.generated_length() == 4);
}

TEST_CASE("decoder configuration errors") {
  auto p = perturbed_params(decoder_config(), 6);
  Rng rng(0);
  auto cfg = base_cfg(DecodeMode::Full, 4, 4);
  cfg.max_new_tokens = 20;
  CHECK_THROWS_AS(decode_full(p, prompt_for(1), cfg, rng), ConfigError);
}

TEST_CASE("trajectory JSON lines round trip and validation") {
  auto p = perturbed_params(decoder_config(), 7);
  Rng rng(0);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 3; ++i) {
    auto cfg = base_cfg(DecodeMode::Static, 4, 2);
    cfg.stop_token = i == 2 ? std::optional<Token>(3) : std::nullopt;
    trajs.push_back(decode(p, prompt_for(static_cast<std::uint64_t>(i)), cfg, rng));
  }
  std::stringstream ss;
  write_trajectories(ss, trajs);
  auto text = ss.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  auto back = read_trajectories(ss);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].prompt == trajs[i].prompt);
    CHECK(back[i].output == trajs[i].output);
    CHECK(back[i].order == trajs[i].order);
    CHECK(back[i].steps_total == trajs[i].steps_total);
    CHECK(back[i].config == trajs[i].config);
    CHECK(back[i].per_step_positions == trajs[i].per_step_positions);
  }

  auto bad = trajs[0];
  bad.steps_total += 1;
  CHECK_THROWS_AS(validate_trajectory(bad), CorruptRecordError);
  bad = trajs[0];
  std::swap(bad.order[0], bad.order[15]);  // block 2 finishes before block 0
  CHECK_THROWS_AS(validate_trajectory(bad), CorruptRecordError);
  std::stringstream junk("{\"prompt\": [1,2]}\n");
  CHECK_THROWS_AS(read_trajectories(junk), CorruptRecordError);
}
