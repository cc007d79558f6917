#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "t3d/errors.hpp"
#include "t3d/trainer.hpp"
#include "t3d/trajectory_io.hpp"
#include "test_support.hpp"

using namespace t3d;
using t3d::testing::perturbed_params;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.vocab_size = 9;
  c.mask_id = 8;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_len = 16;
  c.block_size = 4;
  return c;
}

TaskSpec copy_task() {
  TaskSpec t;
  t.kind = TaskKind::Copy;
  t.vocab_size = 8;
  t.prompt_len = 4;
  t.answer_len = 4;
  return t;
}

TrainConfig quick(int steps) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.total_steps = steps;
  c.batch_size = 8;
  c.seed = 5;
  return c;
}

std::vector<Trajectory> rollouts(const DenoiserParams& p, std::size_t n, double temperature = 1.0) {
  TaskSampler tasks(copy_task(), 20);
  RolloutSpec spec;
  spec.n_prompts = n;
  spec.decode.max_new_tokens = 4;
  spec.decode.temperature = temperature;
  spec.seed = 3;
  return collect_trajectories(p, tasks, spec);
}

}  // namespace

TEST_CASE("tasks: answers, determinism and disjoint splits") {
  TaskSpec s = copy_task();
  Rng a(1), b(1);
  auto x = generate_task(s, 5, a), y = generate_task(s, 5, b);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(x[i].prompt == y[i].prompt);
    CHECK(x[i].answer == x[i].prompt);
  }
  s.kind = TaskKind::Reverse;
  CHECK(task_answer(s, {1, 2, 3, 4}) == Tokens{4, 3, 2, 1});
  TaskSpec m;
  m.kind = TaskKind::ModularSum;
  m.modulus = 7;
  m.vocab_size = 10;
  m.prompt_len = 3;
  m.answer_len = 1;
  CHECK(task_answer(m, {3, 5, 6}) == Tokens{0});
  m.answer_len = 3;
  CHECK(task_answer(m, {3, 5, 6}) == Tokens{3, 1, 0});

  TaskSampler sampler(copy_task(), 50, 20);
  CHECK(sampler.heldout().size() == 50);
  CHECK(sampler.validation().size() == 20);
  Rng rng(9);
  for (int i = 0; i < 2000; ++i) CHECK_FALSE(sampler.is_reserved(sampler.sample_train(rng).prompt));

  ModelConfig tiny = small_model();
  TaskSpec big = copy_task();
  big.prompt_len = big.answer_len = 12;
  CHECK_THROWS_AS(big.check_capacity(tiny), ConfigError);
}

TEST_CASE("AdamW: zero gradient moves only decayed matrices; first step matches hand computation") {
  auto p = perturbed_params(small_model(), 1);
  auto before = p.clone();
  p.zero_grad();
  AdamWConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.1;
  AdamW opt(cfg, p);
  CHECK(opt.step(p) == 0.0);
  auto after = p.named();
  auto orig = before.named();
  for (std::size_t k = 0; k < after.size(); ++k) {
    const double factor = after[k].second->rank() == 2 ? 1.0 - 0.01 * 0.1 : 1.0;
    for (std::size_t i = 0; i < after[k].second->size(); ++i) {
      CHECK(after[k].second->values()[i] == doctest::Approx(orig[k].second->values()[i] * factor).epsilon(1e-15));
    }
  }

  // A single step with gradient g moves each weight by lr * g / (|g| + eps).
  auto q = perturbed_params(small_model(), 2);
  auto q0 = q.clone();
  q.zero_grad();
  q.out_b.mutable_grad()[3] = 0.25;
  AdamWConfig plain;
  plain.learning_rate = 0.01;
  plain.grad_clip = 0.0;
  AdamW opt2(plain, q);
  CHECK(opt2.step(q) == doctest::Approx(0.25));
  CHECK(q.out_b.values()[3] == doctest::Approx(q0.out_b.values()[3] - 0.01 * 0.25 / (0.25 + 1e-8)).epsilon(1e-14));
  CHECK(q.out_b.values()[2] == q0.out_b.values()[2]);
}

TEST_CASE("train_teacher: deterministic and reduces the loss") {
  TaskSampler tasks(copy_task(), 20);
  auto r1 = train_teacher(tasks, small_model(), quick(20), 11);
  auto r2 = train_teacher(tasks, small_model(), quick(20), 11);
  CHECK(r1.params.bitwise_equal(r2.params));
  CHECK(train_log_csv(r1.log) == train_log_csv(r2.log));
  CHECK(train_log_csv(r1.log).rfind("step,loss_total,loss_ddo,loss_path,grad_norm,ref_round\n", 0) == 0);

  auto run = train_teacher(tasks, small_model(), quick(300), 11);
  auto avg = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += run.log[i].loss_total;
    return s / static_cast<double>(to - from);
  };
  CHECK(avg(250, 300) < 0.7 * avg(0, 20));

  int calls = 0;
  TrainHook hook;
  hook.interval = 10;
  hook.fn = [&](int step, const DenoiserParams&) {
    ++calls;
    return step >= 30;
  };
  auto early = train_teacher(tasks, small_model(), quick(100), 11, hook);
  CHECK(early.stopped_early);
  CHECK(early.steps_run == 30);
  CHECK(calls == 3);
}

TEST_CASE("train_teacher: divergence is reported") {
  TaskSampler tasks(copy_task(), 20);
  auto cfg = quick(50);
  cfg.learning_rate = 1e200;
  cfg.grad_clip = 0.0;
  CHECK_THROWS_AS(train_teacher(tasks, small_model(), cfg, 1), DivergenceError);
}

TEST_CASE("collect_trajectories: one verified record per prompt") {
  auto p = perturbed_params(small_model(), 4);
  TaskSampler tasks(copy_task(), 20);
  RolloutSpec spec;
  spec.n_prompts = 12;
  spec.decode.max_new_tokens = 4;
  RolloutStats st;
  auto trajs = collect_trajectories(p, tasks, spec, &st);
  CHECK(trajs.size() == 12);
  CHECK(st.written == 12);
  CHECK(st.dropped == 0);
  for (const auto& t : trajs) {
    CHECK(t.steps_total == static_cast<int>(t.generated_length()));
    CHECK(t.states.empty());
  }
  const auto path = std::filesystem::temp_directory_path() / "t3d_test_rollouts.jsonl";
  collect_trajectories(p, tasks, spec, path);
  auto back = load_trajectories(path);
  REQUIRE(back.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(back[i].output == trajs[i].output);
  std::filesystem::remove(path);

  // A record whose states disagree with its order fails verification.
  Rng rng(0);
  auto traj = decode(p, Tokens{1, 2, 3, 4}, spec.decode, rng, {.record_states = true});
  CHECK(replay_verified(traj, 8));
  std::swap(traj.order[0], traj.order[1]);
  CHECK_FALSE(replay_verified(traj, 8));
}

TEST_CASE("snapshot_reference: frozen deep copy") {
  auto theta = perturbed_params(small_model(), 5);
  auto ref = snapshot_reference(theta);
  CHECK(ref.bitwise_equal(theta));
  for (const auto& [name, t] : ref.named()) CHECK_FALSE(t->requires_grad());
  theta.zero_grad();
  theta.out_b.mutable_grad()[0] = 1.0;
  AdamW opt(AdamWConfig{}, theta);
  opt.step(theta);
  CHECK_FALSE(ref.bitwise_equal(theta));
  CHECK(ref.bitwise_equal(snapshot_reference(ref)));
}

TEST_CASE("distill: modes, reference schedule and determinism") {
  auto teacher = perturbed_params(small_model(), 6);
  auto data = rollouts(teacher, 16);

  SUBCASE("zero steps returns the teacher unchanged") {
    auto r = distill(data, teacher, quick(0));
    CHECK(r.params.bitwise_equal(teacher));
  }
  SUBCASE("naive_td never snapshots a reference") {
    auto cfg = quick(12);
    cfg.loss = LossKind::NaiveTd;
    auto r = distill(data, teacher, cfg);
    CHECK(r.ref_snapshots == 0);
    for (const auto& row : r.log) {
      CHECK(row.loss_ddo == 0.0);
      CHECK(row.loss_path == 0.0);
    }
  }
  SUBCASE("reference equals theta as of the last multiple of the interval") {
    auto cfg = quick(25);
    cfg.loss = LossKind::T3d;
    std::vector<DenoiserParams> thetas{teacher.clone()};
    std::vector<std::pair<int, DenoiserParams>> refs;
    TrainHook hook;
    hook.interval = 1;
    hook.fn = [&](int, const DenoiserParams& p) {
      thetas.push_back(p.clone());
      return false;
    };
    hook.on_snapshot = [&](int step, const DenoiserParams& ref) { refs.emplace_back(step, ref.clone()); };
    auto r = distill(data, teacher, cfg, hook);
    CHECK(r.ref_snapshots == 3);
    REQUIRE(refs.size() == 3);
    for (const auto& [step, ref] : refs) {
      CHECK(step % 10 == 0);
      CHECK(ref.bitwise_equal(thetas[static_cast<std::size_t>(step)]));
    }
    for (const auto& row : r.log) CHECK(row.ref_round == (row.step - 1) / 10);
    CHECK(LossConfig{}.lambda == 0.2);
    CHECK(TrainConfig{}.ref_update_interval == 10);
  }
  SUBCASE("t3d with lambda 0 matches a pure DDO run step for step") {
    auto cfg = quick(8);
    cfg.loss = LossKind::T3d;
    cfg.loss_config.lambda = 0.0;
    auto a = distill(data, teacher, cfg);
    cfg.loss = LossKind::Ddo;
    cfg.loss_config.lambda = 0.7;  // ignored by the pure DDO loss
    auto b = distill(data, teacher, cfg);
    CHECK(a.params.bitwise_equal(b.params));
    CHECK(train_log_csv(a.log) == train_log_csv(b.log));
  }
  SUBCASE("every loss runs and is deterministic") {
    for (auto kind : {LossKind::Mdm, LossKind::NaiveTd, LossKind::MarginalSd, LossKind::Ddo, LossKind::T3d}) {
      auto cfg = quick(3);
      cfg.loss = kind;
      auto a = distill(data, teacher, cfg);
      auto b = distill(data, teacher, cfg);
      CHECK(a.params.bitwise_equal(b.params));
      CHECK_FALSE(a.params.bitwise_equal(teacher));
      for (const auto& row : a.log) CHECK(std::isfinite(row.loss_total));
    }
  }
  SUBCASE("dataset must fit the student") {
    ModelConfig other = small_model();
    other.vocab_size = 6;
    other.mask_id = 5;
    auto student = perturbed_params(other, 1);
    CHECK_THROWS_AS(distill(data, student, quick(1)), ConfigError);
    auto cfg = quick(1);
    cfg.ref_update_interval = 0;
    CHECK_THROWS_AS(distill(data, teacher, cfg), ConfigError);
  }
}

TEST_CASE("sampled distillation states sit on block boundaries") {
  auto teacher = perturbed_params(small_model(), 7);
  auto data = rollouts(teacher, 8);
  Rng rng(1);
  for (int n = 0; n < 50; ++n) {
    auto s = sample_block_state(data, small_model(), 0.0, rng);
    const auto& traj = data[s.traj_index];
    const std::size_t P = traj.prompt.size();
    for (std::size_t i = P; i < s.item.state.size(); ++i) {
      const bool before_block = i / 4 < s.block;
      CHECK((s.item.state[i] != 8) == before_block);
    }
    CHECK(s.item.positions.size() == 4);
    CHECK(s.item.input == s.item.state);
  }
  auto s = sample_block_state(data, small_model(), 1.0, rng);
  for (std::size_t i : s.item.positions) CHECK(s.item.input[i] != 8);
}

TEST_CASE("fake completions follow the requested schedule") {
  auto ref = perturbed_params(small_model(), 8).frozen_copy();
  Tokens state{1, 2, 3, 4, 8, 8, 8, 8};
  std::vector<std::size_t> pos{4, 5, 6, 7};
  Rng a(2), b(2);
  auto x = complete_with_schedule(ref, state, pos, 1, 1.0, a);
  auto y = complete_with_schedule(ref, state, pos, 1, 1.0, b);
  CHECK(x == y);
  for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == state[i]);
  for (auto i : pos) CHECK(x[i] != 8);
  // Greedy four-step completion matches greedy full decoding.
  Rng c(0);
  auto greedy = complete_with_schedule(ref, state, pos, 4, 0.0, c);
  DecodeConfig dc;
  dc.max_new_tokens = 4;
  auto traj = decode_full(ref, Tokens{1, 2, 3, 4}, dc, c);
  CHECK(Tokens(greedy.begin() + 4, greedy.end()) == traj.output);
}
