#include "t3d/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "t3d/errors.hpp"

namespace t3d {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Copy:
      return "copy";
    case TaskKind::Reverse:
      return "reverse";
    case TaskKind::ModularSum:
      return "modular_sum";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::Copy;
  if (s == "reverse") return TaskKind::Reverse;
  if (s == "modular_sum") return TaskKind::ModularSum;
  throw ConfigError("unknown task kind '" + s + "'");
}

void TaskSpec::validate() const {
  if (vocab_size < 2) throw ConfigError("task: vocab_size must be at least 2");
  if (prompt_len < 1 || answer_len < 1) throw ConfigError("task: prompt_len and answer_len must be positive");
  switch (kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
      if (answer_len != prompt_len) throw ConfigError("task: copy/reverse need answer_len == prompt_len");
      break;
    case TaskKind::ModularSum:
      if (answer_len > prompt_len) throw ConfigError("task: modular_sum needs answer_len <= prompt_len");
      if (modulus < 2 || modulus > vocab_size) throw ConfigError("task: modulus must lie in [2, vocab_size]");
      break;
  }
}

void TaskSpec::check_capacity(const ModelConfig& model) const {
  validate();
  if (sequence_length() > model.max_len) {
    throw ConfigError("task: prompt_len + answer_len = " + std::to_string(sequence_length()) +
                      " exceeds the model max_len " + std::to_string(model.max_len));
  }
  if (sequence_length() % model.block_size != 0) {
    throw ConfigError("task: sequence length must be a multiple of the model block size");
  }
  if (vocab_size + 1 > model.vocab_size || model.mask_id < vocab_size) {
    throw ConfigError("task: model vocabulary must hold every task symbol plus a distinct mask token");
  }
}

Tokens TaskExample::sequence() const {
  Tokens s = prompt;
  s.insert(s.end(), answer.begin(), answer.end());
  return s;
}

Tokens task_answer(const TaskSpec& spec, const Tokens& prompt) {
  switch (spec.kind) {
    case TaskKind::Copy:
      return prompt;
    case TaskKind::Reverse:
      return Tokens(prompt.rbegin(), prompt.rend());
    case TaskKind::ModularSum: {
      const std::size_t offset = prompt.size() - static_cast<std::size_t>(spec.answer_len);
      Tokens answer(static_cast<std::size_t>(spec.answer_len));
      int acc = 0;
      for (std::size_t i = 0; i < prompt.size(); ++i) {
        acc = (acc + prompt[i]) % spec.modulus;
        if (i >= offset) answer[i - offset] = acc;
      }
      return answer;
    }
  }
  throw ConfigError("task: unknown kind");
}

namespace {

TaskExample draw(const TaskSpec& spec, Rng& rng) {
  const std::size_t symbols =
      static_cast<std::size_t>(spec.kind == TaskKind::ModularSum ? spec.modulus : spec.vocab_size);
  TaskExample ex;
  ex.prompt.resize(static_cast<std::size_t>(spec.prompt_len));
  for (auto& t : ex.prompt) t = static_cast<Token>(uniform_index(rng, symbols));
  ex.answer = task_answer(spec, ex.prompt);
  return ex;
}

}  // namespace

std::vector<TaskExample> generate_task(const TaskSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  std::vector<TaskExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(spec, rng));
  return out;
}

TaskSampler::TaskSampler(TaskSpec spec, std::size_t n_heldout, std::size_t n_validation) : spec_(std::move(spec)) {
  spec_.validate();
  const double symbols = spec_.kind == TaskKind::ModularSum ? spec_.modulus : spec_.vocab_size;
  const double space = std::pow(symbols, spec_.prompt_len);
  if (static_cast<double>(n_heldout + n_validation) > 0.5 * space) {
    throw ConfigError("task: held-out and validation sets would cover most of the prompt space");
  }
  Rng rng(spec_.heldout_seed);
  // Reserved prompts are distinct so the held-out accuracy is over unique items.
  auto fill = [&](std::vector<TaskExample>& dst, std::size_t n) {
    while (dst.size() < n) {
      auto ex = draw(spec_, rng);
      if (reserved_.insert(ex.prompt).second) dst.push_back(std::move(ex));
    }
  };
  fill(heldout_, n_heldout);
  fill(validation_, n_validation);
}

TaskExample TaskSampler::sample_train(Rng& rng) const {
  for (;;) {
    auto ex = draw(spec_, rng);
    if (!is_reserved(ex.prompt)) return ex;
  }
}

}  // namespace t3d
