#pragma once

// Synthetic exact-match tasks. Task symbols are 0..vocab_size-1; the model
// vocabulary adds the mask token on top, so a model needs
// vocab_size + 1 entries.
//
//   copy        answer = prompt
//   reverse     answer = prompt reversed
//   modular_sum answer[j] = (prompt[0] + ... + prompt[P - A + j]) mod m,
//               digits drawn from 0..m-1

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "t3d/denoiser.hpp"
#include "t3d/types.hpp"

namespace t3d {

enum class TaskKind { Copy, Reverse, ModularSum };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  int vocab_size = 32;  // task symbols, mask excluded
  int prompt_len = 16;
  int answer_len = 16;
  int modulus = 5;  // modular_sum only
  std::uint64_t train_seed = 1;
  std::uint64_t heldout_seed = 2;

  void validate() const;
  // Prompt + answer must fit the model, align to its blocks, and the task
  // symbols must leave room for the mask token.
  void check_capacity(const ModelConfig& model) const;
  int sequence_length() const { return prompt_len + answer_len; }
  bool operator==(const TaskSpec&) const = default;
};

struct TaskExample {
  Tokens prompt;
  Tokens answer;

  Tokens sequence() const;
};

Tokens task_answer(const TaskSpec& spec, const Tokens& prompt);

// n independent examples; deterministic in the rng state.
std::vector<TaskExample> generate_task(const TaskSpec& spec, std::size_t n, Rng& rng);

// Held-out and validation prompts are fixed by heldout_seed; training draws
// reject any prompt that appears in either, so the splits are disjoint.
class TaskSampler {
 public:
  TaskSampler(TaskSpec spec, std::size_t n_heldout, std::size_t n_validation = 0);

  const TaskSpec& spec() const { return spec_; }
  const std::vector<TaskExample>& heldout() const { return heldout_; }
  const std::vector<TaskExample>& validation() const { return validation_; }
  bool is_reserved(const Tokens& prompt) const { return reserved_.count(prompt) != 0; }

  TaskExample sample_train(Rng& rng) const;

 private:
  TaskSpec spec_;
  std::vector<TaskExample> heldout_;
  std::vector<TaskExample> validation_;
  std::set<Tokens> reserved_;
};

}  // namespace t3d
