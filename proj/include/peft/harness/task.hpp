#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "peft/model/transformer.hpp"

namespace peft {

enum class TaskKind { copy, adding, classify };

std::string_view task_name(TaskKind k);
std::optional<TaskKind> parse_task(std::string_view name);

/// Synthetic sequence tasks over `vocab` tokens.
///
/// copy:     every position is labelled with its own token.
/// adding:   tokens encode value + (vocab/2)·marked with value < vocab/2 and
///           exactly two marked positions; the last position is labelled
///           with the sum of the two marked values.
/// classify: the last position is labelled with the parity of the number of
///           tokens ≥ vocab/2.
/// Unlabelled positions carry target -1.
struct TaskSpec {
  TaskKind kind = TaskKind::copy;
  std::size_t seq_len = 16;
  std::size_t vocab = 16;
  std::size_t train_size = 2000;
  std::size_t val_size = 500;
  std::uint64_t seed = 1;

  bool operator==(const TaskSpec&) const = default;
};

struct Example {
  std::vector<int> tokens;
  std::vector<int> targets;
};

using Dataset = std::vector<Example>;

struct TaskData {
  Dataset train;
  Dataset val;
};

/// Deterministic in the spec. Sequences are distinct across the whole draw,
/// so the split is disjoint.
TaskData make_task(const TaskSpec& spec);

/// Packs examples[begin, end) (all of equal length) into a Batch.
Batch make_batch(const Dataset& data, std::span<const std::size_t> order, std::size_t begin, std::size_t end);

/// Mean cross-entropy over every labelled position in the dataset.
double evaluate(const ModelWeights& w, const Dataset& data, std::size_t batch_size = 128);

}  // namespace peft
