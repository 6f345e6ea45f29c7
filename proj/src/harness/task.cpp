#include "peft/harness/task.hpp"

#include <numeric>
#include <random>
#include <set>

#include "peft/numerics/errors.hpp"

namespace peft {

std::string_view task_name(TaskKind k) {
  switch (k) {
    case TaskKind::copy:
      return "copy";
    case TaskKind::adding:
      return "adding";
    case TaskKind::classify:
      return "classify";
  }
  return "?";
}

std::optional<TaskKind> parse_task(std::string_view name) {
  for (auto k : {TaskKind::copy, TaskKind::adding, TaskKind::classify})
    if (task_name(k) == name) return k;
  return std::nullopt;
}

namespace {

Example draw(const TaskSpec& spec, std::mt19937_64& rng) {
  const std::size_t n = spec.seq_len;
  const int half = int(spec.vocab / 2);
  Example ex;
  ex.targets.assign(n, -1);
  switch (spec.kind) {
    case TaskKind::copy: {
      std::uniform_int_distribution<int> tok(0, int(spec.vocab) - 1);
      for (std::size_t i = 0; i < n; ++i) ex.tokens.push_back(tok(rng));
      ex.targets = ex.tokens;
      break;
    }
    case TaskKind::adding: {
      std::uniform_int_distribution<int> val(0, half - 1);
      std::uniform_int_distribution<std::size_t> pos(0, n - 1);
      for (std::size_t i = 0; i < n; ++i) ex.tokens.push_back(val(rng));
      const std::size_t p1 = pos(rng);
      std::size_t p2 = pos(rng);
      while (p2 == p1) p2 = pos(rng);
      ex.tokens[p1] += half;
      ex.tokens[p2] += half;
      ex.targets[n - 1] = (ex.tokens[p1] - half) + (ex.tokens[p2] - half);
      break;
    }
    case TaskKind::classify: {
      std::uniform_int_distribution<int> tok(0, int(spec.vocab) - 1);
      int marked = 0;
      for (std::size_t i = 0; i < n; ++i) {
        ex.tokens.push_back(tok(rng));
        marked += ex.tokens.back() >= half;
      }
      ex.targets[n - 1] = marked % 2;
      break;
    }
  }
  return ex;
}

}  // namespace

TaskData make_task(const TaskSpec& spec) {
  if (spec.train_size == 0 || spec.val_size == 0 || spec.seq_len == 0) {
    throw InvalidInput("make_task: sizes must be positive");
  }
  if (spec.kind == TaskKind::adding && (spec.seq_len < 2 || spec.vocab < 4)) {
    throw InvalidInput("make_task: adding needs seq_len >= 2 and vocab >= 4");
  }
  if (spec.kind != TaskKind::copy && spec.vocab < 2) throw InvalidInput("make_task: vocab must be >= 2");
  std::seed_seq seq{spec.seed, std::uint64_t{0x7461736b}};
  std::mt19937_64 rng(seq);
  const std::size_t total = spec.train_size + spec.val_size;
  std::set<std::vector<int>> seen;
  Dataset all;
  all.reserve(total);
  std::size_t attempts = 0;
  while (all.size() < total) {
    if (++attempts > 50 * total) throw InvalidInput("make_task: cannot draw enough distinct sequences");
    auto ex = draw(spec, rng);
    if (seen.insert(ex.tokens).second) all.push_back(std::move(ex));
  }
  TaskData out;
  out.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + std::ptrdiff_t(spec.train_size)));
  out.val.assign(std::make_move_iterator(all.begin() + std::ptrdiff_t(spec.train_size)), std::make_move_iterator(all.end()));
  return out;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> order, std::size_t begin, std::size_t end) {
  if (begin >= end || end > order.size()) throw InvalidInput("make_batch: empty or out-of-range slice");
  Batch b;
  b.size = end - begin;
  b.len = data[order[begin]].tokens.size();
  for (std::size_t k = begin; k < end; ++k) {
    const auto& ex = data[order[k]];
    if (ex.tokens.size() != b.len) throw InvalidInput("make_batch: ragged sequence lengths");
    b.tokens.insert(b.tokens.end(), ex.tokens.begin(), ex.tokens.end());
    b.targets.insert(b.targets.end(), ex.targets.begin(), ex.targets.end());
  }
  return b;
}

double evaluate(const ModelWeights& w, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw InvalidInput("evaluate: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    auto batch = make_batch(data, order, b, std::min(data.size(), b + batch_size));
    std::size_t n = 0;
    for (int t : batch.targets) n += t >= 0;
    total += loss(forward(w, batch).logits, batch.targets) * double(n);
    counted += n;
  }
  return counted ? total / double(counted) : 0.0;
}

}  // namespace peft
