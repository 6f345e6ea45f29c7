#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "peft/harness/task.hpp"
#include "peft/harness/train.hpp"
#include "peft/model/config.hpp"

namespace peft {

/// Parse failure with its location. line is 0 for problems that are not
/// tied to a single line (e.g. a constraint between two defaulted keys).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, std::string key, const std::string& message);
  std::size_t line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

/// NaN injection into one sweep cell: poisons `method` under `seed` at `step`.
struct NanFault {
  Method method = Method::hybrid;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  bool operator==(const NanFault&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskSpec task;  // seq_len and vocab follow the model
  std::vector<Method> methods;  // sweep set; empty means {train.method}
  std::vector<std::uint64_t> seeds{1};
  std::string out_dir = "out";
  std::optional<NanFault> inject_nan;

  std::vector<Method> sweep_methods() const;
  /// TrainConfig for one cell, with the fault applied when it matches.
  TrainConfig cell_config(Method m, std::uint64_t seed) const;

  bool operator==(const RunConfig&) const = default;
};

/// Flat `key = value` lines, `#` starts a comment. Unknown or repeated keys,
/// malformed values and violated constraints raise ConfigError.
RunConfig parse_config(const std::string& text);

/// Every key with its current value; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

}  // namespace peft
