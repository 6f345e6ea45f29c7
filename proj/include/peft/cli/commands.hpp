#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace peft {

struct CommandOptions {
  std::optional<std::string> out_dir;  // overrides the config's out_dir
  std::optional<std::uint64_t> seed;   // overrides the config's seeds
  std::size_t jobs = 1;
  bool fault_cayley = false;
};

/// Exit codes. Anything nonzero means some requested work did not succeed.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;  // a property failed or a run aborted
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

/// Runs the property suite, one line per property on `out`.
int cmd_check(const CommandOptions& opts, std::ostream& out);

/// Trains config.method on the first seed; writes metrics.csv, summary.json
/// and weights.pfrg into the output directory.
int cmd_run(const std::string& config_path, const CommandOptions& opts, std::ostream& out, std::ostream& err);

/// Every method × seed cell; writes sweep.csv plus metrics_<method>_<seed>.csv
/// per cell.
int cmd_sweep(const std::string& config_path, const CommandOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace peft
