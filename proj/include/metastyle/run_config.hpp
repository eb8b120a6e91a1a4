#pragma once

#include "metastyle/adapt.hpp"
#include "metastyle/meta_train.hpp"
#include "metastyle/perceptual.hpp"
#include "metastyle/transform_net.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace metastyle {

enum class Command { meta_train, adapt, stylize, optimize, interpolate, video, benchmark };

std::string_view to_string(Command command);

struct RunConfig {
  Command command = Command::meta_train;

  PerceptualConfig perceptual;
  MetaTrainConfig meta;
  AdaptConfig adapt;
  NetworkSpec network;

  std::string content_dir;
  std::string val_dir;
  std::string style_dir;
  std::string style;
  std::vector<std::string> checkpoints;
  std::string vgg;
  std::string input;
  std::string out;
  std::vector<double> weights;

  ImageInit init = ImageInit::style_neutral;
  double optimize_step_size = 1e-2;
  std::int64_t size = 256;
  std::int64_t benchmark_runs = 50;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: library default
};

// Outcome of argument parsing: either a config to run or an exit code to
// return immediately (help output, or a parse/validation failure already
// reported on stderr).
struct ParseOutcome {
  std::optional<RunConfig> config;
  int exit_code = 0;
};

// Flags override config-file values, which override defaults. Unknown flags
// and unknown config keys are rejected. Throws ValidationError when a value
// violates its type's constraint.
RunConfig parse_config(const std::vector<std::string>& args);

// parse_config with errors reported to stderr and mapped to exit code 2.
ParseOutcome parse_command_line(int argc, const char* const* argv);

// Dispatches to the command: 0 on success, 1 on runtime errors (reported on
// stderr), 2 on validation errors.
int run(const RunConfig& config);

// Runs `benchmark`: mean forward milliseconds per image at each side length.
struct BenchmarkRow {
  std::int64_t resolution;
  double ms_per_image;
};
std::vector<BenchmarkRow> benchmark_forward(const ParamSet& params,
                                            const std::vector<std::int64_t>& resolutions,
                                            std::int64_t runs, std::int64_t warmup = 3);
std::string format_benchmark(const std::vector<BenchmarkRow>& rows);

}  // namespace metastyle
