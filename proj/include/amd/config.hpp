#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amd/distill.hpp"
#include "amd/harness.hpp"
#include "amd/synth.hpp"

namespace amd {

/// Malformed run configuration. The message names the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::uint64_t seed = 7;
  std::size_t count = 640;
  double train_fraction = 0.8;
  SynthOptions synth;
};

struct PathConfig {
  std::string teacher_weights;  ///< empty: <out_dir>/teacher.amdw
  std::string dataset;          ///< empty: regenerate from the data section
  std::string out_dir;          ///< empty: taken from --out
};

/// Everything a command needs besides file/command selection.
struct RunConfig {
  DistillConfig distill;
  TrainBudget teacher = default_teacher_budget();
  double teacher_min_accuracy = 0.9;
  TrainBudget student = default_student_budget();
  DataConfig data;
  std::uint64_t teacher_seed = 11;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<double> lambdas = kDefaultLambdas;
  PathConfig paths;

  /// Range checks across sections. Throws ConfigError.
  void validate() const;
};

/// Parses a JSON document. Missing keys keep their defaults; unknown keys,
/// wrong types and out-of-range values throw ConfigError.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON rendering; parse_run_config(to_json_text(c)) == c.
std::string to_json_text(const RunConfig& config, int indent = 2);

/// The default configuration as JSON, shown by --help.
std::string default_config_json();

}  // namespace amd
