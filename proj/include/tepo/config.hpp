#pragma once

// Run configuration: built-in defaults, overlaid by a JSON file, overlaid by
// command-line flags. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tepo/agent.hpp"
#include "tepo/eval.hpp"
#include "tepo/synthdata.hpp"

namespace tepo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  /// Dataset directory; empty means generate `synth_cases` cases in memory.
  std::string dir;
  SynthConfig synth;
  std::size_t synth_cases = 1000;
  std::string train_split = "train";  // train | val | test | all
  std::string eval_split = "test";
  /// Keep only the first N cases of the split (by id order); 0 keeps all.
  std::size_t max_train_cases = 0;
  std::size_t max_eval_cases = 0;
};

struct EvalConfig {
  int steps = 9;
  /// 0 uses the number of processors.
  std::size_t jobs = 0;
  std::uint64_t seed = 0;
  bool alternating_swap_fallback = true;
  bool oracle_reference = true;
};

struct BackendConfig {
  std::string kind = "mock";  // mock | remote
  std::string spawn;          // remote: command run through /bin/sh
  std::string tcp;            // remote: host:port
  bool send_truth = false;    // remote: send the mock extension fields
};

struct ReportConfig {
  /// eval: JSON report path; the CSV goes next to it with a .csv extension.
  std::string out;
  /// train: CSV log path; empty means <checkpoint>.log.csv.
  std::string train_log;
};

struct RunConfig {
  DataConfig data;
  EnvConfig env;
  MockConfig mock;
  TrainConfig train;
  EvalConfig eval;
  BackendConfig backend;
  ReportConfig report;

  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
/// Overlays `j` onto `base`. Throws ConfigError on unknown keys or bad types.
RunConfig merge_json(const RunConfig& base, const nlohmann::json& j);
RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base = {});

/// Parses "HxW" (e.g. "64x64").
std::pair<int, int> parse_size(const std::string& s);
/// Parses "host:port".
std::pair<std::string, int> parse_host_port(const std::string& s);

/// Cases of one split. "all" keeps everything. Sorted by id; `max` > 0 truncates.
std::vector<Case> load_cases(const DataConfig& d, const std::string& split, std::size_t max);

/// One backend instance per call.
BackendFactory backend_factory(const RunConfig& c);

}  // namespace tepo
