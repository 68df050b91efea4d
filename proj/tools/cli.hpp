#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "mbatf/corpus.hpp"
#include "mbatf/metaloop.hpp"

namespace mbatf::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigFailure = 1,
  kDataFailure = 2,
  kCheckFailure = 3,
};

struct RunConfig {
  std::string mode;
  std::string train_data;
  std::string test_data;
  std::string glove;
  std::string checkpoint;  // default: <out>/checkpoint.bin
  std::string out = "run";
  bool synth = false;
  SynthConfig synth_config{16, 60, 200, 0.6};
  ModelConfig model;
  std::size_t episodes = 10000;
  std::size_t eval_tasks = 1000;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t log_every = 100;
  bool f64 = false;
};

nlohmann::ordered_json to_json(const RunConfig& config);

// Parses flags (MBATF_* environment variables and --config files fill unset flags),
// runs the selected mode and returns its exit code. Messages go to stdout/stderr.
int run(int argc, const char* const* argv);

}  // namespace mbatf::cli
