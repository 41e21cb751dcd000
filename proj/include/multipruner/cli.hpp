#pragma once

// Command-line driver. Exit codes: 0 success, 1 configuration or input
// error, 2 a pruning stage ran out of blocks, 3 any other failure.

#include <filesystem>
#include <string>
#include <vector>

#include "multipruner/config_io.hpp"
#include "multipruner/evo.hpp"

namespace multipruner {

/// Effective configuration of prune / evolve / sweep runs. Relative paths in
/// a config file are resolved against the file's directory.
struct RunConfig {
  std::filesystem::path checkpoint;
  std::filesystem::path calibration;  // token file
  std::filesystem::path heldout;      // optional token file
  std::filesystem::path output;
  int calib_samples = 256;        // depth stage; width stages use the first calib_samples_width
  int calib_samples_width = 128;
  int max_seq_len = 128;
  int heldout_samples = 64;
  std::uint64_t seed = 0;
  int workers = 0;
  bool verbose = false;
  PruneConfig prune;    // calibration fields mirror the ones above
  SearchConfig search;  // same
};

/// Throws InputError on unknown keys or bad values.
RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json to_json(const RunConfig& config);

Json to_json(const TraceStep& step);

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace multipruner
