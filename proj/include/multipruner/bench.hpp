#pragma once

// Prefill / decode timing of a dense and a pruned model. A batch of b is b
// independent sequences run back to back on one thread. Decode uses the KV
// cache, whose logits are checked against full recomputation before timing.

#include <filesystem>
#include <span>
#include <vector>

#include "multipruner/model.hpp"

namespace multipruner {

struct BenchConfig {
  int prompt_len = 512;
  int new_tokens = 16;
  std::vector<int> batch_sizes = {1};
  int repeats = 5;  // timed runs; the median is reported
  int warmup = 1;   // untimed runs before the timed ones
  std::uint64_t seed = 0;
  double cache_tolerance = 1e-4;

  void validate() const;
};

struct BenchTiming {
  double prefill_seconds = 0.0;
  double decode_seconds = 0.0;
  double prefill_tokens_per_s = 0.0;
  double decode_tokens_per_s = 0.0;
};

struct BenchRow {
  int batch = 1;
  BenchTiming dense;
  BenchTiming pruned;
  double prefill_speedup = 0.0;
  double decode_speedup = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double dense_cache_error = 0.0;
  double pruned_cache_error = 0.0;
  int workers = 1;
};

/// Max-abs difference between cached incremental logits (prompt, then
/// `new_tokens` greedy steps) and a full forward over the same tokens.
double kv_cache_error(const TransformerModel& model, std::span<const TokenId> prompt,
                      int new_tokens);

/// Throws StateError if either model's cache error exceeds the tolerance.
BenchReport run_benchmark(const TransformerModel& dense, const TransformerModel& pruned,
                          const BenchConfig& config);

void write_bench_csv(const std::filesystem::path& path, const BenchReport& report,
                     const BenchConfig& config);

}  // namespace multipruner
