#pragma once

// Calibration data and the perplexity metric used for every importance score.
//
// Token file: "MPTK", u32 sequence count, then per sequence a u32 length and
// that many u32 token ids. Everything little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "multipruner/model.hpp"

namespace multipruner {

struct CalibrationSet {
  std::vector<std::vector<TokenId>> sequences;
  int max_seq_len = 0;

  std::size_t sample_count() const { return sequences.size(); }
  std::int64_t predicted_tokens() const;
  /// The first n sequences (all of them if n exceeds the size).
  CalibrationSet head(std::size_t n) const;
};

enum class MetricKind { Perplexity };

struct MetricSpec {
  MetricKind kind = MetricKind::Perplexity;
};

std::vector<std::vector<TokenId>> read_token_file(const std::filesystem::path& path);
void write_token_file(const std::filesystem::path& path,
                      const std::vector<std::vector<TokenId>>& sequences);

/// Deterministic sample of n_samples sequences (selection depends only on the
/// seed and file contents), each truncated to max_seq_len. Empty and
/// single-token sequences are skipped with a warning on stderr.
CalibrationSet load_calibration(const std::filesystem::path& path, std::size_t n_samples,
                                int max_seq_len, std::uint64_t seed);

/// Same sampling applied to sequences already in memory.
CalibrationSet sample_calibration(const std::vector<std::vector<TokenId>>& pool,
                                  std::size_t n_samples, int max_seq_len, std::uint64_t seed);

/// Byte-level tokenization: consecutive windows of seq_len bytes advanced by
/// `stride` (vocabulary 256).
std::vector<std::vector<TokenId>> bytes_to_sequences(std::span<const unsigned char> bytes,
                                                     int seq_len, int stride);

/// Summed next-token negative log-likelihood of one sequence (64-bit).
double sequence_nll(const TransformerModel& model, const ArchDescriptor& arch,
                    std::span<const TokenId> tokens);

/// exp(total NLL / total predicted tokens) under the given descriptor.
/// Sequences are scored on up to `workers` threads; partial sums are added
/// in sequence order.
double perplexity(const TransformerModel& model, const ArchDescriptor& arch,
                  const CalibrationSet& calib, int workers = 0);
double perplexity(const TransformerModel& model, const CalibrationSet& calib, int workers = 0);

/// Dispatch on the metric kind (only perplexity exists).
double evaluate_metric(const TransformerModel& model, const ArchDescriptor& arch,
                       const CalibrationSet& calib, const MetricSpec& metric, int workers = 0);

}  // namespace multipruner
