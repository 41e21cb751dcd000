#include "multipruner/calib.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>

#include "multipruner/parallel.hpp"
#include "multipruner/random.hpp"

namespace multipruner {

namespace fs = std::filesystem;

std::int64_t CalibrationSet::predicted_tokens() const {
  std::int64_t n = 0;
  for (const auto& s : sequences) n += static_cast<std::int64_t>(s.size()) - 1;
  return n;
}

CalibrationSet CalibrationSet::head(std::size_t n) const {
  CalibrationSet out;
  out.max_seq_len = max_seq_len;
  const std::size_t k = std::min(n, sequences.size());
  out.sequences.assign(sequences.begin(), sequences.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

namespace {

// Little-endian u32 at `pos`, advancing it.
std::uint32_t read_u32(const std::vector<char>& buf, std::size_t& pos, const fs::path& path) {
  if (buf.size() - pos < 4) throw FormatError(path.string() + ": truncated token file");
  const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + pos);
  pos += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

std::vector<std::vector<TokenId>> read_token_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open token file " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), "MPTK", 4) != 0) {
    throw FormatError(path.string() + ": bad magic (expected MPTK)");
  }
  std::size_t pos = 4;
  const std::uint32_t count = read_u32(buf, pos, path);
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(std::min<std::size_t>(count, buf.size() / 4));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = read_u32(buf, pos, path);
    if ((buf.size() - pos) / 4 < len) throw FormatError(path.string() + ": truncated token file");
    std::vector<TokenId> s(len);
    for (std::uint32_t t = 0; t < len; ++t) s[t] = read_u32(buf, pos, path);
    seqs.push_back(std::move(s));
  }
  if (pos != buf.size()) throw FormatError(path.string() + ": trailing bytes after the last sequence");
  return seqs;
}

void write_token_file(const fs::path& path, const std::vector<std::vector<TokenId>>& sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write token file " + path.string());
  out.write("MPTK", 4);
  write_u32(out, static_cast<std::uint32_t>(sequences.size()));
  for (const auto& s : sequences) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    for (TokenId t : s) write_u32(out, t);
  }
  if (!out) throw InputError("failed writing " + path.string());
}

CalibrationSet sample_calibration(const std::vector<std::vector<TokenId>>& pool,
                                  std::size_t n_samples, int max_seq_len, std::uint64_t seed) {
  if (n_samples == 0) throw InputError("calibration: n_samples must be >= 1");
  if (max_seq_len < 2) throw InputError("calibration: max_seq_len must be >= 2");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].size() >= 2) {
      usable.push_back(i);
    } else {
      std::cerr << "warning: skipping calibration sequence " << i << " of length "
                << pool[i].size() << '\n';
    }
  }
  if (usable.size() < n_samples) {
    throw InputError("calibration: requested " + std::to_string(n_samples) +
                     " samples but only " + std::to_string(usable.size()) + " usable sequences");
  }
  // Partial Fisher-Yates; the chosen indices are then kept in file order.
  Rng rng(seed);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(usable.size() - i));
    std::swap(usable[i], usable[j]);
  }
  usable.resize(n_samples);
  std::sort(usable.begin(), usable.end());

  CalibrationSet set;
  set.max_seq_len = max_seq_len;
  for (std::size_t idx : usable) {
    const auto& s = pool[idx];
    const std::size_t len = std::min<std::size_t>(s.size(), static_cast<std::size_t>(max_seq_len));
    set.sequences.emplace_back(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(len));
  }
  return set;
}

CalibrationSet load_calibration(const fs::path& path, std::size_t n_samples, int max_seq_len,
                                std::uint64_t seed) {
  if (n_samples == 0) throw InputError("calibration: n_samples must be >= 1");
  return sample_calibration(read_token_file(path), n_samples, max_seq_len, seed);
}

std::vector<std::vector<TokenId>> bytes_to_sequences(std::span<const unsigned char> bytes,
                                                     int seq_len, int stride) {
  if (seq_len < 2 || stride < 1) throw InputError("bytes_to_sequences: seq_len >= 2, stride >= 1");
  std::vector<std::vector<TokenId>> out;
  for (std::size_t start = 0; start + static_cast<std::size_t>(seq_len) <= bytes.size();
       start += static_cast<std::size_t>(stride)) {
    out.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                     bytes.begin() + static_cast<std::ptrdiff_t>(start) + seq_len);
  }
  return out;
}

double sequence_nll(const TransformerModel& model, const ArchDescriptor& arch,
                    std::span<const TokenId> tokens) {
  if (tokens.size() < 2) return 0.0;
  // The last position predicts nothing, so it is not fed.
  const Tensor logits = forward(model, arch, tokens.first(tokens.size() - 1));
  double nll = 0.0;
  for (Index t = 0; t < logits.rows(); ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index v = 0; v < logits.cols(); ++v) mx = std::max(mx, static_cast<double>(logits(t, v)));
    double sum = 0.0;
    for (Index v = 0; v < logits.cols(); ++v) sum += std::exp(static_cast<double>(logits(t, v)) - mx);
    const double target = logits(t, tokens[static_cast<std::size_t>(t) + 1]);
    nll += (mx + std::log(sum)) - target;
  }
  return nll;
}

double perplexity(const TransformerModel& model, const ArchDescriptor& arch,
                  const CalibrationSet& calib, int workers) {
  if (calib.sequences.empty()) throw InputError("perplexity: empty calibration set");
  std::vector<double> nll(calib.sequences.size());
  parallel_for(
      calib.sequences.size(),
      [&](std::size_t i) { nll[i] = sequence_nll(model, arch, calib.sequences[i]); }, workers);
  double total = 0.0;
  for (double v : nll) total += v;
  return std::exp(total / static_cast<double>(calib.predicted_tokens()));
}

double perplexity(const TransformerModel& model, const CalibrationSet& calib, int workers) {
  return perplexity(model, model.descriptor, calib, workers);
}

double evaluate_metric(const TransformerModel& model, const ArchDescriptor& arch,
                       const CalibrationSet& calib, const MetricSpec& metric, int workers) {
  switch (metric.kind) {
    case MetricKind::Perplexity:
      return perplexity(model, arch, calib, workers);
  }
  throw InputError("unknown metric");
}

}  // namespace multipruner
