#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "multipruner/calib.hpp"
#include "multipruner/corpus.hpp"
#include "multipruner/model.hpp"
#include "multipruner/random.hpp"
#include "multipruner/toytrain.hpp"

namespace fixture {

using namespace multipruner;

inline ModelConfig tiny_config(int layers = 2, int heads = 4, int kv_heads = 2, int head_dim = 8,
                               int intermediate = 48, int vocab = 64) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.n_layers = layers;
  c.n_heads = heads;
  c.n_kv_heads = kv_heads;
  c.head_dim = head_dim;
  c.hidden = heads * head_dim;
  c.intermediate = intermediate;
  return c;
}

inline std::vector<TokenId> random_tokens(Rng& rng, int len, int vocab) {
  std::vector<TokenId> t;
  for (int i = 0; i < len; ++i) t.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab))));
  return t;
}

inline CalibrationSet random_calib(std::uint64_t seed, int n, int len, int vocab) {
  Rng rng(seed);
  CalibrationSet c;
  c.max_seq_len = len;
  for (int i = 0; i < n; ++i) c.sequences.push_back(random_tokens(rng, len, vocab));
  return c;
}

/// Byte windows from the synthetic corpus.
inline CalibrationSet text_calib(std::uint64_t seed, int n, int len) {
  const auto bytes = synthetic_corpus(static_cast<std::size_t>(n) * len + 1, seed);
  CalibrationSet c;
  c.max_seq_len = len;
  c.sequences = bytes_to_sequences(bytes, len, len);
  c.sequences.resize(static_cast<std::size_t>(n));
  return c;
}

/// Random descriptor within the dense structure: each block is kept, trimmed
/// or removed; attention keeps whole KV groups.
inline ArchDescriptor random_descriptor(const ModelConfig& c, Rng& rng) {
  ArchDescriptor d = ArchDescriptor::dense(c);
  for (LayerArch& a : d.layers) {
    const int kv = static_cast<int>(rng.between(0, c.n_kv_heads));
    a.kv_heads_kept = kv;
    a.heads_kept = kv * c.group_size();
    a.attn_present = kv > 0;
    a.mlp_channels_kept = static_cast<int>(rng.between(0, c.intermediate));
    a.mlp_present = a.mlp_channels_kept > 0;
  }
  return d;
}

/// Small byte-level model trained briefly on the synthetic corpus.
inline TransformerModel trained_tiny(std::uint64_t seed, int layers, int steps = 150) {
  TrainConfig cfg;
  cfg.model = tiny_config(layers, 4, 2, 8, 64, 256);
  cfg.steps = steps;
  cfg.batch = 4;
  cfg.seq_len = 32;
  cfg.warmup = 20;
  cfg.seed = seed;
  const auto corpus = synthetic_corpus(64 * 1024, 100 + seed);
  return train_toy(cfg, corpus).model;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mp_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
