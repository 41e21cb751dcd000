#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace multipruner {

/// Deterministic English-like byte text from a small probabilistic grammar
/// over a fixed invented lexicon. Different seeds give different sentences
/// of the same language, so one seed can train and another can serve as
/// held-out data.
std::vector<unsigned char> synthetic_corpus(std::size_t n_bytes, std::uint64_t seed);

std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

}  // namespace multipruner
