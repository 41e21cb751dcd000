#pragma once

// JSON mappings for the types that appear in checkpoints, run configs and
// reports.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "multipruner/model.hpp"

namespace multipruner {

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& j);

/// Per-field arrays: attn_present, mlp_present, heads_kept, kv_heads_kept,
/// mlp_channels_kept.
Json to_json(const ArchDescriptor& arch);
ArchDescriptor descriptor_from_json(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// Reads a required key, wrapping type errors as InputError naming the key.
template <typename T>
T json_get(const Json& j, const std::string& key) {
  if (!j.contains(key)) throw InputError("missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad value for '" + key + "': " + e.what());
  }
}

template <typename T>
T json_get_or(const Json& j, const std::string& key, T fallback) {
  return j.contains(key) ? json_get<T>(j, key) : fallback;
}

}  // namespace multipruner
