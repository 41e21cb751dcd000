#include "multipruner/config_io.hpp"

#include <fstream>

namespace multipruner {

Json to_json(const ModelConfig& c) {
  return Json{{"vocab_size", c.vocab_size},   {"n_layers", c.n_layers},
              {"hidden", c.hidden},           {"n_heads", c.n_heads},
              {"n_kv_heads", c.n_kv_heads},   {"head_dim", c.head_dim},
              {"intermediate", c.intermediate}, {"rope_base", c.rope_base},
              {"norm_eps", c.norm_eps},       {"tied_embeddings", c.tied_embeddings}};
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig c;
  c.vocab_size = json_get<int>(j, "vocab_size");
  c.n_layers = json_get<int>(j, "n_layers");
  c.hidden = json_get<int>(j, "hidden");
  c.n_heads = json_get<int>(j, "n_heads");
  c.n_kv_heads = json_get<int>(j, "n_kv_heads");
  c.head_dim = json_get<int>(j, "head_dim");
  c.intermediate = json_get<int>(j, "intermediate");
  c.rope_base = json_get_or<double>(j, "rope_base", c.rope_base);
  c.norm_eps = json_get_or<double>(j, "norm_eps", c.norm_eps);
  c.tied_embeddings = json_get_or<bool>(j, "tied_embeddings", false);
  c.validate();
  return c;
}

Json to_json(const ArchDescriptor& arch) {
  Json attn = Json::array(), mlp = Json::array(), heads = Json::array(), kv = Json::array(),
       channels = Json::array();
  for (const LayerArch& a : arch.layers) {
    attn.push_back(a.attn_present);
    mlp.push_back(a.mlp_present);
    heads.push_back(a.heads_kept);
    kv.push_back(a.kv_heads_kept);
    channels.push_back(a.mlp_channels_kept);
  }
  return Json{{"attn_present", attn},
              {"mlp_present", mlp},
              {"heads_kept", heads},
              {"kv_heads_kept", kv},
              {"mlp_channels_kept", channels}};
}

ArchDescriptor descriptor_from_json(const Json& j) {
  const auto attn = json_get<std::vector<bool>>(j, "attn_present");
  const auto mlp = json_get<std::vector<bool>>(j, "mlp_present");
  const auto heads = json_get<std::vector<int>>(j, "heads_kept");
  const auto kv = json_get<std::vector<int>>(j, "kv_heads_kept");
  const auto channels = json_get<std::vector<int>>(j, "mlp_channels_kept");
  const std::size_t n = attn.size();
  if (mlp.size() != n || heads.size() != n || kv.size() != n || channels.size() != n) {
    throw InputError("descriptor arrays have different lengths");
  }
  ArchDescriptor arch;
  for (std::size_t l = 0; l < n; ++l) {
    arch.layers.push_back(LayerArch{attn[l], mlp[l], heads[l], kv[l], channels[l]});
  }
  return arch;
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace multipruner
