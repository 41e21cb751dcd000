#include "multipruner/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "multipruner/config_io.hpp"

namespace multipruner {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "weights.bin is written as raw little-endian floats");

struct NamedTensor {
  std::string name;
  std::vector<Index> shape;
  const float* data;
  Index size;
};

std::vector<NamedTensor> collect(const TransformerModel& m) {
  std::vector<NamedTensor> out;
  auto mat = [&out](std::string name, const Tensor& t) {
    out.push_back({std::move(name), {t.rows(), t.cols()}, t.data(), t.size()});
  };
  auto vec = [&out](std::string name, const Vector<float>& v) {
    out.push_back({std::move(name), {v.size()}, v.data(), v.size()});
  };
  mat("embed", m.embed);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerWeights& lw = m.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    if (lw.wq.rows() > 0) {
      mat(p + "wq", lw.wq);
      mat(p + "wk", lw.wk);
      mat(p + "wv", lw.wv);
      mat(p + "wo", lw.wo);
    }
    if (lw.w_gate.rows() > 0) {
      mat(p + "w_gate", lw.w_gate);
      mat(p + "w_up", lw.w_up);
      mat(p + "w_down", lw.w_down);
    }
    vec(p + "attn_norm", lw.attn_norm);
    vec(p + "mlp_norm", lw.mlp_norm);
  }
  vec("final_norm", m.final_norm);
  if (!m.config.tied_embeddings) mat("lm_head", m.lm_head);
  return out;
}

struct IndexEntry {
  std::vector<Index> shape;
  std::uint64_t offset;
};

class TensorReader {
 public:
  TensorReader(std::map<std::string, IndexEntry> index, std::vector<char> blob)
      : index_(std::move(index)), blob_(std::move(blob)) {}

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor matrix(const std::string& name, Index rows, Index cols) {
    const float* src = locate(name, {rows, cols});
    Tensor t(rows, cols);
    if (t.size() > 0) std::memcpy(t.data(), src, sizeof(float) * static_cast<std::size_t>(t.size()));
    return t;
  }

  Vector<float> vector(const std::string& name, Index n) {
    const float* src = locate(name, {n});
    Vector<float> v(n);
    std::memcpy(v.data(), src, sizeof(float) * static_cast<std::size_t>(n));
    return v;
  }

  const std::vector<Index>& shape(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("missing tensor '" + name + "'");
    return it->second.shape;
  }

  void mark_used(const std::string& name) { used_.push_back(name); }

  void check_all_used() const {
    for (const auto& [name, entry] : index_) {
      if (std::find(used_.begin(), used_.end(), name) == used_.end()) {
        throw FormatError("unexpected tensor '" + name + "' in index");
      }
    }
  }

 private:
  const float* locate(const std::string& name, const std::vector<Index>& expected) {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("missing tensor '" + name + "'");
    used_.push_back(name);
    if (it->second.shape != expected) {
      std::string want, got;
      for (Index d : expected) want += std::to_string(d) + " ";
      for (Index d : it->second.shape) got += std::to_string(d) + " ";
      throw FormatError("tensor '" + name + "' has shape [ " + got + "], expected [ " + want + "]");
    }
    std::uint64_t count = 1;
    for (Index d : expected) count *= static_cast<std::uint64_t>(d);
    const std::uint64_t end = it->second.offset + count * sizeof(float);
    if (it->second.offset % sizeof(float) != 0 || end > blob_.size()) {
      throw FormatError("tensor '" + name + "' lies outside weights.bin");
    }
    return reinterpret_cast<const float*>(blob_.data() + it->second.offset);
  }

  std::map<std::string, IndexEntry> index_;
  std::vector<char> blob_;
  std::vector<std::string> used_;
};

}  // namespace

void save_checkpoint(const TransformerModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  Json config = to_json(model.config);
  config["format"] = kCheckpointFormat;
  write_json_file(dir / "config.json", config);
  write_json_file(dir / "descriptor.json", to_json(model.descriptor));

  Json index = Json::array();
  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw InputError("cannot write " + (dir / "weights.bin").string());
  std::uint64_t offset = 0;
  for (const NamedTensor& t : collect(model)) {
    index.push_back(Json{{"name", t.name}, {"shape", t.shape}, {"byte_offset", offset}});
    const auto bytes = static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.size));
    bin.write(reinterpret_cast<const char*>(t.data), bytes);
    offset += static_cast<std::uint64_t>(bytes);
  }
  if (!bin) throw InputError("failed writing " + (dir / "weights.bin").string());
  write_json_file(dir / "index.json", index);
}

TransformerModel load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("checkpoint directory not found: " + dir.string());
  const Json config_json = read_json_file(dir / "config.json");
  if (config_json.value("format", std::string()) != kCheckpointFormat) {
    throw FormatError(dir.string() + ": bad or missing format tag in config.json");
  }
  TransformerModel m;
  m.config = model_config_from_json(config_json);
  m.descriptor = descriptor_from_json(read_json_file(dir / "descriptor.json"));
  m.descriptor.validate(m.config);

  std::map<std::string, IndexEntry> index;
  const Json index_json = read_json_file(dir / "index.json");
  if (!index_json.is_array()) throw FormatError("index.json is not a list");
  for (const Json& e : index_json) {
    try {
      index[e.at("name").get<std::string>()] =
          IndexEntry{e.at("shape").get<std::vector<Index>>(), e.at("byte_offset").get<std::uint64_t>()};
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError("malformed index entry " + e.dump() + ": " + ex.what());
    }
  }

  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw FormatError("missing weights.bin in " + dir.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  TensorReader reader(std::move(index), std::move(blob));

  const ModelConfig& c = m.config;
  const Index h = c.hidden;
  const Index hd = c.head_dim;
  m.embed = reader.matrix("embed", c.vocab_size, h);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const LayerArch& a = m.descriptor.layers[static_cast<std::size_t>(l)];
    LayerWeights lw;
    if (reader.has(p + "wq") || a.attn_present) {
      const auto& qs = reader.shape(p + "wq");
      const Index rows = qs.empty() ? 0 : qs[0];
      const Index heads = rows / hd;
      if (qs.size() != 2 || rows % hd != 0 || heads % c.group_size() != 0 || heads > c.n_heads ||
          heads < a.heads_kept) {
        throw FormatError("tensor '" + p + "wq' has a shape inconsistent with the config");
      }
      const Index kv_rows = heads / c.group_size() * hd;
      lw.wq = reader.matrix(p + "wq", rows, h);
      lw.wk = reader.matrix(p + "wk", kv_rows, h);
      lw.wv = reader.matrix(p + "wv", kv_rows, h);
      lw.wo = reader.matrix(p + "wo", h, rows);
    } else {
      lw.wq = Tensor(0, h);
      lw.wk = Tensor(0, h);
      lw.wv = Tensor(0, h);
      lw.wo = Tensor(h, 0);
    }
    if (reader.has(p + "w_gate") || a.mlp_present) {
      const auto& gs = reader.shape(p + "w_gate");
      const Index rows = gs.empty() ? 0 : gs[0];
      if (gs.size() != 2 || rows > c.intermediate || rows < a.mlp_channels_kept) {
        throw FormatError("tensor '" + p + "w_gate' has a shape inconsistent with the config");
      }
      lw.w_gate = reader.matrix(p + "w_gate", rows, h);
      lw.w_up = reader.matrix(p + "w_up", rows, h);
      lw.w_down = reader.matrix(p + "w_down", h, rows);
    } else {
      lw.w_gate = Tensor(0, h);
      lw.w_up = Tensor(0, h);
      lw.w_down = Tensor(h, 0);
    }
    lw.attn_norm = reader.vector(p + "attn_norm", h);
    lw.mlp_norm = reader.vector(p + "mlp_norm", h);
    m.layers.push_back(std::move(lw));
  }
  m.final_norm = reader.vector("final_norm", h);
  if (!c.tied_embeddings) m.lm_head = reader.matrix("lm_head", c.vocab_size, h);
  reader.check_all_used();
  return m;
}

}  // namespace multipruner
