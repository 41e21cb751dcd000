#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "multipruner/checkpoint.hpp"
#include "multipruner/config_io.hpp"

using namespace multipruner;
namespace fs = std::filesystem;

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = fixture::temp_dir("ckpt_roundtrip");
  ModelConfig c = fixture::tiny_config(2, 4, 2, 8, 40, 50);
  TransformerModel m = random_model(c, 21, 0.1, 0.1);
  trim_width(m.descriptor, c, {0, BlockKind::Mlp}, 40);
  trim_width(m.descriptor, c, {1, BlockKind::Attn}, 2);
  m = materialize(m, m.descriptor);
  save_checkpoint(m, dir);
  const TransformerModel back = load_checkpoint(dir);
  CHECK(back.config == m.config);
  CHECK(back.descriptor == m.descriptor);
  CHECK(weights_checksum(back) == weights_checksum(m));
  const std::vector<TokenId> tokens = {3, 1, 4, 1, 5, 9};
  CHECK((forward(back, tokens).array() == forward(m, tokens).array()).all());

  c.tied_embeddings = true;
  const TransformerModel t = random_model(c, 22);
  save_checkpoint(t, dir / "tied");
  CHECK(weights_checksum(load_checkpoint(dir / "tied")) == weights_checksum(t));
}

TEST_CASE("checkpoint format errors") {
  const auto dir = fixture::temp_dir("ckpt_errors");
  const TransformerModel m = random_model(fixture::tiny_config(1, 4, 2, 8, 40, 50), 23);
  CHECK_THROWS_AS(load_checkpoint(dir / "nope"), InputError);

  save_checkpoint(m, dir / "trunc");
  fs::resize_file(dir / "trunc" / "weights.bin", fs::file_size(dir / "trunc" / "weights.bin") - 4);
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc"), FormatError);

  save_checkpoint(m, dir / "shape");
  Json index = read_json_file(dir / "shape" / "index.json");
  for (auto& e : index) {
    if (e["name"] == "layers.0.w_gate") e["shape"] = Json::array({e["shape"][1], e["shape"][0]});
  }
  write_json_file(dir / "shape" / "index.json", index);
  try {
    load_checkpoint(dir / "shape");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("layers.0.w_gate") != std::string::npos);
  }

  save_checkpoint(m, dir / "missing");
  index = read_json_file(dir / "missing" / "index.json");
  Json kept = Json::array();
  for (auto& e : index) {
    if (e["name"] != "layers.0.w_up") kept.push_back(e);
  }
  write_json_file(dir / "missing" / "index.json", kept);
  try {
    load_checkpoint(dir / "missing");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("layers.0.w_up") != std::string::npos);
  }

  save_checkpoint(m, dir / "tag");
  Json cfg = read_json_file(dir / "tag" / "config.json");
  cfg["format"] = "something-else";
  write_json_file(dir / "tag" / "config.json", cfg);
  CHECK_THROWS_AS(load_checkpoint(dir / "tag"), FormatError);
}
