#include "doctest.h"
#include "fixtures.hpp"
#include "multipruner/checkpoint.hpp"
#include "multipruner/toytrain.hpp"

using namespace multipruner;

TEST_CASE("analytic gradient matches central differences") {
  for (bool tied : {false, true}) {
    ModelConfig c = fixture::tiny_config(2, 4, 2, 4, 12, 20);
    c.tied_embeddings = tied;
    const TransformerModel m = random_model(c, 81, 0.3, 0.1);
    TrainParams<double> p = to_train_params<double>(m);
    Rng rng(5);
    const std::vector<std::vector<TokenId>> batch = {fixture::random_tokens(rng, 7, 20),
                                                      fixture::random_tokens(rng, 7, 20)};
    TrainParams<double> g = zeros_like(p);
    loss_and_grad(p, c, batch, &g);
    auto ps = tensor_spans(p);
    auto gs = tensor_spans(g);
    double worst = 0.0;
    for (std::size_t t = 0; t < ps.size(); ++t) {
      for (int k = 0; k < 4; ++k) {
        const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(ps[t].second)));
        double& w = ps[t].first[i];
        const double saved = w, h = 1e-5;
        w = saved + h;
        const double up = loss_and_grad<double>(p, c, batch, nullptr);
        w = saved - h;
        const double down = loss_and_grad<double>(p, c, batch, nullptr);
        w = saved;
        const double num = (up - down) / (2 * h);
        const double ana = gs[t].first[i];
        worst = std::max(worst, std::abs(num - ana) / std::max(1e-6, std::abs(num) + std::abs(ana)));
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("training forward matches inference forward") {
  const ModelConfig c = fixture::tiny_config(2, 4, 2, 8, 40, 50);
  const TransformerModel m = random_model(c, 82, 0.3, 0.1);
  Rng rng(6);
  const auto tokens = fixture::random_tokens(rng, 15, 50);
  const Matrix<float> a = train_logits(to_train_params<float>(m), c, tokens);
  CHECK((a - forward(m, tokens)).cwiseAbs().maxCoeff() < 1e-4);
  const TransformerModel back = from_train_params(to_train_params<float>(m), c);
  CHECK(weights_checksum(back) == weights_checksum(m));
}

TEST_CASE("training runs, improves and is deterministic") {
  TrainConfig cfg;
  cfg.model = fixture::tiny_config(2, 4, 2, 8, 32, 256);
  cfg.steps = 60;
  cfg.batch = 4;
  cfg.seq_len = 32;
  cfg.warmup = 10;
  cfg.seed = 9;
  const auto corpus = synthetic_corpus(32 * 1024, 1);
  const TrainResult a = train_toy(cfg, corpus);
  const TrainResult b = train_toy(cfg, corpus);
  CHECK(weights_checksum(a.model) == weights_checksum(b.model));
  CHECK(a.losses.size() == 60);
  CHECK(a.final_loss < a.initial_loss);
  CHECK(a.final_train_ppl < 256.0);

  const auto dir = fixture::temp_dir("train");
  save_checkpoint(a.model, dir);
  CHECK(weights_checksum(load_checkpoint(dir)) == weights_checksum(a.model));

  cfg.steps = 1;
  const TrainResult one = train_toy(cfg, corpus);
  CHECK_NOTHROW(forward(one.model, std::vector<TokenId>{72, 101, 108}));

  cfg.steps = 0;
  CHECK_THROWS_AS(train_toy(cfg, corpus), InputError);
  cfg.steps = 5;
  CHECK_THROWS_AS(train_toy(cfg, std::vector<unsigned char>{}), InputError);
  cfg.lr = 1e30;
  CHECK_THROWS_AS(train_toy(cfg, corpus), TrainingError);
}

TEST_CASE("synthetic corpus") {
  const auto a = synthetic_corpus(5000, 3);
  CHECK(a.size() == 5000);
  CHECK(a == synthetic_corpus(5000, 3));
  CHECK(a != synthetic_corpus(5000, 4));
  for (unsigned char ch : a) CHECK((ch == '\n' || (ch >= 32 && ch < 127)));
}
