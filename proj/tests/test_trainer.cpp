#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duch/errors.hpp"
#include "duch/trainer.hpp"
#include "test_util.hpp"

using namespace duch;
using duch::testing::random_matrix;

namespace {

PairedEmbeddings toy_data(std::size_t n, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.n_pairs = n;
  sc.d_img = 8;
  sc.d_txt = 12;
  sc.seed = seed;
  EmbeddingDataset ds = generate_synthetic(sc);
  std::vector<std::size_t> all(ds.n());
  std::iota(all.begin(), all.end(), 0);
  return ds.rows(all);
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.code_bits = 8;
  cfg.hidden = 16;
  cfg.disc_hidden = 8;
  cfg.batch_size = 32;
  cfg.epochs = 3;
  cfg.lr0 = 1e-3;
  cfg.seed = seed;
  return cfg;
}

std::vector<Matrix> snapshot(std::vector<Param*> params) {
  std::vector<Matrix> out;
  for (auto* p : params) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("binary target update") {
  const Matrix a{{0.5, -0.2, 0.1}};
  const Matrix b{{0.3, -0.4, -0.1}};
  const Matrix c{{-0.1, 0.2, 0.2}};
  const Matrix d{{0.2, -0.3, -0.2}};
  CHECK(update_binary_codes(a, b, c, d) == Matrix{{1, -1, 1}});

  SUBCASE("random batches agree with the elementwise rule") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Matrix hi = random_matrix(7, 9, seed), hia = random_matrix(7, 9, seed + 10);
      const Matrix ht = random_matrix(7, 9, seed + 20), hta = random_matrix(7, 9, seed + 30);
      const Matrix out = update_binary_codes(hi, hia, ht, hta);
      for (std::size_t r = 0; r < 7; ++r) {
        for (std::size_t j = 0; j < 9; ++j) {
          const double sum = hi(r, j) + hia(r, j) + ht(r, j) + hta(r, j);
          CHECK(out(r, j) == (sum >= 0 ? 1.0 : -1.0));
        }
      }
    }
  }
  CHECK_THROWS_AS(update_binary_codes(a, b, c, Matrix(1, 2)), DimensionError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == 1e-4);
  CHECK(lr_at(49, cfg) == 1e-4);
  CHECK(lr_at(50, cfg) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_at(99, cfg) == doctest::Approx(2e-5).epsilon(1e-12));
  CHECK(lr_at(100, cfg) == doctest::Approx(4e-6).epsilon(1e-12));
  for (std::size_t e = 1; e < 300; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));

  cfg.lr_decay_factor = 0.8;
  CHECK(lr_at(50, cfg) == doctest::Approx(8e-5).epsilon(1e-12));
}

TEST_CASE("adam step") {
  AdamConfig adam;
  SUBCASE("zero gradient leaves the value unchanged") {
    Param p(Matrix{{1.5, -2.0}});
    adam_step(p, 0.1, 1, adam);
    CHECK(p.value == Matrix{{1.5, -2.0}});
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    Param p(Matrix{{0.0, 0.0}});
    p.grad = Matrix{{1.0, -3.0}};
    adam_step(p, 0.1, 1, adam);
    CHECK(p.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p.value(0, 1) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(p.grad == Matrix{{0.0, 0.0}});
  }
  CHECK_THROWS_AS([] {
    Param p(Matrix{{0.0}});
    adam_step(p, 0.1, 0, AdamConfig{});
  }(), Error);
}

TEST_CASE("ablation switches") {
  const Ablation cl = Ablation::parse("no_intra_img,no_intra_txt");
  CHECK(cl.no_intra_img);
  CHECK(cl.no_intra_txt);
  CHECK_FALSE(cl.no_adv);
  CHECK(Ablation::parse(cl.to_string()) == cl);
  CHECK(Ablation::parse("") == Ablation{});
  CHECK(Ablation::parse("none") == Ablation{});
  CHECK_THROWS_AS(Ablation::parse("no_such_switch"), ConfigError);

  TrainConfig cfg;
  cfg.ablation = Ablation::parse("no_adv,no_quant,no_bb,no_intra_img");
  const LossWeights w = cfg.effective_weights();
  CHECK(w.alpha == 0.0);
  CHECK(w.beta == 0.0);
  CHECK(w.gamma == 0.0);
  CHECK(w.lambda1 == 0.0);
  CHECK(w.lambda2 == 1.0);
}

TEST_CASE("train config validation and serialization") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto rejects = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  rejects([](TrainConfig& c) { c.epochs = 0; });
  rejects([](TrainConfig& c) { c.batch_size = 1; });
  rejects([](TrainConfig& c) { c.code_bits = 4; });
  rejects([](TrainConfig& c) { c.lr0 = -1.0; });
  rejects([](TrainConfig& c) { c.weights.tau = 0.0; });
  rejects([](TrainConfig& c) { c.weights.alpha = -0.1; });

  cfg.code_bits = 32;
  cfg.epochs = 7;
  cfg.seed = 42;
  cfg.weights.tau = 0.25;
  cfg.ablation = Ablation::parse("no_bb");
  cfg.symmetric_inter = true;
  const TrainConfig back = train_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.code_bits == 32);
  CHECK(back.weights.tau == 0.25);
  CHECK(back.ablation.no_bb);
  CHECK_THROWS_AS(train_config_from_json("{not json"), ConfigError);
}

TEST_CASE("step counts follow the batch count") {
  const PairedEmbeddings data = toy_data(512, 1);
  TrainConfig cfg = small_config(0);
  cfg.batch_size = 256;
  ModelBundle b = init_bundle(cfg.bundle_shape(8, 12), cfg.seed);
  Trainer trainer(b, cfg);
  const EpochRecord rec = trainer.train_epoch(data, 0);
  CHECK(rec.generator_steps == 2);
  CHECK(rec.discriminator_steps == 2);
  CHECK(trainer.generator_steps() == 2);
  CHECK(trainer.discriminator_steps() == 2);
}

TEST_CASE("removing the adversarial term skips the discriminator") {
  const PairedEmbeddings data = toy_data(96, 2);
  TrainConfig cfg = small_config(1);
  cfg.ablation.no_adv = true;
  ModelBundle b = init_bundle(cfg.bundle_shape(8, 12), cfg.seed);
  const auto d_before = snapshot(b.d.params());
  Trainer trainer(b, cfg);
  const EpochRecord rec = trainer.train_epoch(data, 0);
  CHECK(rec.adv_disc == 0.0);
  CHECK(rec.adv_gen == 0.0);
  CHECK(rec.discriminator_steps == 0);
  CHECK(snapshot(b.d.params()) == d_before);
}

TEST_CASE("generator steps leave the discriminator untouched") {
  const PairedEmbeddings data = toy_data(64, 3);
  TrainConfig cfg = small_config(2);
  cfg.batch_size = 64;
  ModelBundle b = init_bundle(cfg.bundle_shape(8, 12), cfg.seed);
  const auto d0 = snapshot(b.d.params());
  const auto f0 = snapshot(b.f.params());
  Trainer trainer(b, cfg);
  trainer.train_epoch(data, 0);
  CHECK(snapshot(b.d.params()) != d0);
  CHECK(snapshot(b.f.params()) != f0);

  // Same run with the discriminator step disabled: every D change above
  // came from discriminator steps.
  TrainConfig no_adv = cfg;
  no_adv.ablation.no_adv = true;
  ModelBundle b2 = init_bundle(cfg.bundle_shape(8, 12), cfg.seed);
  Trainer t2(b2, no_adv);
  t2.train_epoch(data, 0);
  CHECK(snapshot(b2.d.params()) == d0);
}

TEST_CASE("trailing singleton batch is folded into the previous one") {
  const PairedEmbeddings data = toy_data(65, 4);
  TrainConfig cfg = small_config(3);
  cfg.batch_size = 32;
  ModelBundle b = init_bundle(cfg.bundle_shape(8, 12), cfg.seed);
  Trainer trainer(b, cfg);
  CHECK(trainer.train_epoch(data, 0).generator_steps == 2);
}

TEST_CASE("training is deterministic") {
  const PairedEmbeddings data = toy_data(100, 5);
  const TrainConfig cfg = small_config(4);
  const TrainResult a = train(data, cfg);
  const TrainResult b = train(data, cfg);
  CHECK(a.report.to_jsonl() == b.report.to_jsonl());
  ModelBundle ba = a.bundle, bb = b.bundle;
  CHECK(snapshot(ba.f.params()) == snapshot(bb.f.params()));
  CHECK(snapshot(ba.g.params()) == snapshot(bb.g.params()));
  CHECK(snapshot(ba.d.params()) == snapshot(bb.d.params()));
  CHECK(a.report.epochs.size() == cfg.epochs);
}

TEST_CASE("training writes its artifacts") {
  const auto dir = duch::testing::scratch_dir("trainer_out");
  const TrainResult r = train(toy_data(64, 6), small_config(5), dir);
  CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
  CHECK(std::filesystem::exists(dir / "train_report.jsonl"));
  CHECK(std::filesystem::exists(dir / "train_timing.jsonl"));
  const Checkpoint ck = load_checkpoint(dir / "checkpoint.bin");
  CHECK(train_config_from_json(ck.config_json).seed == 5);
  CHECK(r.report.to_jsonl().find("wall") == std::string::npos);
}

TEST_CASE("total loss trends down over ten epochs") {
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig cfg = small_config(seed);
    cfg.epochs = 10;
    const TrainResult r = train(toy_data(256, seed), cfg);
    ratios.push_back(r.report.epochs.back().total / r.report.epochs.front().total);
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[1] < 1.0);
}

TEST_CASE("empty or malformed training data is rejected") {
  PairedEmbeddings empty;
  CHECK_THROWS_AS(train(empty, small_config(0)), ConfigError);
  PairedEmbeddings one = toy_data(4, 0);
  one.y_aug = Matrix(3, 12);
  CHECK_THROWS_AS(train(one, small_config(0)), DimensionError);
}
