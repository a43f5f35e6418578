#include <doctest.h>

#include <cmath>
#include <numbers>

#include "duch/errors.hpp"
#include "duch/losses.hpp"
#include "duch/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace duch;
using duch::testing::random_matrix;

namespace {

// Frozen from tests/oracles/contrastive_oracle.py.
constexpr double kOrthonormalPair = 0.5514447139320511;
constexpr double kOrthonormalThreeTerms = 1.6543341417961532;

double scalar(Var v) { return v.value()(0, 0); }

BatchCodes codes_from(Tape& t, const Matrix& hi, const Matrix& hi_aug, const Matrix& ht,
                      const Matrix& ht_aug, Matrix target) {
  return {t.constant(hi), t.constant(hi_aug), t.constant(ht), t.constant(ht_aug), std::move(target)};
}

void zero_params(DiscriminatorNet& d) {
  for (auto* p : d.params()) p->value.fill(0.0);
}

// Discriminator whose output is ~1 when the first code coordinate is
// positive and ~0 when it is negative.
DiscriminatorNet sharp_discriminator(std::size_t bits) {
  DiscriminatorNet d;
  d.in_dim = bits;
  d.hidden_dim = 1;
  d.layer1 = {Param(Matrix(bits, 1)), Param(Matrix(1, 1))};
  d.layer2 = {Param(Matrix(1, 1)), Param(Matrix(1, 1))};
  d.layer1.weight.value(0, 0) = 50.0;
  d.layer2.weight.value(0, 0) = 1.0;
  d.layer2.bias.value(0, 0) = -25.0;
  return d;
}

}  // namespace

TEST_CASE("cosine similarity matrix") {
  Tape t;
  const Matrix unit{{1, 0}, {0.6, 0.8}};
  Var a = t.constant(unit);
  const Matrix self = cosine_similarity_matrix(a, a).value();
  CHECK(self(0, 0) == doctest::Approx(1.0));
  CHECK(self(1, 1) == doctest::Approx(1.0));
  CHECK(cosine_similarity_matrix(t.constant(Matrix{{1, 0}}), t.constant(Matrix{{0, 1}})).value()(0, 0) == 0.0);
  CHECK(cosine_similarity_matrix(t.constant(Matrix{{1, 1}}), t.constant(Matrix{{1, 0}})).value()(0, 0) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_similarity_matrix(t.constant(Matrix{{0, 0}}), t.constant(Matrix{{1, 0}})),
                  DegenerateError);
}

TEST_CASE("inter-modal contrastive oracles") {
  Tape t;
  SUBCASE("single pair is exactly zero") {
    CHECK(scalar(inter_modal_contrastive(t.constant(Matrix{{0.3, -2}}), t.constant(Matrix{{1, 1}}), 0.5)) == 0.0);
  }
  SUBCASE("small temperatures stay finite") {
    CHECK(scalar(inter_modal_contrastive(t.constant(Matrix{{0.3, -2}}), t.constant(Matrix{{1, 1}}), 1e-4)) == 0.0);
    const Matrix hi = random_matrix(6, 5, 1), ht = random_matrix(6, 5, 2);
    const double v = scalar(inter_modal_contrastive(t.constant(hi), t.constant(ht), 1e-4));
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
  SUBCASE("orthonormal pair of rows") {
    const Matrix eye{{1, 0}, {0, 1}};
    CHECK(scalar(inter_modal_contrastive(t.constant(eye), t.constant(eye), 1.0)) ==
          doctest::Approx(kOrthonormalPair).epsilon(1e-12));
    CHECK(kOrthonormalPair == doctest::Approx(-std::log(std::numbers::e / (std::numbers::e + 2))).epsilon(1e-15));
  }
  SUBCASE("random batches agree with the loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Matrix hi = random_matrix(6, 5, seed);
      const Matrix ht = random_matrix(6, 5, seed + 100);
      const double got = scalar(inter_modal_contrastive(t.constant(hi), t.constant(ht), 0.5));
      CHECK(got == doctest::Approx(oracle::contrastive(hi, ht, 0.5)).epsilon(1e-12));
    }
  }
  SUBCASE("rotating texts toward images decreases the loss") {
    const Matrix eye{{1, 0}, {0, 1}};
    double prev = 1e9;
    for (double phi = 1.5; phi >= -1e-12; phi -= 0.25) {
      const double c = std::cos(phi), s = std::sin(phi);
      const Matrix ht{{c, s}, {-s, c}};
      const double loss = scalar(inter_modal_contrastive(t.constant(eye), t.constant(ht), 1.0));
      CHECK(loss < prev);
      prev = loss;
    }
  }
}

TEST_CASE("intra-modal contrastive shares the template") {
  Tape t;
  CHECK(scalar(intra_modal_contrastive(t.constant(Matrix{{1, 2}}), t.constant(Matrix{{2, 1}}), 0.5)) == 0.0);
  const Matrix eye{{1, 0}, {0, 1}};
  CHECK(scalar(intra_modal_contrastive(t.constant(eye), t.constant(eye), 1.0)) ==
        doctest::Approx(kOrthonormalPair).epsilon(1e-12));

  const Matrix h = random_matrix(5, 4, 7);
  const Matrix h_aug = random_matrix(5, 4, 8);
  CHECK(scalar(intra_modal_contrastive(t.constant(h), t.constant(h_aug), 0.3)) ==
        scalar(inter_modal_contrastive(t.constant(h), t.constant(h_aug), 0.3)));
}

TEST_CASE("contrastive losses are invariant to positive row rescaling") {
  Tape t;
  const Matrix h = random_matrix(6, 4, 9);
  const Matrix h_aug = random_matrix(6, 4, 10);
  Matrix hs = h, hs_aug = h_aug;
  for (std::size_t r = 0; r < 6; ++r) {
    for (double& v : hs.row(r)) v *= 0.1 + static_cast<double>(r);
    for (double& v : hs_aug.row(r)) v *= 3.0 + static_cast<double>(r);
  }
  const double base = scalar(intra_modal_contrastive(t.constant(h), t.constant(h_aug), 0.5));
  const double scaled = scalar(intra_modal_contrastive(t.constant(hs), t.constant(hs_aug), 0.5));
  CHECK(scaled == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("contrastive total") {
  Tape t;
  const Matrix eye{{1, 0}, {0, 1}};
  LossWeights w;
  w.tau = 1.0;
  BatchCodes codes = codes_from(t, eye, eye, eye, eye, eye);
  CHECK(scalar(contrastive_total(codes, w)) == doctest::Approx(kOrthonormalThreeTerms).epsilon(1e-12));

  w.lambda1 = w.lambda2 = 0.0;
  const Matrix hi = random_matrix(4, 3, 11), hia = random_matrix(4, 3, 12);
  const Matrix ht = random_matrix(4, 3, 13), hta = random_matrix(4, 3, 14);
  BatchCodes rnd = codes_from(t, hi, hia, ht, hta, Matrix(4, 3, 1.0));
  CHECK(scalar(contrastive_total(rnd, w)) == scalar(inter_modal_contrastive(rnd.hi, rnd.ht, 1.0)));

  LossWeights single;
  BatchCodes one = codes_from(t, Matrix{{1, 2}}, Matrix{{2, 1}}, Matrix{{-1, 0}}, Matrix{{3, 3}}, Matrix{{1, 1}});
  CHECK(scalar(contrastive_total(one, single)) == 0.0);
}

TEST_CASE("symmetric inter-modal variant averages both anchors") {
  Tape t;
  const Matrix hi = random_matrix(5, 4, 15), ht = random_matrix(5, 4, 16);
  const double sym = scalar(symmetric_inter_modal_contrastive(t.constant(hi), t.constant(ht), 0.5));
  CHECK(sym == doctest::Approx(0.5 * (oracle::contrastive(hi, ht, 0.5) + oracle::contrastive(ht, hi, 0.5))).epsilon(1e-12));
}

TEST_CASE("adversarial discriminator loss") {
  ModelBundle b = init_bundle({4, 4, 8, 4, 6}, 3);
  Tape t;
  const Matrix hi = random_matrix(3, 8, 20, 0.5), hia = random_matrix(3, 8, 21, 0.5);
  const Matrix ht = random_matrix(3, 8, 22, 0.5), hta = random_matrix(3, 8, 23, 0.5);
  BatchCodes codes = codes_from(t, hi, hia, ht, hta, Matrix(3, 8, 1.0));

  SUBCASE("uninformed discriminator") {
    zero_params(b.d);
    Tape dt;
    CHECK(scalar(adversarial_discriminator_loss(dt, b.d, codes)) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("perfect discriminator drives the loss to zero") {
    DiscriminatorNet d = sharp_discriminator(2);
    Tape tt;
    BatchCodes sep = codes_from(tt, Matrix{{-1, 0}, {-0.8, 1}}, Matrix{{-0.9, 0}, {-1, -1}},
                                Matrix{{1, 0}, {0.9, 1}}, Matrix{{0.8, 0}, {1, -1}}, Matrix(2, 2, 1.0));
    Tape dt;
    const double loss = scalar(adversarial_discriminator_loss(dt, d, sep));
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-6);
  }
  SUBCASE("random case matches the elementwise oracle") {
    Tape dt;
    const double got = scalar(adversarial_discriminator_loss(dt, b.d, codes));
    const auto& l1 = b.d.layer1;
    const auto& l2 = b.d.layer2;
    double expect = 0.0;
    const auto pt = oracle::disc_probabilities(vstack(ht, hta), l1.weight.value, l1.bias.value,
                                               l2.weight.value, l2.bias.value);
    const auto pi = oracle::disc_probabilities(vstack(hi, hia), l1.weight.value, l1.bias.value,
                                               l2.weight.value, l2.bias.value);
    for (std::size_t i = 0; i < pt.size(); ++i) expect -= std::log(pt[i]) + std::log(1.0 - pi[i]);
    expect /= static_cast<double>(pt.size());
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("gradients reach only the discriminator") {
    Tape dt;
    Var loss = adversarial_discriminator_loss(dt, b.d, codes);
    for (auto* p : b.d.params()) p->zero_grad();
    dt.backward(loss);
    double norm = 0.0;
    for (auto* p : b.d.params()) {
      for (double v : p->grad.values()) norm += v * v;
    }
    CHECK(norm > 0.0);
    CHECK(t.grad(codes.hi).empty());
  }
  SUBCASE("discriminator gradients match finite differences") {
    auto build = [&](Tape& dt) { return adversarial_discriminator_loss(dt, b.d, codes); };
    CHECK(finite_difference_check(build, b.d.params(), 1e-5) < 1e-4);
  }
}

TEST_CASE("adversarial generator loss") {
  ModelBundle b = init_bundle({4, 4, 8, 4, 6}, 2);
  SUBCASE("uninformed discriminator gives log 2") {
    zero_params(b.d);
    Tape t;
    CHECK(scalar(adversarial_generator_loss(b.d, t.constant(random_matrix(3, 8, 1)),
                                            t.constant(random_matrix(3, 8, 2)))) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("fooled discriminator gives ~0") {
    DiscriminatorNet d = sharp_discriminator(2);
    Tape t;
    const double loss = scalar(adversarial_generator_loss(d, t.constant(Matrix{{1, 0}, {0.9, 0.3}}),
                                                          t.constant(Matrix{{0.8, -1}, {1, 1}})));
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-6);
  }
  SUBCASE("gradient w.r.t. image codes, discriminator frozen") {
    Param hi(random_matrix(4, 8, 3, 0.5));
    Param hia(random_matrix(4, 8, 4, 0.5));
    auto build = [&](Tape& t) { return adversarial_generator_loss(b.d, t.param(hi), t.param(hia)); };
    Param* params[] = {&hi, &hia};
    CHECK(finite_difference_check(build, params, 1e-5) < 1e-4);
    for (auto* p : b.d.params()) p->zero_grad();
    Tape t;
    t.backward(build(t));
    for (auto* p : b.d.params()) {
      for (double v : p->grad.values()) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("quantization loss") {
  Tape t;
  const Matrix b = duch::testing::random_signs(3, 4, 5);
  CHECK(scalar(quantization_loss(codes_from(t, b, b, b, b, b))) == 0.0);

  const Matrix z(1, 2);
  CHECK(scalar(quantization_loss(codes_from(t, z, z, z, z, Matrix{{1, -1}}))) ==
        doctest::Approx(4.0).epsilon(1e-12));

  const Matrix h0 = random_matrix(3, 4, 6, 0.3);
  double prev = 1e9;
  for (double s = 0.0; s <= 1.0; s += 0.125) {
    Matrix h = h0;
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = (1 - s) * h0.data()[i] + s * b.data()[i];
    const double loss = scalar(quantization_loss(codes_from(t, h, h, h, h, b)));
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev == doctest::Approx(0.0));
}

TEST_CASE("bit balance loss") {
  Tape t;
  const Matrix balanced{{1, -1}, {-1, 1}};
  CHECK(scalar(bit_balance_loss(codes_from(t, balanced, balanced, balanced, balanced, balanced))) == 0.0);

  const Matrix z(2, 1);
  CHECK(scalar(bit_balance_loss(codes_from(t, Matrix{{1}, {1}}, z, z, z, Matrix(2, 1, 1.0)))) ==
        doctest::Approx(2.0).epsilon(1e-12));

  const Matrix h = random_matrix(5, 3, 7);
  const std::size_t perm[] = {4, 2, 0, 3, 1};
  const Matrix hp = select_rows(h, perm);
  const Matrix b(5, 3, 1.0);
  CHECK(scalar(bit_balance_loss(codes_from(t, hp, hp, hp, hp, b))) ==
        doctest::Approx(scalar(bit_balance_loss(codes_from(t, h, h, h, h, b)))).epsilon(1e-14));
}

TEST_CASE("losses are non-negative on random inputs") {
  ModelBundle m = init_bundle({4, 4, 8, 4, 6}, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tape t;
    const Matrix hi = random_matrix(5, 8, seed), hia = random_matrix(5, 8, seed + 1);
    const Matrix ht = random_matrix(5, 8, seed + 2), hta = random_matrix(5, 8, seed + 3);
    BatchCodes c = codes_from(t, hi, hia, ht, hta, update_binary_codes(hi, hia, ht, hta));
    CHECK(scalar(contrastive_total(c, LossWeights{})) >= 0.0);
    CHECK(scalar(quantization_loss(c)) >= 0.0);
    CHECK(scalar(bit_balance_loss(c)) >= 0.0);
    CHECK(scalar(adversarial_generator_loss(m.d, c.hi, c.hi_aug)) >= 0.0);
    Tape dt;
    CHECK(scalar(adversarial_discriminator_loss(dt, m.d, c)) >= 0.0);
  }
}

TEST_CASE("total loss") {
  ModelBundle m = init_bundle({4, 4, 8, 4, 6}, 4);
  Tape t;
  const Matrix hi = random_matrix(4, 8, 30), hia = random_matrix(4, 8, 31);
  const Matrix ht = random_matrix(4, 8, 32), hta = random_matrix(4, 8, 33);
  BatchCodes c = codes_from(t, hi, hia, ht, hta, update_binary_codes(hi, hia, ht, hta));

  LossWeights w;
  CHECK(w.alpha == 0.01);
  CHECK(w.beta == 0.001);
  CHECK(w.gamma == 0.01);
  CHECK(w.lambda1 == 1.0);
  CHECK(w.lambda2 == 1.0);

  LossBreakdown parts;
  const double full = scalar(total_loss(c, m.d, w, Phase::generator, nullptr, &parts));
  CHECK(full == doctest::Approx(parts.c_inter + parts.c_img + parts.c_txt + w.alpha * parts.adv_gen +
                                w.beta * parts.quant + w.gamma * parts.bit_balance)
                    .epsilon(1e-12));

  w.alpha = w.beta = w.gamma = 0.0;
  CHECK(scalar(total_loss(c, m.d, w, Phase::generator)) == doctest::Approx(scalar(contrastive_total(c, w))).epsilon(1e-14));

  Tape dt;
  LossBreakdown dparts;
  const double disc = scalar(total_loss(c, m.d, LossWeights{}, Phase::discriminator, &dt, &dparts));
  CHECK(disc == dparts.adv_disc);
  CHECK_THROWS(total_loss(c, m.d, LossWeights{}, Phase::discriminator));

  LossWeights bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(total_loss(c, m.d, bad, Phase::generator), ConfigError);
}

TEST_CASE("composite objective gradient on a 4-sample toy batch") {
  ModelBundle m = init_bundle({5, 6, 8, 7, 4}, 5);
  const Matrix x = random_matrix(4, 5, 40), xa = random_matrix(4, 5, 41);
  const Matrix y = random_matrix(4, 6, 42), ya = random_matrix(4, 6, 43);
  Matrix target;
  {
    Tape t;
    const Matrix hi = hash_forward(t, m.f, t.constant(x), Mode::train).value();
    const Matrix hia = hash_forward(t, m.f, t.constant(xa), Mode::train).value();
    const Matrix ht = hash_forward(t, m.g, t.constant(y), Mode::train).value();
    const Matrix hta = hash_forward(t, m.g, t.constant(ya), Mode::train).value();
    target = update_binary_codes(hi, hia, ht, hta);
  }
  LossWeights w;
  w.alpha = 0.5;
  w.beta = 0.3;
  w.gamma = 0.2;
  auto build = [&](Tape& t) {
    BatchCodes c{hash_forward(t, m.f, t.constant(x), Mode::train), hash_forward(t, m.f, t.constant(xa), Mode::train),
                 hash_forward(t, m.g, t.constant(y), Mode::train), hash_forward(t, m.g, t.constant(ya), Mode::train),
                 target};
    return total_loss(c, m.d, w, Phase::generator);
  };
  auto params = m.f.params();
  for (auto* p : m.g.params()) params.push_back(p);
  CHECK(finite_difference_check(build, params, 1e-5, duch::testing::kGradZeroTol) <= 1e-4);
}
