#include "duch/losses.hpp"

#include <cmath>
#include <fmt/format.h>

#include "duch/errors.hpp"

namespace duch {

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError(fmt::format("tau must be positive, got {}", tau));
  for (auto [name, v] : {std::pair{"lambda1", lambda1}, std::pair{"lambda2", lambda2},
                         std::pair{"alpha", alpha}, std::pair{"beta", beta},
                         std::pair{"gamma", gamma}}) {
    if (!(v >= 0.0)) throw ConfigError(fmt::format("{} must be non-negative, got {}", name, v));
  }
}

void BatchCodes::validate() const {
  const Matrix& ref = hi.value();
  require_same_shape(ref, hi_aug.value(), "hi", "hi_aug");
  require_same_shape(ref, ht.value(), "hi", "ht");
  require_same_shape(ref, ht_aug.value(), "hi", "ht_aug");
  require_same_shape(ref, b_target, "hi", "b_target");
  for (double v : b_target.values()) {
    if (v != 1.0 && v != -1.0) throw Error("b_target entries must be +1 or -1");
  }
}

Var cosine_similarity_matrix(Var a, Var c) {
  if (a.id == c.id && a.tape == c.tape) {
    Var n = ad::row_l2_normalize(a);
    return ad::matmul_nt(n, n);
  }
  return ad::matmul_nt(ad::row_l2_normalize(a), ad::row_l2_normalize(c));
}

namespace {

// One template serves all three contrastive terms: anchors vs themselves in
// the negative sum, anchors vs the positive set in both numerator and sum.
Var anchored_contrastive(Var anchor, Var positive, double tau) {
  require_same_shape(anchor.value(), positive.value(), "anchor", "positive");
  Var a = ad::row_l2_normalize(anchor);
  Var p = ad::row_l2_normalize(positive);
  return ad::contrastive_nll(ad::matmul_nt(a, a), ad::matmul_nt(a, p), tau);
}

double mb(const Matrix& h) { return static_cast<double>(h.rows() * h.cols()); }

void check_finite(double v, const char* component) {
  if (!std::isfinite(v)) throw TrainingError(fmt::format("non-finite loss component: {}", component));
}

}  // namespace

Var inter_modal_contrastive(Var hi, Var ht, double tau) { return anchored_contrastive(hi, ht, tau); }

Var symmetric_inter_modal_contrastive(Var hi, Var ht, double tau) {
  return ad::scale(ad::add(anchored_contrastive(hi, ht, tau), anchored_contrastive(ht, hi, tau)), 0.5);
}

Var intra_modal_contrastive(Var h, Var h_aug, double tau) { return anchored_contrastive(h, h_aug, tau); }

Var contrastive_total(const BatchCodes& codes, const LossWeights& w) {
  Var total = inter_modal_contrastive(codes.hi, codes.ht, w.tau);
  if (w.lambda1 != 0.0) {
    total = ad::add(total, ad::scale(intra_modal_contrastive(codes.hi, codes.hi_aug, w.tau), w.lambda1));
  }
  if (w.lambda2 != 0.0) {
    total = ad::add(total, ad::scale(intra_modal_contrastive(codes.ht, codes.ht_aug, w.tau), w.lambda2));
  }
  return total;
}

Var adversarial_discriminator_loss(Tape& tape, DiscriminatorNet& d, const BatchCodes& codes) {
  Var text = tape.constant(vstack(codes.ht.value(), codes.ht_aug.value()));
  Var image = tape.constant(vstack(codes.hi.value(), codes.hi_aug.value()));
  Var real = ad::neg_log_mean(disc_forward(tape, d, text), /*complement=*/false);
  Var fake = ad::neg_log_mean(disc_forward(tape, d, image), /*complement=*/true);
  return ad::add(real, fake);
}

Var adversarial_generator_loss(DiscriminatorNet& d, Var hi, Var hi_aug) {
  Tape& tape = *hi.tape;
  return ad::neg_log_mean(disc_forward(tape, d, ad::vstack(hi, hi_aug), /*trainable=*/false),
                          /*complement=*/false);
}

Var quantization_loss(const BatchCodes& codes) {
  const double n = mb(codes.hi.value());
  Var total = ad::squared_error_sum(codes.hi, codes.b_target, n);
  total = ad::add(total, ad::squared_error_sum(codes.hi_aug, codes.b_target, n));
  total = ad::add(total, ad::squared_error_sum(codes.ht, codes.b_target, n));
  return ad::add(total, ad::squared_error_sum(codes.ht_aug, codes.b_target, n));
}

Var bit_balance_loss(const BatchCodes& codes) {
  const double n = mb(codes.hi.value());
  Var total = ad::column_sum_squares(codes.hi, n);
  total = ad::add(total, ad::column_sum_squares(codes.hi_aug, n));
  total = ad::add(total, ad::column_sum_squares(codes.ht, n));
  return ad::add(total, ad::column_sum_squares(codes.ht_aug, n));
}

Var total_loss(const BatchCodes& codes, DiscriminatorNet& d, const LossWeights& w, Phase phase,
               Tape* disc_tape, LossBreakdown* breakdown, const LossOptions& options) {
  w.validate();
  LossBreakdown local;
  LossBreakdown& out = breakdown != nullptr ? *breakdown : local;

  if (phase == Phase::discriminator) {
    if (disc_tape == nullptr) throw Error("total_loss: discriminator phase needs its own tape");
    Var loss = adversarial_discriminator_loss(*disc_tape, d, codes);
    out.adv_disc = loss.value()(0, 0);
    check_finite(out.adv_disc, "L_adv_disc");
    return loss;
  }

  Var inter = options.symmetric_inter ? symmetric_inter_modal_contrastive(codes.hi, codes.ht, w.tau)
                                      : inter_modal_contrastive(codes.hi, codes.ht, w.tau);
  out.c_inter = inter.value()(0, 0);
  check_finite(out.c_inter, "L_C_inter");
  Var total = inter;
  auto add_term = [&](double weight, auto make, double& slot, const char* name) {
    slot = 0.0;
    if (weight == 0.0) return;
    Var term = make();
    slot = term.value()(0, 0);
    check_finite(slot, name);
    total = ad::add(total, ad::scale(term, weight));
  };
  add_term(w.lambda1, [&] { return intra_modal_contrastive(codes.hi, codes.hi_aug, w.tau); },
           out.c_img, "L_C_img");
  add_term(w.lambda2, [&] { return intra_modal_contrastive(codes.ht, codes.ht_aug, w.tau); },
           out.c_txt, "L_C_txt");
  add_term(w.alpha, [&] { return adversarial_generator_loss(d, codes.hi, codes.hi_aug); },
           out.adv_gen, "L_adv_gen");
  add_term(w.beta, [&] { return quantization_loss(codes); }, out.quant, "L_Q");
  add_term(w.gamma, [&] { return bit_balance_loss(codes); }, out.bit_balance, "L_BB");
  out.total = total.value()(0, 0);
  check_finite(out.total, "total");
  return total;
}

}  // namespace duch
