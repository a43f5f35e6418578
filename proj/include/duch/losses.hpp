#ifndef DUCH_LOSSES_HPP_
#define DUCH_LOSSES_HPP_

#include "duch/autodiff.hpp"
#include "duch/models.hpp"

namespace duch {

/// Weights of the composite objective. Defaults: tau 0.5, lambda1 = lambda2 = 1,
/// alpha 0.01, beta 0.001, gamma 0.01.
struct LossWeights {
  double tau = 0.5;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double alpha = 0.01;
  double beta = 0.001;
  double gamma = 0.01;

  void validate() const;
};

/// Continuous codes of one batch for the four streams (images, augmented
/// images, texts, augmented texts), all on one tape, plus the binary target.
struct BatchCodes {
  Var hi;
  Var hi_aug;
  Var ht;
  Var ht_aug;
  Matrix b_target;  // entries in {-1, +1}

  void validate() const;
};

Var cosine_similarity_matrix(Var a, Var c);

// Image-anchored: positives are the paired texts, negatives the other images
// and every text in the batch.
Var inter_modal_contrastive(Var hi, Var ht, double tau);
// Average of the image-anchored and text-anchored terms.
Var symmetric_inter_modal_contrastive(Var hi, Var ht, double tau);
Var intra_modal_contrastive(Var h, Var h_aug, double tau);
Var contrastive_total(const BatchCodes& codes, const LossWeights& w);

// Text codes are "real" (D -> 1), image codes "fake". Codes are detached onto
// `tape`, so only the discriminator receives gradients.
Var adversarial_discriminator_loss(Tape& tape, DiscriminatorNet& d, const BatchCodes& codes);
// Non-saturating generator objective -mean log D(image codes) over both image
// streams. The discriminator is frozen; gradients reach the image network.
Var adversarial_generator_loss(DiscriminatorNet& d, Var hi, Var hi_aug);

// Sum over the four streams of ||B - H||_F^2, divided by M*B.
Var quantization_loss(const BatchCodes& codes);
// Sum over the four streams of ||1^T H||^2, divided by M*B.
Var bit_balance_loss(const BatchCodes& codes);

enum class Phase { generator, discriminator };

/// Component values of the last total_loss call, unweighted.
struct LossBreakdown {
  double c_inter = 0.0;
  double c_img = 0.0;
  double c_txt = 0.0;
  double adv_disc = 0.0;
  double adv_gen = 0.0;
  double quant = 0.0;
  double bit_balance = 0.0;
  double total = 0.0;
};

struct LossOptions {
  bool symmetric_inter = false;
};

// Generator phase: L_C + alpha L_adv_gen + beta L_Q + gamma L_BB, recorded on
// the codes' tape. Discriminator phase: L_adv_disc on `disc_tape`.
// Zero-weighted terms are skipped and reported as 0.
Var total_loss(const BatchCodes& codes, DiscriminatorNet& d, const LossWeights& w, Phase phase,
               Tape* disc_tape = nullptr, LossBreakdown* breakdown = nullptr,
               const LossOptions& options = {});

}  // namespace duch

#endif  // DUCH_LOSSES_HPP_
