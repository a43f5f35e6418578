#ifndef DUCH_TRAINER_HPP_
#define DUCH_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "duch/dataset.hpp"
#include "duch/losses.hpp"
#include "duch/models.hpp"

namespace duch {

/// Switches that drop individual objectives by zeroing their weight.
struct Ablation {
  bool no_adv = false;
  bool no_quant = false;
  bool no_bb = false;
  bool no_intra_img = false;
  bool no_intra_txt = false;

  // Comma-separated switch names; empty string or "none" means no switches.
  static Ablation parse(std::string_view list);
  std::string to_string() const;
  bool operator==(const Ablation&) const = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t code_bits = 64;
  std::size_t hidden = 1024;
  std::size_t disc_hidden = 512;
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  double lr0 = 1e-4;
  std::size_t lr_decay_every = 50;
  double lr_decay_factor = 0.2;
  LossWeights weights{};
  AdamConfig adam{};
  std::uint64_t seed = 0;
  Ablation ablation{};
  bool symmetric_inter = false;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const;
  // weights with the ablation switches applied
  LossWeights effective_weights() const;
  BundleShape bundle_shape(std::size_t d_img, std::size_t d_txt) const;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(std::string_view text);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double c_inter = 0.0;
  double c_img = 0.0;
  double c_txt = 0.0;
  double adv_disc = 0.0;
  double adv_gen = 0.0;
  double quant = 0.0;
  double bit_balance = 0.0;
  double total = 0.0;
  std::size_t generator_steps = 0;
  std::size_t discriminator_steps = 0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string checkpoint_path;
  TrainConfig config;

  // One JSON object per line, one line per epoch. Wall time is excluded so
  // identical runs serialize to identical bytes; see timing_jsonl().
  std::string to_jsonl() const;
  std::string timing_jsonl() const;
};

// Target codes: sign of the mean of the four streams, sign(0) = +1.
Matrix update_binary_codes(const Matrix& hi, const Matrix& hi_aug, const Matrix& ht,
                           const Matrix& ht_aug);

double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Bias-corrected Adam update at step t >= 1; zeroes the gradient afterwards.
void adam_step(Param& param, double lr, std::uint64_t t, const AdamConfig& cfg);

class Trainer {
 public:
  Trainer(ModelBundle& bundle, TrainConfig cfg);

  // One pass over data in seeded batches: per batch a discriminator step
  // followed by a generator step.
  EpochRecord train_epoch(const PairedEmbeddings& data, std::size_t epoch);

  std::uint64_t generator_steps() const { return gen_t_; }
  std::uint64_t discriminator_steps() const { return disc_t_; }

 private:
  struct StepLosses {
    LossBreakdown gen;
    double adv_disc = 0.0;
  };
  StepLosses train_step(const PairedEmbeddings& batch, double lr);

  ModelBundle& bundle_;
  TrainConfig cfg_;
  LossWeights weights_;
  std::uint64_t gen_t_ = 0;
  std::uint64_t disc_t_ = 0;
};

struct TrainResult {
  ModelBundle bundle;
  TrainReport report;
};

// Trains a fresh bundle. When out_dir is non-empty, writes checkpoint.bin,
// train_report.jsonl and train_timing.jsonl there.
TrainResult train(const PairedEmbeddings& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {});

}  // namespace duch

#endif  // DUCH_TRAINER_HPP_
