#include "duch/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>
#include <sstream>

#include "duch/binary_io.hpp"
#include "duch/errors.hpp"

namespace duch {

using nlohmann::json;

Ablation Ablation::parse(std::string_view list) {
  Ablation a;
  std::size_t start = 0;
  while (start <= list.size()) {
    std::size_t end = list.find(',', start);
    if (end == std::string_view::npos) end = list.size();
    std::string_view item = list.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item == "no_adv") {
      a.no_adv = true;
    } else if (item == "no_quant") {
      a.no_quant = true;
    } else if (item == "no_bb") {
      a.no_bb = true;
    } else if (item == "no_intra_img") {
      a.no_intra_img = true;
    } else if (item == "no_intra_txt") {
      a.no_intra_txt = true;
    } else if (!item.empty() && item != "none") {
      throw ConfigError(fmt::format("unknown ablation switch '{}'", item));
    }
    start = end + 1;
  }
  return a;
}

std::string Ablation::to_string() const {
  std::vector<std::string> parts;
  if (no_adv) parts.emplace_back("no_adv");
  if (no_quant) parts.emplace_back("no_quant");
  if (no_bb) parts.emplace_back("no_bb");
  if (no_intra_img) parts.emplace_back("no_intra_img");
  if (no_intra_txt) parts.emplace_back("no_intra_txt");
  if (parts.empty()) return "none";
  return fmt::format("{}", fmt::join(parts, ","));
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
    throw ConfigError("lr_decay_factor must lie in (0, 1)");
  }
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be at least 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (code_bits < 8) throw ConfigError("code_bits must be at least 8");
  if (hidden == 0 || disc_hidden == 0) throw ConfigError("hidden sizes must be positive");
  weights.validate();
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (ablation.no_adv) w.alpha = 0.0;
  if (ablation.no_quant) w.beta = 0.0;
  if (ablation.no_bb) w.gamma = 0.0;
  if (ablation.no_intra_img) w.lambda1 = 0.0;
  if (ablation.no_intra_txt) w.lambda2 = 0.0;
  return w;
}

BundleShape TrainConfig::bundle_shape(std::size_t d_img, std::size_t d_txt) const {
  return {d_img, d_txt, code_bits, hidden, disc_hidden, bn_momentum, bn_epsilon};
}

std::string to_json(const TrainConfig& c) {
  json j = {{"code_bits", c.code_bits},
            {"hidden", c.hidden},
            {"disc_hidden", c.disc_hidden},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"lr0", c.lr0},
            {"lr_decay_every", c.lr_decay_every},
            {"lr_decay_factor", c.lr_decay_factor},
            {"tau", c.weights.tau},
            {"lambda1", c.weights.lambda1},
            {"lambda2", c.weights.lambda2},
            {"alpha", c.weights.alpha},
            {"beta", c.weights.beta},
            {"gamma", c.weights.gamma},
            {"adam_beta1", c.adam.beta1},
            {"adam_beta2", c.adam.beta2},
            {"adam_epsilon", c.adam.epsilon},
            {"seed", c.seed},
            {"ablation", c.ablation.to_string()},
            {"symmetric_inter", c.symmetric_inter},
            {"bn_momentum", c.bn_momentum},
            {"bn_epsilon", c.bn_epsilon},
            {"loss_normalization", "L_Q and L_BB divided by batch_size*code_bits"}};
  return j.dump(2);
}

TrainConfig train_config_from_json(std::string_view text) {
  TrainConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  auto get = [&](const char* key, auto& slot) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(slot);
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("train config key '{}': {}", key, e.what()));
    }
  };
  get("code_bits", c.code_bits);
  get("hidden", c.hidden);
  get("disc_hidden", c.disc_hidden);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("lr0", c.lr0);
  get("lr_decay_every", c.lr_decay_every);
  get("lr_decay_factor", c.lr_decay_factor);
  get("tau", c.weights.tau);
  get("lambda1", c.weights.lambda1);
  get("lambda2", c.weights.lambda2);
  get("alpha", c.weights.alpha);
  get("beta", c.weights.beta);
  get("gamma", c.weights.gamma);
  get("adam_beta1", c.adam.beta1);
  get("adam_beta2", c.adam.beta2);
  get("adam_epsilon", c.adam.epsilon);
  get("seed", c.seed);
  get("symmetric_inter", c.symmetric_inter);
  get("bn_momentum", c.bn_momentum);
  get("bn_epsilon", c.bn_epsilon);
  std::string ablation;
  get("ablation", ablation);
  c.ablation = Ablation::parse(ablation);
  return c;
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream out;
  for (const auto& r : epochs) {
    json j = {{"epoch", r.epoch},
              {"lr", r.lr},
              {"L_C_inter", r.c_inter},
              {"L_C_img", r.c_img},
              {"L_C_txt", r.c_txt},
              {"L_adv_disc", r.adv_disc},
              {"L_adv_gen", r.adv_gen},
              {"L_Q", r.quant},
              {"L_BB", r.bit_balance},
              {"total", r.total},
              {"generator_steps", r.generator_steps},
              {"discriminator_steps", r.discriminator_steps}};
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string TrainReport::timing_jsonl() const {
  std::ostringstream out;
  for (const auto& r : epochs) {
    out << json{{"epoch", r.epoch}, {"wall_seconds", r.wall_seconds}}.dump() << '\n';
  }
  return out.str();
}

Matrix update_binary_codes(const Matrix& hi, const Matrix& hi_aug, const Matrix& ht,
                           const Matrix& ht_aug) {
  require_same_shape(hi, hi_aug, "hi", "hi_aug");
  require_same_shape(hi, ht, "hi", "ht");
  require_same_shape(hi, ht_aug, "hi", "ht_aug");
  Matrix b(hi.rows(), hi.cols());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double mean = 0.5 * ((hi.data()[i] + hi_aug.data()[i]) / 2.0 +
                               (ht.data()[i] + ht_aug.data()[i]) / 2.0);
    b.data()[i] = mean >= 0.0 ? 1.0 : -1.0;
  }
  return b;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const auto steps = static_cast<int>(epoch / cfg.lr_decay_every);
  return cfg.lr0 * std::pow(cfg.lr_decay_factor, steps);
}

void adam_step(Param& p, double lr, std::uint64_t t, const AdamConfig& cfg) {
  if (t < 1) throw Error("adam_step: step count starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  double* value = p.value.data();
  double* grad = p.grad.data();
  double* m = p.adam_m.data();
  double* v = p.adam_v.data();
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = grad[i];
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    grad[i] = 0.0;
  }
}

Trainer::Trainer(ModelBundle& bundle, TrainConfig cfg)
    : bundle_(bundle), cfg_(std::move(cfg)), weights_(cfg_.effective_weights()) {
  cfg_.validate();
}

Trainer::StepLosses Trainer::train_step(const PairedEmbeddings& batch, double lr) {
  StepLosses out;
  Tape tape;
  BatchCodes codes;
  codes.hi = hash_forward(tape, bundle_.f, tape.constant_ref(batch.x), Mode::train);
  codes.hi_aug = hash_forward(tape, bundle_.f, tape.constant_ref(batch.x_aug), Mode::train);
  codes.ht = hash_forward(tape, bundle_.g, tape.constant_ref(batch.y), Mode::train);
  codes.ht_aug = hash_forward(tape, bundle_.g, tape.constant_ref(batch.y_aug), Mode::train);
  codes.b_target = update_binary_codes(codes.hi.value(), codes.hi_aug.value(), codes.ht.value(),
                                       codes.ht_aug.value());

  auto disc_params = bundle_.d.params();
  if (weights_.alpha > 0.0) {
    Tape disc_tape;
    LossBreakdown b;
    for (Param* p : disc_params) p->zero_grad();
    Var loss = total_loss(codes, bundle_.d, weights_, Phase::discriminator, &disc_tape, &b);
    disc_tape.backward(loss);
    ++disc_t_;
    for (Param* p : disc_params) adam_step(*p, lr, disc_t_, cfg_.adam);
    out.adv_disc = b.adv_disc;
  }

  std::vector<Param*> gen_params = bundle_.f.params();
  for (Param* p : bundle_.g.params()) gen_params.push_back(p);
  for (Param* p : gen_params) p->zero_grad();
  Var loss = total_loss(codes, bundle_.d, weights_, Phase::generator, nullptr, &out.gen,
                        LossOptions{cfg_.symmetric_inter});
  tape.backward(loss);
  ++gen_t_;
  for (Param* p : gen_params) adam_step(*p, lr, gen_t_, cfg_.adam);
  return out;
}

EpochRecord Trainer::train_epoch(const PairedEmbeddings& data, std::size_t epoch) {
  data.validate();
  if (data.size() < 2) throw ConfigError("training needs at least 2 rows");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  auto batches = make_batches(rows, cfg_.batch_size, mix_seed(cfg_.seed, epoch + 1));
  // Train-mode batch norm cannot take a single row; fold a trailing
  // singleton into the previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }

  EpochRecord rec;
  rec.epoch = epoch;
  rec.lr = lr_at(epoch, cfg_);
  const std::uint64_t gen_before = gen_t_;
  const std::uint64_t disc_before = disc_t_;
  for (const auto& idx : batches) {
    const PairedEmbeddings batch{select_rows(data.x, idx), select_rows(data.x_aug, idx),
                                 select_rows(data.y, idx), select_rows(data.y_aug, idx)};
    const StepLosses s = train_step(batch, rec.lr);
    rec.c_inter += s.gen.c_inter;
    rec.c_img += s.gen.c_img;
    rec.c_txt += s.gen.c_txt;
    rec.adv_gen += s.gen.adv_gen;
    rec.quant += s.gen.quant;
    rec.bit_balance += s.gen.bit_balance;
    rec.total += s.gen.total;
    rec.adv_disc += s.adv_disc;
  }
  const double nb = static_cast<double>(batches.size());
  for (double* v : {&rec.c_inter, &rec.c_img, &rec.c_txt, &rec.adv_gen, &rec.quant,
                    &rec.bit_balance, &rec.total, &rec.adv_disc}) {
    *v /= nb;
  }
  rec.generator_steps = gen_t_ - gen_before;
  rec.discriminator_steps = disc_t_ - disc_before;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

TrainResult train(const PairedEmbeddings& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("train split is empty");
  TrainResult result{init_bundle(cfg.bundle_shape(data.x.cols(), data.y.cols()), cfg.seed), {}};
  result.report.config = cfg;
  Trainer trainer(result.bundle, cfg);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    result.report.epochs.push_back(trainer.train_epoch(data, epoch));
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto ckpt = out_dir / "checkpoint.bin";
    save_checkpoint(ckpt, result.bundle, to_json(cfg));
    result.report.checkpoint_path = ckpt.string();
    io::write_text(out_dir / "train_report.jsonl", result.report.to_jsonl());
    io::write_text(out_dir / "train_timing.jsonl", result.report.timing_jsonl());
  }
  return result;
}

}  // namespace duch
