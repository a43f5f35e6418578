#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "duch/binary_io.hpp"
#include "duch/dataset.hpp"
#include "duch/errors.hpp"
#include "duch/pipeline.hpp"
#include "duch/retrieval.hpp"

namespace duch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_json(const RunConfig& cfg) {
  json j = {{"format", kRunConfigFormat},
            {"dataset", cfg.dataset},
            {"out", cfg.out},
            {"train", json::parse(duch::to_json(cfg.train))},
            {"eval",
             {{"map_k", cfg.eval.map_k},
              {"precision_k_max", cfg.eval.precision_k_max},
              {"direction", direction_name(cfg.eval.direction)}}}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("run config: {}", e.what()));
  }
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig cfg;
  try {
    if (j.contains("format") && j.at("format").get<std::string>() != kRunConfigFormat) {
      throw ConfigError(fmt::format("run config format '{}' unsupported", j.at("format").get<std::string>()));
    }
    if (j.contains("dataset")) cfg.dataset = j.at("dataset").get<std::string>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train").dump());
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      if (e.contains("map_k")) cfg.eval.map_k = e.at("map_k").get<std::size_t>();
      if (e.contains("precision_k_max")) cfg.eval.precision_k_max = e.at("precision_k_max").get<std::size_t>();
      if (e.contains("direction")) cfg.eval.direction = parse_direction(e.at("direction").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("run config: {}", e.what()));
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError(fmt::format("missing config {}", path.string()));
  return run_config_from_json(io::read_text(path));
}

fs::path default_out_root() {
  const char* env = std::getenv("DUCH_OUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("invalid seed '{}'", item));
    }
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Flags shared by train and ablate. Unset flags leave the config file value.
struct TrainOverrides {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> bits;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> hidden;
  std::optional<std::size_t> disc_hidden;
  std::optional<double> lr;
  std::optional<double> tau;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<std::string> ablation;
  std::optional<std::size_t> map_k;

  void add_to(CLI::App& app) {
    app.add_option("--config", config, "Run config file (JSON)");
    app.add_option("--dataset", dataset, "Dataset manifest.json");
    app.add_option("--out", out, "Output directory");
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--bits", bits, "Code length")->check(CLI::IsMember({16, 32, 64, 128}));
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--batch", batch, "Batch size");
    app.add_option("--hidden", hidden, "Hashing network hidden width");
    app.add_option("--disc-hidden", disc_hidden, "Discriminator hidden width");
    app.add_option("--lr", lr, "Initial learning rate");
    app.add_option("--tau", tau, "Contrastive temperature");
    app.add_option("--alpha", alpha, "Adversarial weight");
    app.add_option("--beta", beta, "Quantization weight");
    app.add_option("--gamma", gamma, "Bit-balance weight");
    app.add_option("--lambda1", lambda1, "Image intra-modal weight");
    app.add_option("--lambda2", lambda2, "Text intra-modal weight");
    app.add_option("--ablation", ablation, "Comma-separated switches: no_adv,no_quant,no_bb,no_intra_img,no_intra_txt");
    app.add_option("--map-k", map_k, "K for mAP@K");
  }

  RunConfig resolve(std::string_view command) const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    TrainConfig& t = cfg.train;
    if (seed) t.seed = *seed;
    if (bits) t.code_bits = *bits;
    if (epochs) t.epochs = *epochs;
    if (batch) t.batch_size = *batch;
    if (hidden) t.hidden = *hidden;
    if (disc_hidden) t.disc_hidden = *disc_hidden;
    if (lr) t.lr0 = *lr;
    if (tau) t.weights.tau = *tau;
    if (alpha) t.weights.alpha = *alpha;
    if (beta) t.weights.beta = *beta;
    if (gamma) t.weights.gamma = *gamma;
    if (lambda1) t.weights.lambda1 = *lambda1;
    if (lambda2) t.weights.lambda2 = *lambda2;
    if (ablation) t.ablation = Ablation::parse(*ablation);
    if (map_k) cfg.eval.map_k = *map_k;
    if (!dataset.empty()) cfg.dataset = dataset;
    if (!out.empty()) cfg.out = out;
    if (cfg.out.empty()) cfg.out = (default_out_root() / command).string();
    if (cfg.dataset.empty()) throw ConfigError("no dataset: pass --dataset or set it in --config");
    t.validate();
    cfg.eval.validate();
    return cfg;
  }
};

int cmd_gen_synth(const SyntheticConfig& sc, const std::string& out_flag, std::ostream& out) {
  const fs::path dir = out_flag.empty() ? default_out_root() / "synthetic" : fs::path(out_flag);
  const EmbeddingDataset ds = generate_synthetic(sc);
  const fs::path manifest = save_dataset(ds, dir);
  json echo = {{"n_clusters", sc.n_clusters}, {"n_pairs", sc.n_pairs},         {"d_img", sc.d_img},
               {"d_txt", sc.d_txt},           {"noise_sigma", sc.noise_sigma}, {"aug_sigma", sc.aug_sigma},
               {"seed", sc.seed}};
  io::write_text(dir / "synth_config.json", echo.dump(2) + "\n");
  out << manifest.string() << "\n";
  return ok;
}

int cmd_train(const TrainOverrides& o, std::ostream& out) {
  const RunConfig cfg = o.resolve("train");
  const EmbeddingDataset ds = load_dataset(cfg.dataset);
  const auto idx = ds.indices(Split::train);
  if (idx.empty()) throw ConfigError("dataset has no train split");
  fs::create_directories(cfg.out);
  io::write_text(fs::path(cfg.out) / "run_config.json", to_json(cfg));
  const TrainResult r = train(ds.rows(idx), cfg.train, cfg.out);
  const EpochRecord& last = r.report.epochs.back();
  out << fmt::format("trained {} epochs, final total loss {:.6f}\n", r.report.epochs.size(), last.total);
  out << r.report.checkpoint_path << "\n";
  if (!std::isfinite(last.total)) return runtime_error;
  return ok;
}

struct EncodeArgs {
  std::string checkpoint;
  std::string dataset;
  std::string split = "retrieval";
  std::string modality = "img";
  std::string out;
  std::size_t batch = 256;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  const Split split = parse_split(a.split);
  const Modality modality = parse_modality(a.modality);
  if (a.batch == 0) throw ConfigError("--batch must be positive");
  const fs::path path = a.out.empty()
                            ? default_out_root() / "codes" / fmt::format("{}_{}.codes", a.split, modality_name(modality))
                            : fs::path(a.out);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const EmbeddingDataset ds = load_dataset(a.dataset);
  const RetrievalIndex index = encode_split(ck.bundle, ds, split, modality, a.batch);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_codes(path, index);
  json echo = {{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"split", split_name(split)},
               {"modality", modality_name(modality)}, {"batch", a.batch}};
  io::write_text(path.string() + ".config.json", echo.dump(2) + "\n");
  out << fmt::format("{} codes of {} bits -> {}\n", index.size(), index.codes.bits(), path.string());
  return ok;
}

struct EvalArgs {
  std::string query;
  std::string retrieval;
  std::string dataset;
  std::string direction = "img_to_txt";
  std::size_t map_k = 20;
  std::size_t k_max = 100;
  std::string out;
};

std::vector<std::int32_t> labels_for(const RetrievalIndex& index, const EmbeddingDataset& ds,
                                     const std::string& what) {
  std::vector<std::int32_t> labels;
  labels.reserve(index.size());
  for (auto id : index.ids) {
    if (id >= ds.n()) throw FormatError(fmt::format("{}: id {} outside the dataset ({} rows)", what, id, ds.n()));
    labels.push_back(ds.labels[id]);
  }
  return labels;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  EvalConfig cfg;
  cfg.map_k = a.map_k;
  cfg.precision_k_max = a.k_max;
  cfg.direction = parse_direction(a.direction);
  cfg.validate();
  const fs::path path = a.out.empty()
                            ? default_out_root() / "eval" / fmt::format("eval_{}.txt", direction_name(cfg.direction))
                            : fs::path(a.out);
  const RetrievalIndex queries = read_codes(a.query);
  const RetrievalIndex archive = read_codes(a.retrieval);
  const EmbeddingDataset ds = load_dataset(a.dataset);
  const auto q_labels = labels_for(queries, ds, a.query);
  const auto r_labels = labels_for(archive, ds, a.retrieval);
  const EvalReport rep = evaluate({queries.codes, q_labels, archive, r_labels}, cfg);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_report(rep, path);
  json echo = {{"query", a.query},   {"retrieval", a.retrieval},      {"dataset", a.dataset},
               {"direction", direction_name(cfg.direction)}, {"map_k", cfg.map_k}, {"precision_k_max", cfg.precision_k_max}};
  io::write_text(path.string() + ".config.json", echo.dump(2) + "\n");
  out << fmt::format("{} mAP@{} = {:.6f}\n", direction_name(cfg.direction), cfg.map_k, rep.map_at_k);
  if (!rep.all_finite()) {
    err << "error: non-finite metric in report\n";
    return runtime_error;
  }
  return ok;
}

struct AblateArgs {
  std::string seeds = "0";
  std::string configs;
};

int cmd_ablate(const TrainOverrides& o, const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig base = o.resolve("ablate");
  const auto seeds = parse_seed_list(a.seeds);
  std::vector<AblationRow> rows = standard_ablations();
  if (!a.configs.empty()) {
    const auto wanted = split_names(a.configs);
    std::vector<AblationRow> picked;
    for (const auto& name : wanted) {
      auto it = std::find_if(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.name == name; });
      if (it == rows.end()) throw ConfigError(fmt::format("unknown ablation configuration '{}'", name));
      picked.push_back(*it);
    }
    rows = std::move(picked);
  }
  const EmbeddingDataset ds = load_dataset(base.dataset);
  const fs::path root = base.out;
  fs::create_directories(root);
  io::write_text(root / "run_config.json", to_json(base));

  std::string summary = "configuration\tablation\tseeds\tmap_img_to_txt\tmap_txt_to_img\tstatus\n";
  std::string per_run = "configuration\tseed\tmap_img_to_txt\tmap_txt_to_img\tstatus\n";
  bool any_failed = false;
  for (const AblationRow& row : rows) {
    std::vector<double> i2t, t2i;
    bool failed = false;
    for (auto seed : seeds) {
      RunConfig cfg = base;
      cfg.train.seed = seed;
      cfg.train.ablation = row.ablation;
      const fs::path dir = root / row.name / fmt::format("seed{}", seed);
      cfg.out = dir.string();
      try {
        fs::create_directories(dir);
        io::write_text(dir / "run_config.json", to_json(cfg));
        const PipelineResult r = run_pipeline(ds, cfg.train, cfg.eval, dir);
        if (!r.img_to_txt.all_finite() || !r.txt_to_img.all_finite()) throw TrainingError("non-finite metric");
        i2t.push_back(r.img_to_txt.map_at_k);
        t2i.push_back(r.txt_to_img.map_at_k);
        per_run += fmt::format("{}\t{}\t{:.16e}\t{:.16e}\tok\n", row.name, seed, i2t.back(), t2i.back());
      } catch (const std::exception& e) {
        failed = true;
        err << fmt::format("error: {} seed {}: {}\n", row.name, seed, e.what());
        per_run += fmt::format("{}\t{}\tnan\tnan\tfailed\n", row.name, seed);
      }
    }
    any_failed = any_failed || failed;
    const std::string m_i2t = i2t.empty() ? "nan" : fmt::format("{:.6f}", median(i2t));
    const std::string m_t2i = t2i.empty() ? "nan" : fmt::format("{:.6f}", median(t2i));
    summary += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", row.name, row.ablation.to_string(), seeds.size(), m_i2t,
                           m_t2i, failed ? "failed" : "ok");
  }
  io::write_text(root / "summary.tsv", summary);
  io::write_text(root / "runs.tsv", per_run);
  out << summary;
  return any_failed ? runtime_error : ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised cross-modal hashing: synthetic data, training, encoding, retrieval evaluation"};
  app.name("duch");
  app.require_subcommand(1);

  SyntheticConfig synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "Write a clustered synthetic embedding dataset");
  gen->add_option("--out", synth_out, "Dataset directory");
  gen->add_option("--seed", synth.seed, "Random seed");
  gen->add_option("--clusters", synth.n_clusters, "Number of clusters (>= 2)");
  gen->add_option("--pairs", synth.n_pairs, "Number of image/text pairs");
  gen->add_option("--d-img", synth.d_img, "Image embedding width");
  gen->add_option("--d-txt", synth.d_txt, "Text embedding width");
  gen->add_option("--noise", synth.noise_sigma, "Per-row noise standard deviation");
  gen->add_option("--aug", synth.aug_sigma, "Augmentation noise standard deviation");

  TrainOverrides train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train hashing networks on the train split");
  train_flags.add_to(*train_cmd);

  EncodeArgs enc;
  auto* encode = app.add_subcommand("encode", "Encode one split and modality into a code file");
  encode->add_option("--checkpoint", enc.checkpoint, "checkpoint.bin")->required();
  encode->add_option("--dataset", enc.dataset, "Dataset manifest.json")->required();
  encode->add_option("--split", enc.split, "train, query or retrieval");
  encode->add_option("--modality", enc.modality, "img or txt");
  encode->add_option("--batch", enc.batch, "Encoding batch size");
  encode->add_option("--out", enc.out, "Code file path");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Compute mAP@K and the P@K curve");
  eval->add_option("--query", ev.query, "Query code file")->required();
  eval->add_option("--retrieval", ev.retrieval, "Retrieval code file")->required();
  eval->add_option("--dataset", ev.dataset, "Dataset manifest.json holding the labels")->required();
  eval->add_option("--direction", ev.direction, "img_to_txt (i2t) or txt_to_img (t2i)");
  eval->add_option("--map-k", ev.map_k, "K for mAP@K");
  eval->add_option("--k-max", ev.k_max, "Largest K of the precision curve");
  eval->add_option("--out", ev.out, "Report path");

  TrainOverrides ablate_flags;
  AblateArgs abl;
  auto* ablate = app.add_subcommand("ablate", "Run the objective ablation table");
  ablate_flags.add_to(*ablate);
  ablate->add_option("--seeds", abl.seeds, "Comma-separated seeds");
  ablate->add_option("--configs", abl.configs, "Comma-separated subset of DUCH,DUCH-NA,DUCH-NQ,DUCH-NB,DUCH-CL,DUCH-CL-I,DUCH-CL-T");

  std::vector<std::string> storage{"duch"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage_error;
  }

  try {
    if (*gen) return cmd_gen_synth(synth, synth_out, out);
    if (*train_cmd) return cmd_train(train_flags, out);
    if (*encode) return cmd_encode(enc, out);
    if (*eval) return cmd_eval(ev, out, err);
    if (*ablate) return cmd_ablate(ablate_flags, abl, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return usage_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return runtime_error;
  }
  return usage_error;
}

}  // namespace duch::cli
