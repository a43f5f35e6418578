#include "duch/pipeline.hpp"

#include <fmt/format.h>

#include "duch/errors.hpp"

namespace duch {

Modality parse_modality(std::string_view name) {
  if (name == "img" || name == "image") return Modality::image;
  if (name == "txt" || name == "text") return Modality::text;
  throw ConfigError(fmt::format("unknown modality '{}'", name));
}

std::string_view modality_name(Modality m) { return m == Modality::image ? "img" : "txt"; }

RetrievalIndex encode_split(const ModelBundle& bundle, const EmbeddingDataset& ds, Split split,
                            Modality modality, std::size_t batch_size) {
  const auto idx = ds.indices(split);
  const Matrix rows = select_rows(modality == Modality::image ? ds.x : ds.y, idx);
  const HashNetwork& net = modality == Modality::image ? bundle.f : bundle.g;
  return {encode_rows(net, rows, batch_size), std::vector<std::uint64_t>(idx.begin(), idx.end())};
}

PipelineResult run_pipeline(const EmbeddingDataset& ds, const TrainConfig& train_cfg,
                            const EvalConfig& eval_cfg, const std::filesystem::path& out_dir) {
  ds.validate();
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw ConfigError("dataset has no train split");
  TrainResult trained = train(ds.rows(train_idx), train_cfg, out_dir);

  const auto query_idx = ds.indices(Split::query);
  const auto retr_idx = ds.indices(Split::retrieval);
  const auto query_labels = ds.labels_of(query_idx);
  const auto retr_labels = ds.labels_of(retr_idx);
  const RetrievalIndex q_img = encode_split(trained.bundle, ds, Split::query, Modality::image);
  const RetrievalIndex q_txt = encode_split(trained.bundle, ds, Split::query, Modality::text);
  const RetrievalIndex r_img = encode_split(trained.bundle, ds, Split::retrieval, Modality::image);
  const RetrievalIndex r_txt = encode_split(trained.bundle, ds, Split::retrieval, Modality::text);

  PipelineResult out{std::move(trained.report), {}, {}};
  EvalConfig cfg = eval_cfg;
  cfg.direction = Direction::img_to_txt;
  out.img_to_txt = evaluate({q_img.codes, query_labels, r_txt, retr_labels}, cfg);
  cfg.direction = Direction::txt_to_img;
  out.txt_to_img = evaluate({q_txt.codes, query_labels, r_img, retr_labels}, cfg);

  if (!out_dir.empty()) {
    write_codes(out_dir / "query_img.codes", q_img);
    write_codes(out_dir / "query_txt.codes", q_txt);
    write_codes(out_dir / "retrieval_img.codes", r_img);
    write_codes(out_dir / "retrieval_txt.codes", r_txt);
    write_report(out.img_to_txt, out_dir / "eval_img_to_txt.txt");
    write_report(out.txt_to_img, out_dir / "eval_txt_to_img.txt");
  }
  return out;
}

std::vector<AblationRow> standard_ablations() {
  return {{"DUCH", Ablation::parse("")},
          {"DUCH-NA", Ablation::parse("no_adv")},
          {"DUCH-NQ", Ablation::parse("no_quant")},
          {"DUCH-NB", Ablation::parse("no_bb")},
          {"DUCH-CL", Ablation::parse("no_intra_img,no_intra_txt")},
          {"DUCH-CL-I", Ablation::parse("no_intra_txt")},
          {"DUCH-CL-T", Ablation::parse("no_intra_img")}};
}

}  // namespace duch
