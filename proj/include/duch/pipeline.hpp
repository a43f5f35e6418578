#ifndef DUCH_PIPELINE_HPP_
#define DUCH_PIPELINE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "duch/dataset.hpp"
#include "duch/eval.hpp"
#include "duch/retrieval.hpp"
#include "duch/trainer.hpp"

namespace duch {

struct EncodedSplit {
  RetrievalIndex image;
  RetrievalIndex text;
  std::vector<std::int32_t> labels;
};

enum class Modality { image, text };
Modality parse_modality(std::string_view name);
std::string_view modality_name(Modality m);

// Codes for one split and modality; ids are dataset row indices.
RetrievalIndex encode_split(const ModelBundle& bundle, const EmbeddingDataset& ds, Split split,
                            Modality modality, std::size_t batch_size = 256);

struct PipelineResult {
  TrainReport train;
  EvalReport img_to_txt;
  EvalReport txt_to_img;
};

// Train on the train split, encode query and retrieval splits with both
// networks, then evaluate image->text and text->image. With a non-empty
// out_dir every artifact (checkpoint, reports, code files) is written there.
PipelineResult run_pipeline(const EmbeddingDataset& ds, const TrainConfig& train_cfg,
                            const EvalConfig& eval_cfg, const std::filesystem::path& out_dir = {});

/// One row of the objective-ablation table.
struct AblationRow {
  std::string name;
  Ablation ablation;
};

// DUCH, NA, NQ, NB, CL, CL-I, CL-T in that order.
std::vector<AblationRow> standard_ablations();

}  // namespace duch

#endif  // DUCH_PIPELINE_HPP_
