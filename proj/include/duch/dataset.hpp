#ifndef DUCH_DATASET_HPP_
#define DUCH_DATASET_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duch/matrix.hpp"

namespace duch {

enum class Split : std::uint8_t { train = 0, query = 1, retrieval = 2 };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

/// Row-aligned image/text embeddings and their augmented views. This is all
/// the trainer ever sees; labels and split tags stay in EmbeddingDataset.
struct PairedEmbeddings {
  Matrix x;
  Matrix x_aug;
  Matrix y;
  Matrix y_aug;

  std::size_t size() const { return x.rows(); }
  void validate() const;
};

inline constexpr std::string_view kDatasetFormat = "duch-emb/1";

struct EmbeddingDataset {
  Matrix x;      // N x d_img
  Matrix x_aug;  // N x d_img
  Matrix y;      // N x d_txt
  Matrix y_aug;  // N x d_txt
  std::vector<std::int32_t> labels;
  std::vector<Split> split;
  std::map<std::string, std::string> provenance;

  std::size_t n() const { return x.rows(); }
  std::size_t d_img() const { return x.cols(); }
  std::size_t d_txt() const { return y.cols(); }

  // Throws DimensionError / NonFiniteError / FormatError on any violated invariant.
  void validate() const;
  std::vector<std::size_t> indices(Split s) const;
  PairedEmbeddings rows(std::span<const std::size_t> idx) const;
  std::vector<std::int32_t> labels_of(std::span<const std::size_t> idx) const;
};

// Writes manifest.json plus the blobs into dir. Embeddings are stored as
// little-endian float32, so values must already be float-representable for
// an exact round trip. Returns the manifest path.
std::filesystem::path save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& dir);
EmbeddingDataset load_dataset(const std::filesystem::path& manifest_path);

struct SplitRatios {
  double train = 0.5;
  double query = 0.1;
  double retrieval = 0.4;
};

// train = floor(train * n), query = floor(query * n), retrieval = remainder,
// assigned over a seeded permutation of 0..n-1.
std::vector<Split> split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

// Seeded permutation of rows cut into contiguous chunks of batch_size; the
// last chunk may be short.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> rows,
                                                   std::size_t batch_size, std::uint64_t seed);

struct SyntheticConfig {
  std::size_t n_clusters = 4;
  std::size_t n_pairs = 2000;
  std::size_t d_img = 64;
  std::size_t d_txt = 96;
  double noise_sigma = 0.1;
  double aug_sigma = 0.2;
  std::uint64_t seed = 0;
  SplitRatios ratios{};

  void validate() const;
};

// Clustered paired embeddings: cluster g has unit anchors a_g (image) and b_g
// (text); each row is its anchor plus N(0, noise_sigma^2) noise and each
// augmented view adds N(0, aug_sigma^2) to that row. Pair m belongs to
// cluster m mod n_clusters. Values are rounded to float32.
EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg);

// Mixes two 64-bit values into a well-spread seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace duch

#endif  // DUCH_DATASET_HPP_
