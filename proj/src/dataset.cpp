#include "duch/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <numeric>
#include <random>

#include "duch/binary_io.hpp"
#include "duch/errors.hpp"

namespace duch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 4> kBlobKeys = {"x", "x_aug", "y", "y_aug"};

void require_finite_rows(const Matrix& m, const char* name) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (double v : m.row(r)) {
      if (!std::isfinite(v)) {
        throw NonFiniteError(fmt::format("{}: non-finite value in row {}", name, r));
      }
    }
  }
}

void write_f32_blob(const fs::path& path, const Matrix& m) {
  auto out = io::open_out(path);
  for (double v : m.values()) io::write_f32(out, static_cast<float>(v));
}

std::uintmax_t checked_size(const fs::path& path, std::uintmax_t expected) {
  if (!fs::exists(path)) throw MissingFileError(fmt::format("missing file {}", path.string()));
  const auto actual = fs::file_size(path);
  if (actual != expected) {
    throw SizeMismatchError(fmt::format("{}: size {} bytes, expected {}", path.string(), actual, expected));
  }
  return actual;
}

Matrix read_f32_blob(const fs::path& path, std::size_t rows, std::size_t cols, const char* name) {
  checked_size(path, static_cast<std::uintmax_t>(rows) * cols * 4);
  auto in = io::open_in(path);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = static_cast<double>(io::read_f32(in));
  require_finite_rows(m, name);
  return m;
}

}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::query:
      return "query";
    case Split::retrieval:
      return "retrieval";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "query") return Split::query;
  if (name == "retrieval") return Split::retrieval;
  throw ConfigError(fmt::format("unknown split '{}'", name));
}

void PairedEmbeddings::validate() const {
  require_same_shape(x, x_aug, "x", "x_aug");
  require_same_shape(y, y_aug, "y", "y_aug");
  if (y.rows() != x.rows()) {
    throw DimensionError(fmt::format("image rows {} != text rows {}", x.rows(), y.rows()));
  }
}

void EmbeddingDataset::validate() const {
  require_same_shape(x, x_aug, "x", "x_aug");
  require_same_shape(y, y_aug, "y", "y_aug");
  if (y.rows() != n() || labels.size() != n() || split.size() != n()) {
    throw DimensionError(fmt::format("dataset rows disagree: x {}, y {}, labels {}, split {}", n(),
                                     y.rows(), labels.size(), split.size()));
  }
  require_finite_rows(x, "x");
  require_finite_rows(x_aug, "x_aug");
  require_finite_rows(y, "y");
  require_finite_rows(y_aug, "y_aug");
  for (std::size_t i = 0; i < n(); ++i) {
    if (labels[i] < 0) throw FormatError(fmt::format("negative label at row {}", i));
    if (static_cast<std::uint8_t>(split[i]) > 2) {
      throw FormatError(fmt::format("invalid split tag at row {}", i));
    }
  }
}

std::vector<std::size_t> EmbeddingDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

PairedEmbeddings EmbeddingDataset::rows(std::span<const std::size_t> idx) const {
  return {select_rows(x, idx), select_rows(x_aug, idx), select_rows(y, idx), select_rows(y_aug, idx)};
}

std::vector<std::int32_t> EmbeddingDataset::labels_of(std::span<const std::size_t> idx) const {
  std::vector<std::int32_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels.at(i));
  return out;
}

fs::path save_dataset(const EmbeddingDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  json files = {{"x", "x.f32"},         {"x_aug", "x_aug.f32"},   {"y", "y.f32"},
                {"y_aug", "y_aug.f32"}, {"labels", "labels.i32"}, {"split", "split.u8"}};
  write_f32_blob(dir / "x.f32", ds.x);
  write_f32_blob(dir / "x_aug.f32", ds.x_aug);
  write_f32_blob(dir / "y.f32", ds.y);
  write_f32_blob(dir / "y_aug.f32", ds.y_aug);
  {
    auto out = io::open_out(dir / "labels.i32");
    for (auto l : ds.labels) io::write_i32(out, l);
  }
  {
    auto out = io::open_out(dir / "split.u8");
    std::string bytes(ds.split.size(), '\0');
    for (std::size_t i = 0; i < ds.split.size(); ++i) bytes[i] = static_cast<char>(ds.split[i]);
    io::write_bytes(out, bytes);
  }
  json manifest = {{"format", kDatasetFormat},
                   {"n", ds.n()},
                   {"d_img", ds.d_img()},
                   {"d_txt", ds.d_txt()},
                   {"files", files},
                   {"provenance", ds.provenance}};
  const fs::path path = dir / "manifest.json";
  io::write_text(path, manifest.dump(2) + "\n");
  return path;
}

EmbeddingDataset load_dataset(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) {
    throw MissingFileError(fmt::format("missing manifest {}", manifest_path.string()));
  }
  json manifest;
  try {
    manifest = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  const fs::path dir = manifest_path.parent_path();
  EmbeddingDataset ds;
  try {
    const auto format = manifest.at("format").get<std::string>();
    if (format != kDatasetFormat) {
      throw VersionError(fmt::format("{}: format '{}' unsupported (expected {})",
                                     manifest_path.string(), format, kDatasetFormat));
    }
    const auto n = manifest.at("n").get<std::size_t>();
    const auto d_img = manifest.at("d_img").get<std::size_t>();
    const auto d_txt = manifest.at("d_txt").get<std::size_t>();
    const auto& files = manifest.at("files");
    auto file = [&](const char* key) { return dir / files.at(key).get<std::string>(); };
    ds.x = read_f32_blob(file("x"), n, d_img, "x");
    ds.x_aug = read_f32_blob(file("x_aug"), n, d_img, "x_aug");
    ds.y = read_f32_blob(file("y"), n, d_txt, "y");
    ds.y_aug = read_f32_blob(file("y_aug"), n, d_txt, "y_aug");
    {
      const fs::path p = file("labels");
      checked_size(p, static_cast<std::uintmax_t>(n) * 4);
      auto in = io::open_in(p);
      ds.labels.resize(n);
      for (auto& l : ds.labels) l = io::read_i32(in);
    }
    {
      const fs::path p = file("split");
      checked_size(p, n);
      const std::string bytes = io::read_text(p);
      ds.split.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto b = static_cast<std::uint8_t>(bytes[i]);
        if (b > 2) throw FormatError(fmt::format("{}: invalid split tag {} at row {}", p.string(), b, i));
        ds.split[i] = static_cast<Split>(b);
      }
    }
    if (manifest.contains("provenance")) {
      for (const auto& [k, v] : manifest.at("provenance").items()) {
        ds.provenance[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  ds.validate();
  return ds;
}

std::vector<Split> split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.query < 0 || ratios.retrieval < 0 ||
      std::abs(ratios.train + ratios.query + ratios.retrieval - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(ratios.train * static_cast<double>(n)));
  const auto n_query = static_cast<std::size_t>(std::floor(ratios.query * static_cast<double>(n)));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Split> out(n, Split::retrieval);
  for (std::size_t i = 0; i < n_train; ++i) out[perm[i]] = Split::train;
  for (std::size_t i = n_train; i < n_train + n_query; ++i) out[perm[i]] = Split::query;
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> rows,
                                                   std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> perm(rows.begin(), rows.end());
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(perm.size(), start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void SyntheticConfig::validate() const {
  if (n_clusters < 2) throw ConfigError("synthetic data needs at least 2 clusters");
  if (n_pairs == 0 || d_img == 0 || d_txt == 0) throw ConfigError("synthetic sizes must be positive");
  if (!(noise_sigma >= 0.0) || !(aug_sigma >= 0.0)) throw ConfigError("sigmas must be non-negative");
}

EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  auto unit_anchors = [&](std::size_t dim) {
    Matrix a(cfg.n_clusters, dim);
    for (std::size_t g = 0; g < cfg.n_clusters; ++g) {
      double sq = 0.0;
      for (double& v : a.row(g)) {
        v = unit(rng);
        sq += v * v;
      }
      const double norm = std::sqrt(sq);
      for (double& v : a.row(g)) v /= norm;
    }
    return a;
  };
  const Matrix img_anchor = unit_anchors(cfg.d_img);
  const Matrix txt_anchor = unit_anchors(cfg.d_txt);

  EmbeddingDataset ds;
  const std::size_t n = cfg.n_pairs;
  ds.x = Matrix(n, cfg.d_img);
  ds.x_aug = Matrix(n, cfg.d_img);
  ds.y = Matrix(n, cfg.d_txt);
  ds.y_aug = Matrix(n, cfg.d_txt);
  ds.labels.resize(n);
  auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (std::size_t m = 0; m < n; ++m) {
    const std::size_t g = m % cfg.n_clusters;
    ds.labels[m] = static_cast<std::int32_t>(g);
    for (std::size_t c = 0; c < cfg.d_img; ++c) {
      const double v = img_anchor(g, c) + cfg.noise_sigma * unit(rng);
      ds.x(m, c) = f32(v);
      ds.x_aug(m, c) = f32(v + cfg.aug_sigma * unit(rng));
    }
    for (std::size_t c = 0; c < cfg.d_txt; ++c) {
      const double v = txt_anchor(g, c) + cfg.noise_sigma * unit(rng);
      ds.y(m, c) = f32(v);
      ds.y_aug(m, c) = f32(v + cfg.aug_sigma * unit(rng));
    }
  }
  ds.split = split_dataset(n, cfg.ratios, mix_seed(cfg.seed, 0x5eed));
  ds.provenance = {{"generator", "synthetic"},
                   {"n_clusters", std::to_string(cfg.n_clusters)},
                   {"noise_sigma", fmt::format("{}", cfg.noise_sigma)},
                   {"aug_sigma", fmt::format("{}", cfg.aug_sigma)},
                   {"seed", std::to_string(cfg.seed)}};
  return ds;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined state
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace duch
