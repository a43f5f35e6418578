#include "duch/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <fmt/format.h>
#include <sstream>
#include <unordered_set>

#include "duch/binary_io.hpp"
#include "duch/errors.hpp"

namespace duch {

namespace {

constexpr char kCodeMagic[] = "DUCHCODE";
constexpr std::uint32_t kCodeVersion = 1;

}  // namespace

PackedCodes::PackedCodes(std::size_t n, std::size_t bits)
    : n_(n), bits_(bits), words_((bits + 63) / 64), data_(n * words_, 0) {}

PackedCodes PackedCodes::from_continuous(const Matrix& h) {
  PackedCodes out(h.rows(), h.cols());
  for (std::size_t r = 0; r < h.rows(); ++r) {
    auto words = out.code(r);
    for (std::size_t j = 0; j < h.cols(); ++j) {
      if (h(r, j) >= 0.0) words[j / 64] |= std::uint64_t{1} << (j % 64);
    }
  }
  return out;
}

bool PackedCodes::bit(std::size_t i, std::size_t j) const {
  return (code(i)[j / 64] >> (j % 64)) & 1U;
}

Matrix PackedCodes::unpack() const {
  Matrix m(n_, bits_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < bits_; ++j) m(i, j) = bit(i, j) ? 1.0 : -1.0;
  }
  return m;
}

std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("hamming: {} words vs {} words", a.size(), b.size()));
  }
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += static_cast<std::size_t>(std::popcount(a[w] ^ b[w]));
  return d;
}

RetrievalIndex::RetrievalIndex(PackedCodes c, std::vector<std::uint64_t> item_ids)
    : codes(std::move(c)), ids(std::move(item_ids)) {
  if (ids.size() != codes.size()) {
    throw DimensionError(fmt::format("index: {} codes but {} ids", codes.size(), ids.size()));
  }
  std::unordered_set<std::uint64_t> seen;
  for (auto id : ids) {
    if (!seen.insert(id).second) throw FormatError(fmt::format("index: duplicate id {}", id));
  }
}

std::vector<Hit> top_k(std::span<const std::uint64_t> query, const RetrievalIndex& index, std::size_t k) {
  if (k == 0) throw ConfigError("top_k: k must be at least 1");
  std::vector<Hit> hits(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    hits[i] = {index.ids[i], hamming(query, index.codes.code(i)), i};
  }
  auto less = [](const Hit& a, const Hit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), less);
  hits.resize(keep);
  return hits;
}

PackedCodes encode_rows(const HashNetwork& net, const Matrix& rows, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("encode: batch size must be positive");
  PackedCodes out(rows.rows(), net.code_bits);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < rows.rows(); start += batch_size) {
    const std::size_t end = std::min(rows.rows(), start + batch_size);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const PackedCodes part = PackedCodes::from_continuous(hash_forward_eval(net, select_rows(rows, idx)));
    for (std::size_t i = start; i < end; ++i) {
      std::ranges::copy(part.code(i - start), out.code(i).begin());
    }
  }
  return out;
}

void write_codes(const std::filesystem::path& path, const RetrievalIndex& index) {
  {
    auto out = io::open_out(path);
    io::write_bytes(out, std::string_view(kCodeMagic, 8));
    io::write_u32(out, kCodeVersion);
    io::write_u64(out, index.codes.size());
    io::write_u32(out, static_cast<std::uint32_t>(index.codes.bits()));
    for (auto w : index.codes.words()) io::write_u64(out, w);
  }
  std::ostringstream ids;
  for (auto id : index.ids) ids << id << '\n';
  io::write_text(path.string() + ".ids", ids.str());
}

RetrievalIndex read_codes(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  if (io::read_bytes(in, 8) != std::string_view(kCodeMagic, 8)) {
    throw FormatError(fmt::format("{}: not a code file", path.string()));
  }
  const auto version = io::read_u32(in);
  if (version != kCodeVersion) {
    throw VersionError(fmt::format("{}: code file version {} unsupported", path.string(), version));
  }
  const auto n = io::read_u64(in);
  const auto bits = io::read_u32(in);
  PackedCodes codes(n, bits);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& w : codes.code(i)) w = io::read_u64(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw SizeMismatchError(fmt::format("{}: trailing bytes after {} codes", path.string(), n));
  }
  std::vector<std::uint64_t> ids;
  std::istringstream id_text(io::read_text(path.string() + ".ids"));
  std::uint64_t id = 0;
  while (id_text >> id) ids.push_back(id);
  if (ids.size() != n) {
    throw SizeMismatchError(fmt::format("{}.ids: {} ids for {} codes", path.string(), ids.size(), n));
  }
  return {std::move(codes), std::move(ids)};
}

}  // namespace duch
