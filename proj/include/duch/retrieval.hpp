#ifndef DUCH_RETRIEVAL_HPP_
#define DUCH_RETRIEVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "duch/matrix.hpp"
#include "duch/models.hpp"

namespace duch {

/// Sign-quantized codes, bit-packed. Bit j of code r is bit (j % 64) of word
/// j / 64; a set bit encodes +1, a clear bit -1. Unused high bits are zero.
class PackedCodes {
 public:
  PackedCodes() = default;
  PackedCodes(std::size_t n, std::size_t bits);

  // bit = 1 iff h >= 0 (sign(0) = +1)
  static PackedCodes from_continuous(const Matrix& h);

  std::size_t size() const { return n_; }
  std::size_t bits() const { return bits_; }
  std::size_t words_per_code() const { return words_; }

  std::span<const std::uint64_t> code(std::size_t i) const {
    return {data_.data() + i * words_, words_};
  }
  std::span<std::uint64_t> code(std::size_t i) { return {data_.data() + i * words_, words_}; }
  std::span<const std::uint64_t> words() const { return data_; }

  bool bit(std::size_t i, std::size_t j) const;
  // +1 / -1 matrix
  Matrix unpack() const;

  bool operator==(const PackedCodes&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t bits_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> data_;
};

// Number of differing bits. Throws DimensionError on width mismatch.
std::size_t hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

struct RetrievalIndex {
  PackedCodes codes;
  std::vector<std::uint64_t> ids;

  RetrievalIndex() = default;
  RetrievalIndex(PackedCodes c, std::vector<std::uint64_t> item_ids);
  std::size_t size() const { return ids.size(); }
};

struct Hit {
  std::uint64_t id = 0;
  std::size_t distance = 0;
  std::size_t position = 0;  // row in the index

  bool operator==(const Hit&) const = default;
};

// The min(k, n) nearest items by Hamming distance, ascending, ties broken by
// ascending id.
std::vector<Hit> top_k(std::span<const std::uint64_t> query, const RetrievalIndex& index, std::size_t k);

// Eval-mode codes for rows, computed batch by batch.
PackedCodes encode_rows(const HashNetwork& net, const Matrix& rows, std::size_t batch_size = 256);

// Code file: "DUCHCODE", u32 version, u64 n, u32 bits, then n * words_per_code
// u64 words, all little-endian. Ids go to a sidecar "<path>.ids", one decimal
// id per line.
void write_codes(const std::filesystem::path& path, const RetrievalIndex& index);
RetrievalIndex read_codes(const std::filesystem::path& path);

}  // namespace duch

#endif  // DUCH_RETRIEVAL_HPP_
