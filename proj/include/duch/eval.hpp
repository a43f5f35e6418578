#ifndef DUCH_EVAL_HPP_
#define DUCH_EVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "duch/retrieval.hpp"

namespace duch {

enum class Direction { img_to_txt, txt_to_img };

std::string_view direction_name(Direction d);
Direction parse_direction(std::string_view name);

struct EvalConfig {
  std::size_t map_k = 20;
  std::size_t precision_k_max = 100;  // curve covers K = 1..precision_k_max
  Direction direction = Direction::img_to_txt;

  void validate() const;
};

/// Query codes of one modality with their class labels; index and
/// index_labels describe the archive of the other modality, aligned by row.
struct EvalInputs {
  const PackedCodes& queries;
  std::span<const std::int32_t> query_labels;
  const RetrievalIndex& index;
  std::span<const std::int32_t> index_labels;
};

struct EvalReport {
  Direction direction = Direction::img_to_txt;
  std::size_t code_bits = 0;
  std::size_t map_k = 20;
  std::size_t n_queries = 0;
  std::size_t n_retrieval = 0;
  double map_at_k = 0.0;
  std::vector<std::pair<std::size_t, double>> precision_curve;
  bool curve_truncated = false;
  std::vector<double> per_query_ap;

  bool all_finite() const;
};

bool is_relevant(std::int32_t label_q, std::int32_t label_r);

// ranked_relevance holds 0/1 flags in rank order.
// AP@K = sum_{i<=K} P@i * rel_i / min(R, K); 0 when R = 0.
double average_precision_at_k(std::span<const std::uint8_t> ranked_relevance, std::size_t k,
                              std::size_t total_relevant);

double map_at_k(const EvalInputs& in, const EvalConfig& cfg);
// (K, mean over queries of relevant-in-top-K / K) for K = 1..min(k_max, n).
std::vector<std::pair<std::size_t, double>> precision_curve(const EvalInputs& in, const EvalConfig& cfg);

// Both metrics from a single ranking pass per query.
EvalReport evaluate(const EvalInputs& in, const EvalConfig& cfg, bool keep_per_query = false);

// Writes the key = value report to path and the precision curve CSV
// (K,precision) next to it with extension .csv. Floats are written with 17
// significant digits so a read recovers them exactly.
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);
std::filesystem::path curve_csv_path(const std::filesystem::path& report_path);

}  // namespace duch

#endif  // DUCH_EVAL_HPP_
