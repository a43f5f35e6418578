#include "duch/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <sstream>

#include "duch/binary_io.hpp"
#include "duch/errors.hpp"

namespace duch {

namespace {

constexpr std::string_view kReportFormat = "duch-eval/1";

void check_inputs(const EvalInputs& in) {
  if (in.queries.size() == 0) throw ConfigError("evaluation needs at least one query");
  if (in.query_labels.size() != in.queries.size()) {
    throw DimensionError(fmt::format("{} query codes but {} query labels", in.queries.size(),
                                     in.query_labels.size()));
  }
  if (in.index_labels.size() != in.index.size()) {
    throw DimensionError(
        fmt::format("{} index codes but {} index labels", in.index.size(), in.index_labels.size()));
  }
  if (in.index.size() > 0 && in.index.codes.bits() != in.queries.bits()) {
    throw DimensionError(fmt::format("query codes have {} bits but index has {}", in.queries.bits(),
                                     in.index.codes.bits()));
  }
}

struct Ranked {
  std::vector<std::uint8_t> relevance;
  std::size_t total_relevant = 0;
};

Ranked rank_query(const EvalInputs& in, std::size_t q, std::size_t depth) {
  Ranked r;
  const std::int32_t label = in.query_labels[q];
  for (auto l : in.index_labels) r.total_relevant += is_relevant(label, l) ? 1 : 0;
  if (in.index.size() == 0) return r;
  for (const Hit& h : top_k(in.queries.code(q), in.index, depth)) {
    r.relevance.push_back(is_relevant(label, in.index_labels[h.position]));
  }
  return r;
}

std::string fmt_exact(double v) { return fmt::format("{:.16e}", v); }

}  // namespace

std::string_view direction_name(Direction d) {
  return d == Direction::img_to_txt ? "img_to_txt" : "txt_to_img";
}

Direction parse_direction(std::string_view name) {
  if (name == "img_to_txt" || name == "i2t") return Direction::img_to_txt;
  if (name == "txt_to_img" || name == "t2i") return Direction::txt_to_img;
  throw ConfigError(fmt::format("unknown direction '{}'", name));
}

void EvalConfig::validate() const {
  if (map_k < 1) throw ConfigError("map_k must be at least 1");
  if (precision_k_max < 1) throw ConfigError("precision range must be non-empty");
}

bool EvalReport::all_finite() const {
  if (!std::isfinite(map_at_k)) return false;
  return std::ranges::all_of(precision_curve, [](const auto& p) { return std::isfinite(p.second); });
}

bool is_relevant(std::int32_t label_q, std::int32_t label_r) { return label_q == label_r; }

double average_precision_at_k(std::span<const std::uint8_t> ranked_relevance, std::size_t k,
                              std::size_t total_relevant) {
  if (total_relevant == 0) return 0.0;
  const std::size_t depth = std::min(k, ranked_relevance.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (!ranked_relevance[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(std::min(total_relevant, k));
}

double map_at_k(const EvalInputs& in, const EvalConfig& cfg) {
  cfg.validate();
  check_inputs(in);
  double sum = 0.0;
  for (std::size_t q = 0; q < in.queries.size(); ++q) {
    const Ranked r = rank_query(in, q, cfg.map_k);
    sum += average_precision_at_k(r.relevance, cfg.map_k, r.total_relevant);
  }
  return sum / static_cast<double>(in.queries.size());
}

std::vector<std::pair<std::size_t, double>> precision_curve(const EvalInputs& in, const EvalConfig& cfg) {
  return evaluate(in, cfg).precision_curve;
}

EvalReport evaluate(const EvalInputs& in, const EvalConfig& cfg, bool keep_per_query) {
  cfg.validate();
  check_inputs(in);
  EvalReport rep;
  rep.direction = cfg.direction;
  rep.code_bits = in.queries.bits();
  rep.map_k = cfg.map_k;
  rep.n_queries = in.queries.size();
  rep.n_retrieval = in.index.size();
  const std::size_t k_max = std::min(cfg.precision_k_max, in.index.size());
  rep.curve_truncated = k_max < cfg.precision_k_max;
  const std::size_t depth = std::max(cfg.map_k, k_max);

  std::vector<double> hits_at(k_max, 0.0);
  double ap_sum = 0.0;
  for (std::size_t q = 0; q < in.queries.size(); ++q) {
    const Ranked r = rank_query(in, q, std::max<std::size_t>(depth, 1));
    const double ap = average_precision_at_k(r.relevance, cfg.map_k, r.total_relevant);
    ap_sum += ap;
    if (keep_per_query) rep.per_query_ap.push_back(ap);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k_max; ++i) {
      hits += r.relevance[i] ? 1 : 0;
      hits_at[i] += static_cast<double>(hits);
    }
  }
  const double nq = static_cast<double>(in.queries.size());
  rep.map_at_k = ap_sum / nq;
  for (std::size_t i = 0; i < k_max; ++i) {
    rep.precision_curve.emplace_back(i + 1, hits_at[i] / nq / static_cast<double>(i + 1));
  }
  return rep;
}

std::filesystem::path curve_csv_path(const std::filesystem::path& report_path) {
  auto p = report_path;
  p.replace_extension(".csv");
  if (p == report_path) p += ".csv";
  return p;
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  std::string text;
  text += fmt::format("format = {}\n", kReportFormat);
  text += fmt::format("direction = {}\n", direction_name(r.direction));
  text += fmt::format("code_bits = {}\n", r.code_bits);
  text += fmt::format("map_k = {}\n", r.map_k);
  text += "relevance = class_label_equality\n";
  text += "ap_normalization = min(R,K)\n";
  text += "tie_break = distance_then_id\n";
  text += fmt::format("n_queries = {}\n", r.n_queries);
  text += fmt::format("n_retrieval = {}\n", r.n_retrieval);
  text += fmt::format("map_at_k = {}\n", fmt_exact(r.map_at_k));
  text += fmt::format("precision_k_max = {}\n", r.precision_curve.size());
  text += fmt::format("curve_truncated = {}\n", r.curve_truncated ? "true" : "false");
  for (std::size_t q = 0; q < r.per_query_ap.size(); ++q) {
    text += fmt::format("ap.{} = {}\n", q, fmt_exact(r.per_query_ap[q]));
  }
  io::write_text(path, text);

  std::string csv = "K,precision\n";
  for (const auto& [k, p] : r.precision_curve) csv += fmt::format("{},{}\n", k, fmt_exact(p));
  io::write_text(curve_csv_path(path), csv);
}

EvalReport read_report(const std::filesystem::path& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(io::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError(fmt::format("{}: malformed line '{}'", path.string(), line));
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto at = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(fmt::format("{}: missing key '{}'", path.string(), key));
    return it->second;
  };
  if (at("format") != kReportFormat) throw VersionError(fmt::format("{}: unsupported format", path.string()));
  EvalReport r;
  r.direction = parse_direction(at("direction"));
  r.code_bits = std::stoull(at("code_bits"));
  r.map_k = std::stoull(at("map_k"));
  r.n_queries = std::stoull(at("n_queries"));
  r.n_retrieval = std::stoull(at("n_retrieval"));
  r.map_at_k = std::stod(at("map_at_k"));
  r.curve_truncated = at("curve_truncated") == "true";
  for (std::size_t q = 0; kv.contains(fmt::format("ap.{}", q)); ++q) {
    r.per_query_ap.push_back(std::stod(kv.at(fmt::format("ap.{}", q))));
  }

  std::istringstream csv(io::read_text(curve_csv_path(path)));
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("precision csv: malformed row");
    r.precision_curve.emplace_back(std::stoull(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return r;
}

}  // namespace duch
