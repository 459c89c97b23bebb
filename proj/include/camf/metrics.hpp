#pragma once

// Per-epoch metrics CSV and the factor-sweep result tables.

#include <charconv>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/models.hpp"

namespace camf {

inline constexpr std::string_view kMetricsHeader = "epoch,model,factors,seed,train_loss,hr10,ndcg10,wall_seconds";

// Shortest decimal string that parses back to the same double.
inline std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  require(ec == std::errc(), "format_double failed");
  return std::string(buf, ptr);
}

struct MetricsRow {
  std::size_t epoch = 0;
  std::string model;
  std::size_t factors = 0;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double hr10 = 0.0;
  double ndcg10 = 0.0;
  double wall_seconds = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline void write_metrics_header(std::ostream& out) { out << kMetricsHeader << '\n'; }

inline void write_metrics_row(std::ostream& out, const MetricsRow& row) {
  out << row.epoch << ',' << row.model << ',' << row.factors << ',' << row.seed << ',' << format_double(row.train_loss)
      << ',' << format_double(row.hr10) << ',' << format_double(row.ndcg10) << ',' << format_double(row.wall_seconds)
      << '\n';
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& path = "<metrics>") {
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number == 1) {
      if (line != kMetricsHeader) throw ParseError(path, number, "unexpected metrics header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split(line, ",");
    if (f.size() != 8) throw ParseError(path, number, "expected 8 comma-separated fields");
    MetricsRow row;
    row.epoch = detail::parse_field<std::size_t>(f[0], path, number, "epoch");
    row.model = std::string(f[1]);
    row.factors = detail::parse_field<std::size_t>(f[2], path, number, "factors");
    row.seed = detail::parse_field<std::uint64_t>(f[3], path, number, "seed");
    row.train_loss = detail::parse_field<double>(f[4], path, number, "train_loss");
    row.hr10 = detail::parse_field<double>(f[5], path, number, "hr10");
    row.ndcg10 = detail::parse_field<double>(f[6], path, number, "ndcg10");
    row.wall_seconds = detail::parse_field<double>(f[7], path, number, "wall_seconds");
    rows.push_back(std::move(row));
  }
  if (number == 0) throw ParseError(path, 1, "empty metrics file");
  return rows;
}

// Highest hr10, earliest on ties.
inline std::optional<MetricsRow> best_row(const std::vector<MetricsRow>& rows) {
  std::optional<MetricsRow> best;
  for (const auto& r : rows) {
    if (!best || r.hr10 > best->hr10) best = r;
  }
  return best;
}

struct SweepCell {
  ModelKind model = ModelKind::GMF;
  std::size_t factors = 0;
  std::optional<MetricsRow> best;
  std::optional<MetricsRow> final;
  std::string error;
};

// Long format: factors,model,selection,epoch,hr10,ndcg10 with selection in
// {best, final}; failed cells get selection "error".
inline void write_sweep_long(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "factors,model,selection,epoch,hr10,ndcg10\n";
  for (const auto& c : cells) {
    if (!c.error.empty() || !c.best) {
      out << c.factors << ',' << to_string(c.model) << ",error,,,\n";
      continue;
    }
    for (const auto& [label, row] : {std::pair{"best", *c.best}, std::pair{"final", *c.final}}) {
      out << c.factors << ',' << to_string(c.model) << ',' << label << ',' << row.epoch << ','
          << format_double(row.hr10) << ',' << format_double(row.ndcg10) << '\n';
    }
  }
}

// Wide table of best-epoch values: one row per factor count, one column per
// model in the configured order.
inline void write_sweep_table(std::ostream& out, const std::vector<SweepCell>& cells,
                              const std::vector<ModelKind>& models, const std::vector<std::size_t>& factors,
                              bool ndcg) {
  out << "factors";
  for (ModelKind m : models) out << ',' << to_string(m);
  out << '\n';
  for (std::size_t f : factors) {
    out << f;
    for (ModelKind m : models) {
      out << ',';
      for (const auto& c : cells) {
        if (c.model != m || c.factors != f) continue;
        if (c.best && c.error.empty()) {
          out << format_double(ndcg ? c.best->ndcg10 : c.best->hr10);
        } else {
          out << "error";
        }
      }
    }
    out << '\n';
  }
}

}  // namespace camf
