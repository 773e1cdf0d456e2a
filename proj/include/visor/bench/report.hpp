#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace visor::bench {

// One (query, backend) pair. Times and sizes are means per query execution.
struct ReportRow {
  std::string query;    // "Q1", "Q2", "Q3"
  std::string backend;  // "unified" or "adhoc-baseline"
  std::uint64_t repetitions = 0;
  std::uint64_t clients = 1;
  double metadata_ms = 0;
  double retrieval_ms = 0;
  double preprocess_ms = 0;
  double total_ms = 0;
  std::uint64_t bytes = 0;   // request plus response frames
  std::uint64_t images = 0;
  double throughput_qps = 0;

  bool operator==(const ReportRow&) const = default;
};

struct BenchReport {
  std::vector<ReportRow> rows;
  bool operator==(const BenchReport&) const = default;
};

enum class ReportFormat { text, csv, json };

std::optional<ReportFormat> parse_report_format(std::string_view name) noexcept;

std::string render(const BenchReport& report, ReportFormat format);

nlohmann::json report_to_json(const BenchReport& report);
BenchReport report_from_json(const nlohmann::json& j);
// Inverse of render(report, csv). Throws Errc::validation on malformed input.
BenchReport parse_csv(std::string_view text);

}  // namespace visor::bench
