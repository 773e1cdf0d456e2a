#include "visor/bench/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "visor/common/error.hpp"

namespace visor::bench {

namespace {

constexpr const char* kColumns[] = {"query",      "backend",       "repetitions", "clients",
                                    "metadata_ms", "retrieval_ms",  "preprocess_ms", "total_ms",
                                    "bytes",      "images",        "throughput_qps"};
constexpr std::size_t kColumnCount = std::size(kColumns);

std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

[[noreturn]] void bad_csv(const std::string& what) { throw Error(Errc::validation, "malformed report csv: " + what); }

template <typename T>
T parse_number(std::string_view s, const char* column) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) bad_csv(std::string("bad ") + column + " \"" + std::string(s) + "\"");
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string render_text(const BenchReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %-15s %5s %7s %12s %12s %12s %12s %14s %7s %10s\n", "query", "backend", "reps",
                "clients", "metadata_ms", "retrieval_ms", "preproc_ms", "total_ms", "bytes", "images", "qps");
  os << line;
  double longest = 0;
  for (const auto& r : report.rows) longest = std::max(longest, r.total_ms);
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-5s %-15s %5llu %7llu %12.3f %12.3f %12.3f %12.3f %14llu %7llu %10.2f\n",
                  r.query.c_str(), r.backend.c_str(), static_cast<unsigned long long>(r.repetitions),
                  static_cast<unsigned long long>(r.clients), r.metadata_ms, r.retrieval_ms, r.preprocess_ms,
                  r.total_ms, static_cast<unsigned long long>(r.bytes), static_cast<unsigned long long>(r.images),
                  r.throughput_qps);
    os << line;
  }
  if (report.rows.empty()) return os.str();
  // Stacked breakdown, scaled to the slowest row: M metadata, R retrieval,
  // P preprocessing, . unattributed.
  constexpr double kWidth = 60;
  os << "\nbreakdown (M metadata, R retrieval, P preprocess, . other)\n";
  for (const auto& r : report.rows) {
    const double scale = longest > 0 ? kWidth / longest : 0;
    auto cells = [&](double ms) { return static_cast<std::size_t>(std::lround(std::max(0.0, ms) * scale)); };
    const std::size_t m = cells(r.metadata_ms), rt = cells(r.retrieval_ms), p = cells(r.preprocess_ms);
    const std::size_t total = std::max(cells(r.total_ms), m + rt + p);
    std::string bar = std::string(m, 'M') + std::string(rt, 'R') + std::string(p, 'P') + std::string(total - m - rt - p, '.');
    std::snprintf(line, sizeof line, "%-3s %-15s |", r.query.c_str(), r.backend.c_str());
    os << line << bar;
    std::snprintf(line, sizeof line, "| %.3f ms\n", r.total_ms);
    os << line;
  }
  return os.str();
}

std::string render_csv(const BenchReport& report) {
  std::string out;
  for (std::size_t i = 0; i < kColumnCount; ++i) {
    if (i) out += ',';
    out += kColumns[i];
  }
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.query + ',' + r.backend + ',' + std::to_string(r.repetitions) + ',' + std::to_string(r.clients) + ',' +
           shortest(r.metadata_ms) + ',' + shortest(r.retrieval_ms) + ',' + shortest(r.preprocess_ms) + ',' +
           shortest(r.total_ms) + ',' + std::to_string(r.bytes) + ',' + std::to_string(r.images) + ',' +
           shortest(r.throughput_qps) + '\n';
  }
  return out;
}

}  // namespace

std::optional<ReportFormat> parse_report_format(std::string_view name) noexcept {
  if (name == "text") return ReportFormat::text;
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  return std::nullopt;
}

std::string render(const BenchReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::text: return render_text(report);
    case ReportFormat::csv: return render_csv(report);
    case ReportFormat::json: return report_to_json(report).dump(2) + "\n";
  }
  return {};
}

nlohmann::json report_to_json(const BenchReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"query", r.query},
                    {"backend", r.backend},
                    {"repetitions", r.repetitions},
                    {"clients", r.clients},
                    {"metadata_ms", r.metadata_ms},
                    {"retrieval_ms", r.retrieval_ms},
                    {"preprocess_ms", r.preprocess_ms},
                    {"total_ms", r.total_ms},
                    {"bytes", r.bytes},
                    {"images", r.images},
                    {"throughput_qps", r.throughput_qps}});
  }
  return {{"version", 1}, {"rows", std::move(rows)}};
}

BenchReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::validation, "unsupported report version");
    BenchReport out;
    for (const auto& r : j.at("rows")) {
      ReportRow row;
      row.query = r.at("query").get<std::string>();
      row.backend = r.at("backend").get<std::string>();
      row.repetitions = r.at("repetitions").get<std::uint64_t>();
      row.clients = r.at("clients").get<std::uint64_t>();
      row.metadata_ms = r.at("metadata_ms").get<double>();
      row.retrieval_ms = r.at("retrieval_ms").get<double>();
      row.preprocess_ms = r.at("preprocess_ms").get<double>();
      row.total_ms = r.at("total_ms").get<double>();
      row.bytes = r.at("bytes").get<std::uint64_t>();
      row.images = r.at("images").get<std::uint64_t>();
      row.throughput_qps = r.at("throughput_qps").get<double>();
      out.rows.push_back(std::move(row));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation, std::string("malformed report: ") + e.what());
  }
}

BenchReport parse_csv(std::string_view text) {
  BenchReport out;
  bool header = true;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != kColumnCount) bad_csv("expected " + std::to_string(kColumnCount) + " fields, got " + std::to_string(f.size()));
    if (header) {
      for (std::size_t i = 0; i < kColumnCount; ++i)
        if (f[i] != kColumns[i]) bad_csv("unexpected column \"" + std::string(f[i]) + "\"");
      header = false;
      continue;
    }
    ReportRow r;
    r.query = std::string(f[0]);
    r.backend = std::string(f[1]);
    r.repetitions = parse_number<std::uint64_t>(f[2], "repetitions");
    r.clients = parse_number<std::uint64_t>(f[3], "clients");
    r.metadata_ms = parse_number<double>(f[4], "metadata_ms");
    r.retrieval_ms = parse_number<double>(f[5], "retrieval_ms");
    r.preprocess_ms = parse_number<double>(f[6], "preprocess_ms");
    r.total_ms = parse_number<double>(f[7], "total_ms");
    r.bytes = parse_number<std::uint64_t>(f[8], "bytes");
    r.images = parse_number<std::uint64_t>(f[9], "images");
    r.throughput_qps = parse_number<double>(f[10], "throughput_qps");
    out.rows.push_back(std::move(r));
  }
  if (header) bad_csv("missing header");
  return out;
}

}  // namespace visor::bench
