#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "visor/bench/cohort.hpp"
#include "visor/bench/report.hpp"
#include "visor/image/image.hpp"
#include "visor/net/client.hpp"

namespace visor::bench {

inline constexpr const char* kFeatureSet = "slice_features";

// Where preprocessing runs. adhoc fetches full-size images one request at a
// time and applies the operations client-side with the same kernels.
enum class Mode { unified, adhoc };

std::string_view mode_name(Mode m) noexcept;  // "unified", "adhoc-baseline"
std::optional<Mode> parse_mode(std::string_view name) noexcept;

struct IngestOptions {
  bool descriptors = false;  // also store slice_features linked to each image
  std::string format = "tiled";
};

struct IngestResult {
  std::size_t patients = 0;
  std::size_t scans = 0;
  std::size_t images = 0;
  std::size_t descriptors = 0;
  std::vector<std::string> errors;  // one per patient that was not added
};

// One envelope per patient, so a patient is stored completely or not at all.
// Patients whose PatientID already exists are reported and skipped.
IngestResult ingest(net::Client& client, const Manifest& manifest, const IngestOptions& options = {});

enum class QueryId { q1 = 1, q2 = 2, q3 = 3 };

std::string query_name(QueryId q);  // "Q1".."Q3"

struct QuerySpec {
  QueryId id = QueryId::q1;
  std::string image_id;    // Q1
  std::string patient_id;  // Q2
  std::int64_t min_age = 75;  // Q3: Age > min_age
  std::string drug = "Temodar";
  std::int64_t threshold = 100;  // Q1
  std::uint32_t width = 128;
  std::uint32_t height = 128;
};

// Q1 targets the middle slice of the first scan, Q2 the first patient.
QuerySpec default_spec(QueryId id, const Manifest& manifest);

// Command envelope sent for the query: the full query in unified mode, the
// metadata-only part in adhoc mode.
nlohmann::json query_commands(const QuerySpec& spec, Mode mode);

struct QueryOutcome {
  double metadata_ms = 0;
  double retrieval_ms = 0;
  double preprocess_ms = 0;
  double total_ms = 0;
  std::uint64_t bytes = 0;
  std::size_t images = 0;
  std::vector<image::Image> outputs;  // filled when keep_outputs, ordered by image id
};

// Throws Errc::io_error on transport failure and Errc::internal when the
// server reports a failed command.
QueryOutcome run_query(net::Client& client, const QuerySpec& spec, Mode mode, bool keep_outputs = false);

struct BenchOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 55555;
  std::vector<Mode> modes = {Mode::unified, Mode::adhoc};
  std::vector<QueryId> queries = {QueryId::q1, QueryId::q2, QueryId::q3};
  std::size_t repetitions = 3;
  std::size_t clients = 1;
  std::uint32_t width = 128;
  std::uint32_t height = 128;
  std::int64_t threshold = 100;
  double bandwidth_mbps = 0;  // > 0 routes traffic through a ThrottleProxy
};

// Runs every (query, mode) pair `repetitions` times on each of `clients`
// parallel connections. repetitions == 0 yields an empty report.
BenchReport run_queries(const BenchOptions& options, const Manifest& manifest);

}  // namespace visor::bench
