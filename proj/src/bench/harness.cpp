#include "visor/bench/harness.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>

#include "visor/bench/features.hpp"
#include "visor/bench/proxy.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"
#include "visor/image/codec.hpp"
#include "visor/image/ops.hpp"
#include "visor/query/engine.hpp"
#include "visor/query/json_codec.hpp"

namespace visor::bench {

using nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

double ms_since(clock_type::time_point t0) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

// First failed command as "Verb: error: info", if any.
std::optional<std::string> first_error(const json& responses) {
  if (!responses.is_array()) return "response is not an array";
  for (const auto& r : responses) {
    for (const auto& [verb, body] : r.items()) {
      const int st = body.value("status", -1);
      if (st != 0 && st != status::aborted)
        return verb + ": " + body.value("error", std::string("?")) + ": " + body.value("info", std::string());
    }
  }
  return std::nullopt;
}

void require_ok(const net::Reply& reply) {
  if (auto e = first_error(reply.responses)) throw Error(Errc::internal, "query failed: " + *e);
}

json eq(const std::string& v) { return json::array({"==", v}); }

std::vector<image::TransformOp> spec_ops(const QuerySpec& spec) {
  std::vector<image::TransformOp> ops;
  if (spec.id == QueryId::q1) ops.push_back(image::Threshold{spec.threshold});
  ops.push_back(image::Resize{spec.width, spec.height});
  return ops;
}

Bytes descriptor_blob(const std::vector<float>& v) {
  ByteWriter w;
  w.reserve(v.size() * 4);
  for (float x : v) w.f32(x);
  return w.take();
}

void ensure_feature_set(net::Client& client) {
  auto reply = client.query(json::array({{{"AddDescriptorSet", {{"name", kFeatureSet}, {"dimensions", kFeatureDims}}}}}));
  const auto& body = reply.responses.at(0).at("AddDescriptorSet");
  if (body.value("status", -1) == 0 || body.value("error", std::string()) == "duplicate-name") return;
  throw Error(Errc::internal, "cannot create descriptor set: " + body.value("info", std::string()));
}

}  // namespace

std::string_view mode_name(Mode m) noexcept { return m == Mode::unified ? "unified" : "adhoc-baseline"; }

std::optional<Mode> parse_mode(std::string_view name) noexcept {
  if (name == "unified") return Mode::unified;
  if (name == "adhoc" || name == "adhoc-baseline") return Mode::adhoc;
  return std::nullopt;
}

std::string query_name(QueryId q) { return "Q" + std::to_string(static_cast<int>(q)); }

IngestResult ingest(net::Client& client, const Manifest& manifest, const IngestOptions& options) {
  IngestResult out;
  if (options.descriptors) ensure_feature_set(client);
  for (const auto& p : manifest.patients) {
    auto check = client.query(json::array(
        {{{"FindEntity", {{"class", "Patient"}, {"constraints", {{"PatientID", eq(p.patient_id)}}}, {"results", {{"count", true}}}}}}}));
    require_ok(check);
    if (check.responses.at(0).at("FindEntity").value("count", 0) > 0) {
      out.errors.push_back(p.patient_id + ": duplicate PatientID");
      continue;
    }

    json cmds = json::array();
    std::vector<Bytes> blobs;
    int ref = 1;
    const int patient_ref = ref++;
    cmds.push_back({{"AddEntity",
                     {{"class", "Patient"},
                      {"properties", {{"PatientID", p.patient_id}, {"Age", p.age}, {"ChemoDrug", p.chemo_drug}}},
                      {"_ref", patient_ref}}}});
    std::size_t images = 0;
    for (const auto& s : p.scans) {
      const int scan_ref = ref++;
      cmds.push_back({{"AddEntity", {{"class", "Scan"}, {"properties", {{"ScanID", s.scan_id}}}, {"_ref", scan_ref}}}});
      cmds.push_back({{"Connect", {{"ref1", patient_ref}, {"ref2", scan_ref}, {"class", "hasScan"}}}});
      for (const auto& sl : s.slices) {
        const int image_ref = ref++;
        Bytes png = read_file(manifest.root / sl.file);
        cmds.push_back({{"AddImage",
                         {{"format", options.format},
                          {"properties", {{"id", sl.id}, {"slice", sl.index}, {"tumor", sl.tumor}}},
                          {"link", {{"ref", scan_ref}, {"class", "hasSlice"}, {"direction", "in"}}},
                          {"_ref", image_ref}}}});
        if (options.descriptors) {
          auto features = slice_features(image::decode(png));
          blobs.push_back(std::move(png));
          cmds.push_back({{"AddDescriptor",
                           {{"set", kFeatureSet}, {"label", sl.tumor ? "tumor" : "clear"}, {"link", {{"ref", image_ref}}}}}});
          blobs.push_back(descriptor_blob(features));
        } else {
          blobs.push_back(std::move(png));
        }
        ++images;
      }
    }
    auto reply = client.query(cmds, std::move(blobs));
    if (auto e = first_error(reply.responses)) {
      out.errors.push_back(p.patient_id + ": " + *e);
      continue;
    }
    ++out.patients;
    out.scans += p.scans.size();
    out.images += images;
    if (options.descriptors) out.descriptors += images;
  }
  return out;
}

QuerySpec default_spec(QueryId id, const Manifest& manifest) {
  QuerySpec spec;
  spec.id = id;
  if (!manifest.patients.empty()) {
    const auto& p = manifest.patients.front();
    spec.patient_id = p.patient_id;
    if (!p.scans.empty() && !p.scans.front().slices.empty()) {
      const auto& slices = p.scans.front().slices;
      spec.image_id = slices[slices.size() / 2].id;
    }
  }
  return spec;
}

json query_commands(const QuerySpec& spec, Mode mode) {
  json cmds = json::array();
  json image_link;
  json image_constraints;
  switch (spec.id) {
    case QueryId::q1:
      image_constraints = {{"id", eq(spec.image_id)}};
      break;
    case QueryId::q2:
      cmds.push_back({{"FindEntity", {{"class", "Patient"}, {"constraints", {{"PatientID", eq(spec.patient_id)}}}, {"_ref", 1}}}});
      cmds.push_back({{"FindEntity",
                       {{"class", "Scan"}, {"link", {{"ref", 1}, {"class", "hasScan"}, {"direction", "out"}}}, {"_ref", 2}}}});
      image_link = {{"ref", 2}, {"class", "hasSlice"}, {"direction", "out"}};
      break;
    case QueryId::q3:
      cmds.push_back({{"FindEntity",
                       {{"class", "Patient"},
                        {"constraints", {{"Age", json::array({">", spec.min_age})}, {"ChemoDrug", eq(spec.drug)}}},
                        {"_ref", 1}}}});
      cmds.push_back({{"FindEntity",
                       {{"class", "Scan"},
                        {"link", {{"ref", 1}, {"class", "hasScan"}, {"direction", "out"}}},
                        {"results", {{"list", {"ScanID"}}}},
                        {"_ref", 2}}}});
      image_link = {{"ref", 2}, {"class", "hasSlice"}, {"direction", "out"}};
      break;
  }
  json body = {{"results", {{"sort", "id"}}}};
  if (!image_constraints.is_null()) body["constraints"] = image_constraints;
  if (!image_link.is_null()) body["link"] = image_link;
  if (mode == Mode::unified) {
    json ops = json::array();
    for (const auto& op : spec_ops(spec)) ops.push_back(query::op_to_json(op));
    body["operations"] = std::move(ops);
    body["format"] = "png";
    cmds.push_back({{"FindImage", std::move(body)}});
  } else {
    body["class"] = std::string(query::kImageClass);
    body["results"]["list"] = {"id"};
    cmds.push_back({{"FindEntity", std::move(body)}});
  }
  return cmds;
}

QueryOutcome run_query(net::Client& client, const QuerySpec& spec, Mode mode, bool keep_outputs) {
  QueryOutcome out;
  const auto t0 = clock_type::now();
  if (mode == Mode::unified) {
    auto reply = client.query(query_commands(spec, mode), {}, true);
    out.total_ms = ms_since(t0);
    require_ok(reply);
    out.bytes = reply.request_bytes + reply.response_bytes;
    out.images = reply.blobs.size();
    if (reply.timing) {
      out.metadata_ms = reply.timing->value("metadata_us", 0.0) / 1000.0;
      out.preprocess_ms = reply.timing->value("preprocess_us", 0.0) / 1000.0;
    }
    // Retrieval covers server-side fetch plus the transfer back.
    out.retrieval_ms = std::max(0.0, out.total_ms - out.metadata_ms - out.preprocess_ms);
    if (keep_outputs)
      for (const auto& b : reply.blobs) out.outputs.push_back(image::decode(b));
    return out;
  }

  auto meta = client.query(query_commands(spec, mode));
  require_ok(meta);
  out.metadata_ms = ms_since(t0);
  out.bytes += meta.request_bytes + meta.response_bytes;
  std::vector<std::string> ids;
  const auto& last = meta.responses.back().at("FindEntity");
  if (auto it = last.find("entities"); it != last.end())
    for (const auto& e : *it) ids.push_back(e.at("id").get<std::string>());

  const auto ops = spec_ops(spec);
  for (const auto& id : ids) {
    const auto r0 = clock_type::now();
    auto reply = client.query(json::array({{{"FindImage", {{"constraints", {{"id", eq(id)}}}, {"format", "png"}}}}}));
    out.retrieval_ms += ms_since(r0);
    require_ok(reply);
    out.bytes += reply.request_bytes + reply.response_bytes;
    if (reply.blobs.size() != 1) throw Error(Errc::internal, "image \"" + id + "\" returned " + std::to_string(reply.blobs.size()) + " blobs");
    const auto p0 = clock_type::now();
    auto img = image::apply_ops(image::decode(reply.blobs.front()), ops);
    out.preprocess_ms += ms_since(p0);
    ++out.images;
    if (keep_outputs) out.outputs.push_back(std::move(img));
  }
  out.total_ms = ms_since(t0);
  return out;
}

BenchReport run_queries(const BenchOptions& options, const Manifest& manifest) {
  BenchReport report;
  if (options.repetitions == 0) return report;
  const std::size_t clients = std::max<std::size_t>(1, options.clients);

  std::unique_ptr<ThrottleProxy> proxy;
  std::string host = options.host;
  std::uint16_t port = options.port;
  if (options.bandwidth_mbps > 0) {
    proxy = std::make_unique<ThrottleProxy>(options.host, options.port, options.bandwidth_mbps);
    proxy->start();
    host = "127.0.0.1";
    port = proxy->port();
  }

  for (QueryId q : options.queries) {
    QuerySpec spec = default_spec(q, manifest);
    spec.width = options.width;
    spec.height = options.height;
    spec.threshold = options.threshold;
    for (Mode mode : options.modes) {
      std::vector<QueryOutcome> outcomes(clients * options.repetitions);
      std::vector<std::exception_ptr> failures(clients);
      const auto t0 = clock_type::now();
      auto work = [&](std::size_t c) {
        try {
          auto client = net::Client::connect(host, port);
          for (std::size_t r = 0; r < options.repetitions; ++r)
            outcomes[c * options.repetitions + r] = run_query(client, spec, mode);
        } catch (...) {
          failures[c] = std::current_exception();
        }
      };
      if (clients == 1) {
        work(0);
      } else {
        std::vector<std::thread> threads;
        for (std::size_t c = 0; c < clients; ++c) threads.emplace_back(work, c);
        for (auto& t : threads) t.join();
      }
      const double wall_s = std::chrono::duration<double>(clock_type::now() - t0).count();
      for (auto& f : failures)
        if (f) std::rethrow_exception(f);

      ReportRow row;
      row.query = query_name(q);
      row.backend = std::string(mode_name(mode));
      row.repetitions = options.repetitions;
      row.clients = clients;
      const double n = static_cast<double>(outcomes.size());
      double bytes = 0, images = 0;
      for (const auto& o : outcomes) {
        row.metadata_ms += o.metadata_ms / n;
        row.retrieval_ms += o.retrieval_ms / n;
        row.preprocess_ms += o.preprocess_ms / n;
        row.total_ms += o.total_ms / n;
        bytes += static_cast<double>(o.bytes);
        images += static_cast<double>(o.images);
      }
      row.bytes = static_cast<std::uint64_t>(std::llround(bytes / n));
      row.images = static_cast<std::uint64_t>(std::llround(images / n));
      row.throughput_qps = wall_s > 0 ? n / wall_s : 0;
      report.rows.push_back(std::move(row));
    }
  }
  if (proxy) proxy->stop();
  return report;
}

}  // namespace visor::bench
