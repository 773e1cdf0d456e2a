// visor: dataset generator, ingest client and benchmark driver.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "visor/bench/cohort.hpp"
#include "visor/bench/harness.hpp"
#include "visor/bench/report.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"
#include "visor/net/client.hpp"

using namespace visor;
using namespace visor::bench;

namespace {

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text << std::flush;
    return;
  }
  write_file_atomic(out, as_bytes(std::string_view(text)), false);
}

BenchReport read_report(const std::string& path) {
  Bytes bytes = read_file(path);
  std::string_view text = as_chars(bytes);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    try {
      return report_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::validation, std::string("report is not valid JSON: ") + e.what());
    }
  }
  return parse_csv(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visor: dataset generation, ingest and benchmarks"};
  app.require_subcommand(1);

  // generate
  CohortParams cohort;
  std::string gen_out = "cohort";
  auto* gen = app.add_subcommand("generate", "write a synthetic cohort and its manifest");
  gen->add_option("--seed", cohort.seed, "random seed")->capture_default_str();
  gen->add_option("--patients", cohort.patients, "patient count")->capture_default_str();
  gen->add_option("--scans", cohort.scans_per_patient, "scans per patient")->capture_default_str();
  gen->add_option("--slices", cohort.slices_per_scan, "slices per scan")->capture_default_str();
  gen->add_option("--width", cohort.width, "slice width")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--height", cohort.height, "slice height")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--age-min", cohort.age_min, "youngest age")->capture_default_str();
  gen->add_option("--age-max", cohort.age_max, "oldest age")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();

  // shared connection options
  std::string host = "127.0.0.1";
  std::uint16_t port = 55555;
  std::string manifest_path = "cohort/manifest.json";
  auto connection = [&](CLI::App* sub) {
    sub->add_option("--host", host, "server host")->capture_default_str();
    sub->add_option("--port", port, "server port")->capture_default_str();
    sub->add_option("--manifest", manifest_path, "manifest.json from generate")->capture_default_str();
  };

  // ingest
  IngestOptions ingest_opts;
  auto* ing = app.add_subcommand("ingest", "load a generated cohort into a server");
  connection(ing);
  ing->add_flag("--descriptors", ingest_opts.descriptors, "also store 64-dim slice features");
  ing->add_option("--format", ingest_opts.format, "stored image format: tiled, png or jpeg")->capture_default_str();

  // bench
  BenchOptions bench;
  std::string mode = "both";
  std::vector<int> queries = {1, 2, 3};
  std::string format = "text";
  std::string out;
  auto* ben = app.add_subcommand("bench", "run queries 1-3 and report the time breakdown");
  connection(ben);
  ben->add_option("--mode", mode, "unified, adhoc or both")->capture_default_str()->check(
      CLI::IsMember({"unified", "adhoc", "both"}));
  ben->add_option("--queries", queries, "subset of 1 2 3")->check(CLI::Range(1, 3));
  ben->add_option("--repetitions", bench.repetitions, "runs per client")->capture_default_str();
  ben->add_option("--clients", bench.clients, "parallel connections")->capture_default_str()->check(CLI::PositiveNumber);
  ben->add_option("--width", bench.width, "resize width")->capture_default_str()->check(CLI::PositiveNumber);
  ben->add_option("--height", bench.height, "resize height")->capture_default_str()->check(CLI::PositiveNumber);
  ben->add_option("--threshold", bench.threshold, "query 1 threshold")->capture_default_str()->check(CLI::Range(0, 255));
  ben->add_option("--bandwidth-mbps", bench.bandwidth_mbps, "cap link speed through a local proxy (0 = none)")
      ->capture_default_str();
  ben->add_option("--format", format, "text, csv or json")->capture_default_str()->check(
      CLI::IsMember({"text", "csv", "json"}));
  ben->add_option("--out", out, "write the report here instead of stdout");

  // report
  std::string report_in;
  auto* rep = app.add_subcommand("report", "re-render a saved json or csv report");
  rep->add_option("input", report_in, "report file")->required();
  rep->add_option("--format", format, "text, csv or json")->capture_default_str()->check(
      CLI::IsMember({"text", "csv", "json"}));
  rep->add_option("--out", out, "write here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto m = generate(cohort, gen_out);
      std::printf("wrote %zu images for %zu patients to %s\nmanifest %s\nhash %s\n", m.image_count(),
                  m.patients.size(), gen_out.c_str(), (std::filesystem::path(gen_out) / "manifest.json").c_str(),
                  manifest_hash(m).c_str());
      return 0;
    }
    if (ing->parsed()) {
      auto m = load_manifest(manifest_path);
      auto client = net::Client::connect(host, port);
      auto r = ingest(client, m, ingest_opts);
      std::printf("patients %zu scans %zu images %zu descriptors %zu errors %zu\n", r.patients, r.scans, r.images,
                  r.descriptors, r.errors.size());
      for (const auto& e : r.errors) std::fprintf(stderr, "error: %s\n", e.c_str());
      return r.errors.empty() ? 0 : 1;
    }
    if (ben->parsed()) {
      auto m = load_manifest(manifest_path);
      bench.host = host;
      bench.port = port;
      if (mode == "both")
        bench.modes = {Mode::unified, Mode::adhoc};
      else
        bench.modes = {*parse_mode(mode)};
      bench.queries.clear();
      for (int q : queries) bench.queries.push_back(static_cast<QueryId>(q));
      auto report = run_queries(bench, m);
      emit(render(report, *parse_report_format(format)), out);
      return 0;
    }
    if (rep->parsed()) {
      emit(render(read_report(report_in), *parse_report_format(format)), out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "visor: %s\n", e.what());
    return 1;
  }
  return 0;
}
