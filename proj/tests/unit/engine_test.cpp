#include <random>
#include <thread>

#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"
#include "visor/common/error.hpp"
#include "visor/image/codec.hpp"
#include "visor/query/engine.hpp"

using namespace visor;
using namespace visor::query;
using visor::testing::TempDir;

namespace {

std::unique_ptr<Engine> fresh(const TempDir& dir) {
  EngineOptions o;
  o.sync = false;
  return Engine::open(dir.path(), o);
}

QueryResult run(Engine& e, const json& commands, std::vector<Bytes> blobs = {}) {
  return e.execute(commands.dump(), blobs);
}

const json& body(const QueryResult& r, std::size_t i) { return r.responses.at(i).begin().value(); }

Bytes floats(std::initializer_list<float> v) {
  ByteWriter w;
  for (float x : v) w.f32(x);
  return w.take();
}

void add_patients(Engine& e) {
  json cmds = json::array();
  int i = 0;
  for (int age : {84, 85, 90})
    cmds.push_back({{"AddEntity",
                     {{"class", "Patient"}, {"properties", {{"PatientID", "P" + std::to_string(++i)}, {"Age", age}}}}}});
  REQUIRE(body(run(e, cmds), 0)["status"] == 0);
}

std::size_t image_files(const TempDir& dir) {
  std::size_t n = 0;
  for (const auto& f : std::filesystem::directory_iterator(dir / "blobs")) n += f.is_regular_file();
  return n;
}

}  // namespace

TEST_CASE("patients aged 85 or more") {
  TempDir dir;
  auto e = fresh(dir);
  add_patients(*e);
  json q = json::parse(R"([{"FindEntity": {"class": "Patient", "constraints": {"Age": [">=", 85]},
                                           "results": {"list": ["PatientID", "Age"]}}}])");
  auto r = run(*e, q);
  REQUIRE(r.responses.size() == 1);
  const auto& b = body(r, 0);
  CHECK(b["status"] == 0);
  CHECK(b["returned"] == 2);
  CHECK(b["entities"][0] == json{{"PatientID", "P2"}, {"Age", 85}});
  CHECK(b["entities"][1] == json{{"PatientID", "P3"}, {"Age", 90}});
}

TEST_CASE("empty command array") {
  TempDir dir;
  auto e = fresh(dir);
  auto r = run(*e, json::array());
  CHECK(r.responses.empty());
  CHECK(r.blobs.empty());
}

TEST_CASE("malformed JSON gives one synthetic response") {
  TempDir dir;
  auto e = fresh(dir);
  for (std::string bad : {"[{", "{\"AddEntity\": {}}", "17"}) {
    auto r = e->execute(bad, {});
    REQUIRE(r.responses.size() == 1);
    CHECK(body(r, 0)["status"] == 1);
  }
}

TEST_CASE("shape errors keep responses aligned") {
  TempDir dir;
  auto e = fresh(dir);
  auto r = run(*e, json::parse(R"([{"FindEntity": {"class": "P"}}, {"Bogus": {}}, {"FindEntity": {"class": "P"}}])"));
  REQUIRE(r.responses.size() == 3);
  CHECK(body(r, 0)["status"] == 6);
  CHECK(body(r, 1)["status"] == 1);
  CHECK(body(r, 2)["status"] == 6);

  auto missing = run(*e, json::parse(R"([{"AddImage": {}}])"));
  CHECK(body(missing, 0)["status"] == 1);
  auto extra = run(*e, json::parse(R"([{"FindEntity": {"class": "P"}}])"), {Bytes{1}});
  CHECK(body(extra, 0)["status"] == 1);
}

TEST_CASE("AddEntity and Connect") {
  TempDir dir;
  auto e = fresh(dir);
  auto ok = run(*e, json::parse(R"([{"AddEntity": {"class": "Patient", "properties": {"Age": 90}, "_ref": 1}},
                                    {"AddEntity": {"class": "Scan", "_ref": 2}},
                                    {"Connect": {"class": "hasScan", "ref1": 1, "ref2": 2}}])"));
  for (int i = 0; i < 3; ++i) CHECK(body(ok, i)["status"] == 0);
  CHECK(e->graph().dump().find("E 1 hasScan 1->2") != std::string::npos);

  auto missing = run(*e, json::parse(R"([{"AddEntity": {"properties": {"Age": 1}}}])"));
  CHECK(body(missing, 0)["status"] == 1);

  auto bad_ref = run(*e, json::parse(R"([{"Connect": {"class": "x", "ref1": 7, "ref2": 8}}])"));
  CHECK(body(bad_ref, 0)["status"] == 1);

  add_patients(*e);
  auto ambiguous = run(*e, json::parse(R"([{"AddEntity": {"class": "Scan", "_ref": 1}},
      {"Connect": {"class": "hasScan", "src": {"class": "Patient", "constraints": {"Age": [">=", 85]}}, "ref2": 1}}])"));
  CHECK(body(ambiguous, 1)["status"] == 1);
  CHECK(body(ambiguous, 1)["error"] == "ambiguous-endpoint");
  CHECK(body(ambiguous, 0)["status"] == 6);

  auto unique = run(*e, json::parse(R"([{"AddEntity": {"class": "Scan", "_ref": 1}},
      {"Connect": {"class": "hasScan", "src": {"class": "Patient", "constraints": {"PatientID": ["==", "P1"]}}, "ref2": 1}}])"));
  CHECK(body(unique, 1)["status"] == 0);
}

TEST_CASE("duplicate and forward references are rejected") {
  TempDir dir;
  auto e = fresh(dir);
  auto dup = run(*e, json::parse(R"([{"AddEntity": {"class": "A", "_ref": 1}}, {"AddEntity": {"class": "A", "_ref": 1}}])"));
  CHECK(body(dup, 1)["status"] == 1);
  auto fwd = run(*e, json::parse(R"([{"Connect": {"class": "x", "ref1": 1, "ref2": 1}}, {"AddEntity": {"class": "A", "_ref": 1}}])"));
  CHECK(body(fwd, 0)["status"] == 1);
  CHECK(e->graph().dump().empty());
}

TEST_CASE("FindEntity count and sort") {
  TempDir dir;
  auto e = fresh(dir);
  add_patients(*e);
  auto c = run(*e, json::parse(R"([{"FindEntity": {"class": "Patient", "results": {"count": true}}}])"));
  CHECK(body(c, 0) == json{{"status", 0}, {"count", 3}});
  auto s = run(*e, json::parse(
      R"([{"FindEntity": {"class": "Patient", "results": {"list": ["Age"], "sort": {"key": "Age", "order": "descending"}, "limit": 2}}}])"));
  CHECK(body(s, 0)["entities"] == json::parse(R"([{"Age": 90}, {"Age": 85}])"));
  auto typed = run(*e, json::parse(R"([{"FindEntity": {"class": "Patient", "constraints": {"Age": ["==", "old"]}}}])"));
  CHECK(body(typed, 0)["status"] == 1);
  CHECK(body(typed, 0)["error"] == "type-conflict");
  auto range = run(*e, json::parse(R"([{"FindEntity": {"class": "Patient", "constraints": {"Age": [">", 84, "<", 90]}, "results": {"list": ["Age"]}}}])"));
  CHECK(body(range, 0)["entities"] == json::parse(R"([{"Age": 85}])"));
}

TEST_CASE("chained FindEntity equals the two-hop oracle") {
  TempDir dir;
  auto e = fresh(dir);
  std::mt19937_64 rng(17);
  std::vector<std::tuple<std::uint64_t, std::uint64_t, std::string>> edges;
  json cmds = json::array();
  for (int p = 0; p < 5; ++p) cmds.push_back({{"AddEntity", {{"class", "Patient"}, {"properties", {{"n", p}}}}}});
  for (int s = 0; s < 12; ++s) cmds.push_back({{"AddEntity", {{"class", "Scan"}, {"properties", {{"n", s}}}}}});
  REQUIRE(body(run(*e, cmds), 0)["status"] == 0);
  json links = json::array();
  for (int i = 0; i < 20; ++i) {
    std::uint64_t p = 1 + rng() % 5, s = 6 + rng() % 12;
    edges.emplace_back(p, s, "hasScan");
    links.push_back({{"Connect", {{"class", "hasScan"},
                                  {"src", {{"class", "Patient"}, {"constraints", {{"n", {"==", p - 1}}}}}},
                                  {"dst", {{"class", "Scan"}, {"constraints", {{"n", {"==", s - 6}}}}}}}}});
  }
  REQUIRE(body(run(*e, links), 0)["status"] == 0);
  for (std::uint64_t p = 1; p <= 5; ++p) {
    json q = json::array();
    q.push_back({{"FindEntity", {{"class", "Patient"}, {"constraints", {{"n", {"==", p - 1}}}}, {"_ref", 1}}}});
    q.push_back({{"FindEntity",
                  {{"class", "Scan"},
                   {"link", {{"ref", 1}, {"class", "hasScan"}, {"direction", "out"}}},
                   {"results", {{"list", {"_id"}}}}}}});
    auto r = run(*e, q);
    std::set<std::uint64_t> got;
    for (const auto& ent : body(r, 1)["entities"]) got.insert(ent["_id"].get<std::uint64_t>());
    CHECK(got == oracle::path_endpoints(edges, p, {"hasScan"}));
  }
}

TEST_CASE("metadata envelopes match direct graph calls") {
  TempDir dir;
  auto e = fresh(dir);
  std::mt19937_64 rng(23);
  json cmds = json::array();
  for (int i = 0; i < 200; ++i)
    cmds.push_back({{"AddEntity", {{"class", "P"}, {"properties", {{"v", static_cast<int>(rng() % 30)}}}}}});
  REQUIRE(body(run(*e, cmds), 0)["status"] == 0);
  const char* ops[] = {"==", "!=", ">", ">=", "<", "<="};
  for (int t = 0; t < 50; ++t) {
    std::string op = ops[rng() % 6];
    std::int64_t v = static_cast<std::int64_t>(rng() % 32);
    auto r = run(*e, json::array({{{"FindEntity", {{"class", "P"}, {"constraints", {{"v", {op, v}}}}, {"results", {{"list", {"_id"}}}}}}}}));
    auto txn = e->graph().begin(graph::TxnMode::read_only);
    std::vector<graph::Constraint> c{{"v", *graph::parse_compare_op(op), v}};
    auto direct = txn.find_nodes("P", c);
    REQUIRE(body(r, 0)["entities"].size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(body(r, 0)["entities"][i]["_id"] == direct[i].id);
  }
}

TEST_CASE("one image returned through two pipelines") {
  TempDir dir;
  auto e = fresh(dir);
  std::mt19937_64 rng(8);
  auto img = visor::testing::random_image(rng, 300, 200, 1);
  auto add = run(*e, json::parse(R"([{"AddImage": {"properties": {"id": "scan42_slice7"}}}])"), {image::encode_png(img)});
  REQUIRE(body(add, 0)["status"] == 0);
  CHECK(body(add, 0)["width"] == 300);

  auto r = run(*e, json::parse(R"([{"FindImage": {"constraints": {"id": ["==", "scan42_slice7"]},
      "operations": [[{"type": "threshold", "value": 150}],
                     [{"type": "threshold", "value": 150}, {"type": "resize", "width": 224, "height": 224}]]}}])"));
  REQUIRE(body(r, 0)["status"] == 0);
  CHECK(body(r, 0)["blobs"] == 2);
  REQUIRE(r.blobs.size() == 2);
  CHECK(image::decode(r.blobs[0]) == oracle::threshold(img, 150));
  auto second = image::decode(r.blobs[1]);
  CHECK(second.width == 224);
  CHECK(second.height == 224);
}

TEST_CASE("AddImage metadata and decode failure atomicity") {
  TempDir dir;
  auto e = fresh(dir);
  auto png = image::encode_png(visor::testing::gradient_image(256, 256));
  auto ok = run(*e, json::parse(R"([{"AddImage": {"format": "tiled", "properties": {"id": "a"}}}])"), {png});
  CHECK(body(ok, 0)["width"] == 256);
  auto meta = run(*e, json::parse(R"([{"FindEntity": {"class": "Image", "results": {"list": ["width", "format"]}}}])"));
  CHECK(body(meta, 0)["entities"][0] == json{{"width", 256}, {"format", "tiled"}});

  const auto before = e->graph().dump();
  const auto files = image_files(dir);
  Bytes truncated(png.begin(), png.begin() + static_cast<std::ptrdiff_t>(png.size() / 2));
  auto bad = run(*e, json::parse(R"([{"AddImage": {"properties": {"id": "b"}}}, {"AddImage": {"properties": {"id": "c"}}}])"),
                 {png, truncated});
  CHECK(body(bad, 0)["status"] == 6);
  CHECK(body(bad, 1)["status"] == 4);
  CHECK(bad.blobs.empty());
  CHECK(e->graph().dump() == before);
  CHECK(image_files(dir) == files);

  auto reserved = run(*e, json::parse(R"([{"AddImage": {"properties": {"width": 3}}}])"), {png});
  CHECK(body(reserved, 0)["status"] == 1);
}

TEST_CASE("AddImage operations change what is stored") {
  TempDir dir;
  auto e = fresh(dir);
  auto img = visor::testing::gradient_image(64, 32);
  run(*e, json::parse(R"([{"AddImage": {"operations": [{"type": "crop", "x": 0, "y": 0, "width": 16, "height": 8}]}}])"),
      {image::encode_png(img)});
  auto r = run(*e, json::parse(R"([{"FindImage": {}}])"));
  REQUIRE(r.blobs.size() == 1);
  CHECK(image::decode(r.blobs[0]) == oracle::crop(img, 0, 0, 16, 8));
}

TEST_CASE("FindImage through a patient link returns every slice") {
  TempDir dir;
  auto e = fresh(dir);
  json cmds = json::parse(R"([{"AddEntity": {"class": "Patient", "properties": {"PatientID": "P1"}, "_ref": 1}}])");
  std::vector<Bytes> blobs;
  auto png = image::encode_png(visor::testing::gradient_image(32, 32));
  for (int i = 0; i < 155; ++i) {
    cmds.push_back({{"AddImage", {{"link", {{"ref", 1}, {"class", "hasSlice"}}}, {"properties", {{"slice", i}}}}}});
    blobs.push_back(png);
  }
  REQUIRE(body(run(*e, cmds, blobs), 0)["status"] == 0);
  auto r = run(*e, json::parse(R"([{"FindEntity": {"class": "Patient", "constraints": {"PatientID": ["==", "P1"]}, "_ref": 1}},
      {"FindImage": {"link": {"ref": 1, "class": "hasSlice", "direction": "out"},
                     "operations": [{"type": "resize", "width": 16, "height": 16}]}}])"));
  CHECK(body(r, 1)["returned"] == 155);
  CHECK(body(r, 1)["blobs"] == 155);
  REQUIRE(r.blobs.size() == 155);
  CHECK(image::decode(r.blobs[77]).width == 16);

  auto none = run(*e, json::parse(R"([{"FindImage": {"constraints": {"slice": [">", 1000]}}}])"));
  CHECK(body(none, 0)["status"] == 0);
  CHECK(none.blobs.empty());
}

TEST_CASE("FindImage operation order is significant") {
  TempDir dir;
  auto e = fresh(dir);
  run(*e, json::parse(R"([{"AddImage": {}}])"), {image::encode_png(visor::testing::gradient_image(64, 64))});
  auto r = run(*e, json::parse(R"([{"FindImage": {"operations": [
      [{"type": "threshold", "value": 100}, {"type": "resize", "width": 32, "height": 32}],
      [{"type": "resize", "width": 32, "height": 32}, {"type": "threshold", "value": 100}]]}}])"));
  REQUIRE(r.blobs.size() == 2);
  CHECK(r.blobs[0] != r.blobs[1]);
  auto bad = run(*e, json::parse(R"([{"FindImage": {"operations": [{"type": "crop", "x": 60, "y": 0, "width": 10, "height": 1}]}}])"));
  CHECK(body(bad, 0)["status"] == 1);
  CHECK(body(bad, 0)["error"] == "out-of-bounds");
}

TEST_CASE("descriptor insert, search and classify flow") {
  TempDir dir;
  auto e = fresh(dir);
  auto png = image::encode_png(visor::testing::gradient_image(16, 16));
  auto step1 = run(*e, json::parse(R"([{"AddDescriptorSet": {"name": "tumors", "dimensions": 2}},
      {"AddImage": {"properties": {"id": "img1"}, "_ref": 1}},
      {"AddDescriptor": {"set": "tumors", "label": "glioma", "link": {"ref": 1}}},
      {"AddDescriptor": {"set": "tumors", "label": "meningioma"}}])"),
                   {png, floats({1, 1}), floats({9, 9})});
  for (int i = 0; i < 4; ++i) CHECK(body(step1, i)["status"] == 0);

  auto cls = run(*e, json::parse(R"([{"ClassifyDescriptor": {"set": "tumors", "k_neighbors": 1}}])"), {floats({1.2f, 0.9f})});
  CHECK(body(cls, 0)["label"] == "glioma");

  auto find = run(*e, json::parse(R"([{"FindDescriptor": {"set": "tumors", "k_neighbors": 3, "_ref": 1}},
      {"FindImage": {"link": {"ref": 1}, "results": {"list": ["id"]}}}])"),
                  {floats({1, 1})});
  CHECK(body(find, 0)["returned"] == 2);
  CHECK(body(find, 0)["entities"][0]["_distance"] == 0.0);
  CHECK(body(find, 0)["entities"][0]["_label"] == "glioma");
  CHECK(body(find, 1)["entities"] == json::parse(R"([{"id": "img1"}])"));
  CHECK(find.blobs.size() == 1);

  auto wrong = run(*e, json::parse(R"([{"AddDescriptor": {"set": "tumors"}}])"), {floats({1, 2, 3})});
  CHECK(body(wrong, 0)["status"] == 1);
  auto unknown = run(*e, json::parse(R"([{"ClassifyDescriptor": {"set": "nope"}}])"), {floats({1, 2})});
  CHECK(body(unknown, 0)["status"] == 2);
}

TEST_CASE("descriptor additions roll back with the envelope") {
  TempDir dir;
  auto e = fresh(dir);
  run(*e, json::parse(R"([{"AddDescriptorSet": {"name": "s", "dimensions": 1}}])"));
  auto r = run(*e, json::parse(R"([{"AddDescriptor": {"set": "s", "label": "x"}}, {"AddEntity": {}}])"), {floats({1})});
  CHECK(body(r, 1)["status"] == 1);
  CHECK(e->descriptors().begin().size("s") == 0);
}

TEST_CASE("blob accounting: returned blobs equal declared counts") {
  TempDir dir;
  auto e = fresh(dir);
  for (int i = 0; i < 3; ++i)
    run(*e, json::array({{{"AddImage", {{"properties", {{"k", i}}}}}}}),
        {image::encode_png(visor::testing::gradient_image(8, 8))});
  auto r = run(*e, json::parse(R"([{"FindImage": {"constraints": {"k": ["<", 2]}}},
      {"FindImage": {"operations": [[], [{"type": "threshold", "value": 9}]]}}])"));
  std::size_t declared = 0;
  for (std::size_t i = 0; i < r.responses.size(); ++i) declared += body(r, i)["blobs"].get<std::size_t>();
  CHECK(declared == r.blobs.size());
  CHECK(declared == 2 + 6);
}

TEST_CASE("datetime properties and timing sink") {
  TempDir dir;
  auto e = fresh(dir);
  run(*e, json::parse(R"([{"AddEntity": {"class": "Visit", "properties": {"at": {"_date": "2018-10-01T00:00:00Z"}}}}])"));
  auto start = std::chrono::steady_clock::now();
  PhaseTimes t;
  auto r = e->execute(
      R"([{"FindEntity": {"class": "Visit", "constraints": {"at": [">", {"_date": "2018-01-01"}]}, "results": {"list": ["at"]}}}])",
      {}, &t);
  auto wall = std::chrono::steady_clock::now() - start;
  CHECK(body(r, 0)["entities"][0]["at"] == json{{"_date", "2018-10-01T00:00:00.000000Z"}});
  CHECK(t.metadata.count() >= 0);
  CHECK(t.metadata + t.retrieval + t.preprocess <= wall);
}

TEST_CASE("concurrent readers and a writer") {
  TempDir dir;
  auto e = fresh(dir);
  add_patients(*e);
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 3; ++t)
    threads.emplace_back([&] {
      for (int i = 0; i < 30; ++i) {
        auto r = run(*e, json::parse(R"([{"FindEntity": {"class": "Patient", "constraints": {"Age": [">=", 85]}, "results": {"count": true}}}])"));
        if (body(r, 0)["status"] != 0 || body(r, 0)["count"] < 2) ++bad;
      }
    });
  threads.emplace_back([&] {
    for (int i = 0; i < 30; ++i)
      if (body(run(*e, json::array({{{"AddEntity", {{"class", "Patient"}, {"properties", {{"Age", 99}}}}}}})), 0)["status"] != 0)
        ++bad;
  });
  for (auto& t : threads) t.join();
  CHECK(bad == 0);
}

TEST_CASE("reopen keeps data and closed engine refuses work") {
  TempDir dir;
  std::string dump;
  {
    auto e = fresh(dir);
    add_patients(*e);
    dump = e->graph().dump();
    e->close();
    auto r = run(*e, json::parse(R"([{"FindEntity": {"class": "Patient"}}])"));
    CHECK(body(r, 0)["status"] == 5);
  }
  auto e = fresh(dir);
  CHECK(e->graph().dump() == dump);
}
