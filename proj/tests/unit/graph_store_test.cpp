#include <sys/wait.h>
#include <unistd.h>

#include <barrier>
#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"
#include "visor/common/error.hpp"
#include "visor/graph/graph_store.hpp"

using namespace visor;
using namespace visor::graph;
using visor::testing::TempDir;

namespace {

Errc error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::internal;
}

GraphOptions fast() {
  GraphOptions o;
  o.sync = false;
  return o;
}

std::vector<Constraint> age_at_least(std::int64_t v) { return {{"age", CompareOp::ge, v}}; }

std::vector<NodeId> ids(const std::vector<Node>& nodes) {
  std::vector<NodeId> out;
  for (const auto& n : nodes) out.push_back(n.id);
  return out;
}

// Patients aged 84, 85 and 90.
void add_patients(GraphStore& store) {
  auto txn = store.begin(TxnMode::read_write);
  for (std::int64_t age : {84, 85, 90}) txn.add_node("Patient", {{"age", age}, {"name", "p" + std::to_string(age)}});
  txn.commit();
}

}  // namespace

TEST_CASE("first node gets id 1 and types are fixed per class and property") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  CHECK(txn.add_node("Patient", {{"age", std::int64_t{85}}}) == 1);
  CHECK(error_of([&] { txn.add_node("Patient", {{"age", std::string("old")}}); }) == Errc::type_conflict);
  // Same property name on another class is independent.
  CHECK_NOTHROW(txn.add_node("Scan", {{"age", std::string("old")}}));
  CHECK(error_of([&] { txn.add_node("", {}); }) == Errc::validation);
  txn.commit();

  auto again = store.begin(TxnMode::read_write);
  CHECK(error_of([&] { again.add_node("Patient", {{"age", 85.5}}); }) == Errc::type_conflict);
}

TEST_CASE("1000 adds then abort leaves the store empty") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  const std::string before = store.dump();
  auto txn = store.begin(TxnMode::read_write);
  for (int i = 0; i < 1000; ++i) txn.add_node("Patient", {{"i", std::int64_t{i}}});
  CHECK(txn.count_nodes("Patient", {}) == 1000);
  txn.abort();
  auto check = store.begin(TxnMode::read_only);
  CHECK(check.count_nodes("Patient", {}) == 0);
  CHECK(store.dump() == before);
}

TEST_CASE("edges are traversable from both ends") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  NodeId p = txn.add_node("Patient");
  NodeId s = txn.add_node("Scan");
  txn.add_edge("hasScan", p, s);
  CHECK(ids(txn.neighbors(std::vector{p}, {"hasScan", Direction::out, {}, {}})) == std::vector{s});
  CHECK(ids(txn.neighbors(std::vector{s}, {"hasScan", Direction::in, {}, {}})) == std::vector{p});
  CHECK(ids(txn.neighbors(std::vector{s}, {std::nullopt, Direction::any, {}, {}})) == std::vector{p});
  CHECK(error_of([&] { txn.add_edge("hasScan", p, 999); }) == Errc::unknown_node);
  txn.commit();
}

TEST_CASE("self edge: the node is its own neighbor, reported once") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  NodeId a = txn.add_node("Thing");
  txn.add_edge("loop", a, a);
  // Fixture enumerated by hand: one self edge, one neighbor in every direction.
  for (auto dir : {Direction::out, Direction::in, Direction::any})
    CHECK(ids(txn.neighbors(std::vector{a}, {"loop", dir, {}, {}})) == std::vector{a});
  CHECK(txn.incident_edges(a, Direction::any).size() == 1);
}

TEST_CASE("find_nodes on the three-patient fixture") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  auto txn = store.begin(TxnMode::read_only);

  auto found = txn.find_nodes("Patient", age_at_least(85));
  REQUIRE(found.size() == 2);
  CHECK(std::get<std::int64_t>(found[0].properties.at("age")) == 85);
  CHECK(std::get<std::int64_t>(found[1].properties.at("age")) == 90);

  CHECK(txn.find_nodes("Patient", {}).size() == 3);
  CHECK(txn.find_nodes("Nobody", {}).empty());

  ResultSpec spec;
  spec.properties = std::vector<std::string>{"age"};
  spec.sort = SortSpec{"age", true};
  auto sorted = txn.find_nodes("Patient", {}, spec);
  REQUIRE(sorted.size() == 3);
  CHECK(std::get<std::int64_t>(sorted[0].properties.at("age")) == 90);
  CHECK(sorted[0].properties.size() == 1);
  spec.limit = 1;
  CHECK(txn.find_nodes("Patient", {}, spec).size() == 1);

  // Mixed numeric comparison: integer property, real comparand.
  std::vector<Constraint> real{{"age", CompareOp::gt, 84.5}};
  CHECK(txn.find_nodes("Patient", real).size() == 2);
}

TEST_CASE("constraint typing errors") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  auto txn = store.begin(TxnMode::read_only);
  std::vector<Constraint> wrong{{"age", CompareOp::eq, std::string("85")}};
  CHECK(error_of([&] { txn.find_nodes("Patient", wrong); }) == Errc::type_conflict);
  std::vector<Constraint> bad_op{{"flag", CompareOp::gt, true}};
  CHECK(error_of([&] { txn.find_nodes("Patient", bad_op); }) == Errc::type_conflict);
  std::vector<Constraint> strings{{"name", CompareOp::ge, std::string("p85")}};
  CHECK(txn.find_nodes("Patient", strings).size() == 2);
}

TEST_CASE("a patient with 155 scans") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  NodeId p = txn.add_node("Patient");
  for (int i = 0; i < 155; ++i) txn.add_edge("hasScan", p, txn.add_node("Image", {{"slice", std::int64_t{i}}}));
  txn.add_node("Image");  // unconnected
  txn.commit();
  auto r = store.begin(TxnMode::read_only);
  CHECK(r.neighbors(std::vector{p}, {"hasScan", Direction::out, "Image", {}}).size() == 155);
  CHECK(r.neighbors(std::vector{p}, {"other", Direction::out, "Image", {}}).empty());
  std::vector<Constraint> c{{"slice", CompareOp::lt, std::int64_t{10}}};
  CHECK(r.neighbors(std::vector{p}, {"hasScan", Direction::out, "Image", c}).size() == 10);
}

TEST_CASE("two-hop traversal equals brute-force path enumeration") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  std::mt19937_64 rng(7);
  std::vector<std::tuple<std::uint64_t, std::uint64_t, std::string>> edges;
  std::vector<NodeId> patients, scans, images;
  {
    auto txn = store.begin(TxnMode::read_write);
    for (int i = 0; i < 6; ++i) patients.push_back(txn.add_node("Patient"));
    for (int i = 0; i < 15; ++i) scans.push_back(txn.add_node("Scan"));
    for (int i = 0; i < 60; ++i) images.push_back(txn.add_node("Image"));
    for (int i = 0; i < 25; ++i) {
      auto p = patients[rng() % patients.size()], s = scans[rng() % scans.size()];
      txn.add_edge("hasScan", p, s);
      edges.emplace_back(p, s, "hasScan");
    }
    for (int i = 0; i < 120; ++i) {
      auto s = scans[rng() % scans.size()], im = images[rng() % images.size()];
      txn.add_edge("hasSlice", s, im);
      edges.emplace_back(s, im, "hasSlice");
    }
    txn.commit();
  }
  auto txn = store.begin(TxnMode::read_only);
  for (NodeId p : patients) {
    auto hop1 = ids(txn.neighbors(std::vector{p}, {"hasScan", Direction::out, "Scan", {}}));
    auto hop2 = ids(txn.neighbors(hop1, {"hasSlice", Direction::out, "Image", {}}));
    auto expect = oracle::path_endpoints(edges, p, {"hasScan", "hasSlice"});
    CHECK(std::vector<NodeId>(expect.begin(), expect.end()) == hop2);
  }
}

TEST_CASE("index transparency") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  {
    auto txn = store.begin(TxnMode::read_write);
    txn.create_index("Patient", "age");
    txn.create_index("Patient", "age");
    txn.commit();
  }
  {
    auto txn = store.begin(TxnMode::read_write);
    txn.create_index("Patient", "age");  // idempotent across transactions too
    txn.commit();
  }
  auto txn = store.begin(TxnMode::read_only);
  CHECK(txn.planned_index("Patient", age_at_least(85)) == "Patient.age");
  CHECK(ids(txn.find_nodes("Patient", age_at_least(85))).size() == 2);

  {
    auto w = store.begin(TxnMode::read_write);
    w.add_node("Patient", {{"age", std::int64_t{99}}});
    w.commit();
  }
  auto after = store.begin(TxnMode::read_only);
  CHECK(after.find_nodes("Patient", age_at_least(85)).size() == 3);
  CHECK(txn.find_nodes("Patient", age_at_least(85)).size() == 2);  // older snapshot unaffected
}

TEST_CASE("index transparency property: indexed and scanned results agree") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  std::mt19937_64 rng(11);
  std::vector<NodeId> all;
  {
    auto txn = store.begin(TxnMode::read_write);
    txn.create_index("P", "v");
    txn.create_index("P", "s");
    for (int i = 0; i < 400; ++i) {
      Properties props{{"v", static_cast<std::int64_t>(rng() % 50)}};
      if (rng() % 3) props.emplace("s", std::string(1, static_cast<char>('a' + rng() % 10)));
      all.push_back(txn.add_node("P", props));
    }
    txn.commit();
  }
  // Updates and removals leave stale index entries that must be filtered.
  {
    auto txn = store.begin(TxnMode::read_write);
    for (int i = 0; i < 80; ++i) txn.set_properties(all[rng() % all.size()], {{"v", static_cast<std::int64_t>(rng() % 50)}});
    for (int i = 0; i < 20; ++i) {
      auto id = all[rng() % all.size()];
      if (txn.get_node(id)) txn.remove_node(id);
    }
    txn.commit();
  }
  auto txn = store.begin(TxnMode::read_only);
  const CompareOp ops[] = {CompareOp::eq, CompareOp::ne, CompareOp::gt, CompareOp::ge, CompareOp::lt, CompareOp::le};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Constraint> cs;
    if (trial % 2) cs.push_back({"v", ops[rng() % 6], static_cast<std::int64_t>(rng() % 55)});
    else cs.push_back({"s", ops[rng() % 6], std::string(1, static_cast<char>('a' + rng() % 11))});
    if (trial % 5 == 0) cs.push_back({"v", ops[rng() % 6], static_cast<std::int64_t>(rng() % 55)});
    ResultSpec scan;
    scan.allow_index = false;
    CHECK(ids(txn.find_nodes("P", cs)) == ids(txn.find_nodes("P", cs, scan)));
  }
}

TEST_CASE("commit of an empty transaction is a no-op") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto v = store.committed_version();
  auto txn = store.begin(TxnMode::read_write);
  txn.commit();
  CHECK(store.committed_version() == v);
  CHECK_FALSE(txn.is_open());
}

TEST_CASE("abort restores the exact pre-transaction dump") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  const std::string before = store.dump();
  auto txn = store.begin(TxnMode::read_write);
  NodeId n = txn.add_node("Patient", {{"age", std::int64_t{1}}});
  txn.add_edge("knows", 1, n);
  txn.set_properties(2, {{"note", std::string("x")}});
  txn.remove_node(3);
  CHECK(txn.dump() != before);
  txn.abort();
  CHECK(store.dump() == before);
}

TEST_CASE("write-write conflict: exactly one of two committers succeeds") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  std::barrier sync(2);
  std::atomic<int> ok{0}, conflicts{0};
  auto worker = [&](std::int64_t value) {
    auto txn = store.begin(TxnMode::read_write);
    txn.set_properties(1, {{"age", value}});
    sync.arrive_and_wait();  // both have read the same snapshot
    try {
      txn.commit();
      ++ok;
    } catch (const Error& e) {
      if (e.code() == Errc::conflict) ++conflicts;
    }
  };
  std::thread a(worker, 100), b(worker, 200);
  a.join();
  b.join();
  CHECK(ok == 1);
  CHECK(conflicts == 1);
  // Serializability: the surviving value is one of the two writes.
  auto age = std::get<std::int64_t>(store.begin(TxnMode::read_only).get_node(1)->properties.at("age"));
  CHECK((age == 100 || age == 200));
}

TEST_CASE("conflict when attaching an edge to a concurrently removed node") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  auto a = store.begin(TxnMode::read_write);
  auto b = store.begin(TxnMode::read_write);
  a.remove_node(2);
  b.add_edge("knows", 1, 2);
  a.commit();
  CHECK(error_of([&] { b.commit(); }) == Errc::conflict);
}

TEST_CASE("read-only snapshots are stable under concurrent commits") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  auto r1 = store.begin(TxnMode::read_only);
  auto r2 = store.begin(TxnMode::read_only);
  CHECK(r1.dump() == r2.dump());
  const auto first = ids(r1.find_nodes("Patient", age_at_least(85)));
  std::thread writer([&] {
    for (int i = 0; i < 50; ++i) {
      auto w = store.begin(TxnMode::read_write);
      w.add_node("Patient", {{"age", std::int64_t{86 + i}}});
      if (i % 7 == 0) w.set_properties(2, {{"age", std::int64_t{i}}});
      w.commit();
    }
  });
  for (int i = 0; i < 50; ++i) CHECK(ids(r1.find_nodes("Patient", age_at_least(85))) == first);
  writer.join();
  CHECK(ids(r1.find_nodes("Patient", age_at_least(85))) == first);
  CHECK(r1.dump() == r2.dump());
  auto fresh = store.begin(TxnMode::read_only);
  CHECK(fresh.find_nodes("Patient", age_at_least(85)).size() > first.size());
}

TEST_CASE("uncommitted changes are invisible to other transactions") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto w = store.begin(TxnMode::read_write);
  NodeId id = w.add_node("Patient");
  auto r = store.begin(TxnMode::read_only);
  CHECK_FALSE(r.get_node(id));
  CHECK(w.get_node(id));
  w.commit();
  CHECK_FALSE(r.get_node(id));
  CHECK(store.begin(TxnMode::read_only).get_node(id));
}

TEST_CASE("schema evolution: new property on an existing node is queryable") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  add_patients(store);
  auto txn = store.begin(TxnMode::read_write);
  txn.set_properties(1, {{"tumor", std::string("glioma")}});
  std::vector<Constraint> c{{"tumor", CompareOp::eq, std::string("glioma")}};
  CHECK(ids(txn.find_nodes("Patient", c)) == std::vector<NodeId>{1});
  txn.commit();
  CHECK(store.begin(TxnMode::read_only).find_nodes("Patient", c).size() == 1);
}

TEST_CASE("remove_node removes incident edges") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  NodeId a = txn.add_node("A"), b = txn.add_node("B"), c = txn.add_node("C");
  EdgeId ab = txn.add_edge("e", a, b);
  txn.add_edge("e", c, b);
  txn.commit();
  auto t2 = store.begin(TxnMode::read_write);
  t2.remove_node(b);
  CHECK_FALSE(t2.get_edge(ab));
  CHECK(t2.incident_edges(a, Direction::any).empty());
  t2.commit();
  auto r = store.begin(TxnMode::read_only);
  CHECK(r.dump().find("E ") == std::string::npos);
  CHECK(error_of([&] { auto t = store.begin(TxnMode::read_write); t.remove_node(b); }) == Errc::unknown_node);
}

TEST_CASE("datetime values round-trip through persistence bit-exactly") {
  TempDir dir;
  DateTime when = parse_datetime("2018-10-01T12:34:56.789012Z");
  CHECK(format_datetime(when) == "2018-10-01T12:34:56.789012Z");
  CHECK(parse_datetime("2018-10-01T14:34:56.789012+02:00") == when);
  CHECK(parse_datetime("1969-12-31T23:59:59.999999Z").micros == -1);
  CHECK(format_datetime(DateTime{-1}) == "1969-12-31T23:59:59.999999Z");
  CHECK(error_of([] { parse_datetime("2018-13-01"); }) == Errc::validation);
  {
    auto store = GraphStore::open(dir.path(), fast());
    auto txn = store.begin(TxnMode::read_write);
    txn.add_node("Visit", {{"at", when}, {"blob", BlobLocator{"abc-1"}}, {"w", 0.1}});
    txn.commit();
  }
  auto store = GraphStore::open(dir.path(), fast());
  auto n = store.begin(TxnMode::read_only).get_node(1);
  REQUIRE(n);
  CHECK(std::get<DateTime>(n->properties.at("at")) == when);
  CHECK(std::get<BlobLocator>(n->properties.at("blob")).key == "abc-1");
  CHECK(std::get<double>(n->properties.at("w")) == 0.1);
}

TEST_CASE("non-finite reals are rejected") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  CHECK(error_of([&] { txn.add_node("X", {{"v", std::nan("")}}); }) == Errc::non_finite_value);
}

TEST_CASE("durability across reopen, with and without checkpoint") {
  TempDir dir;
  std::string dump;
  {
    auto store = GraphStore::open(dir.path(), fast());
    add_patients(store);
    auto txn = store.begin(TxnMode::read_write);
    txn.create_index("Patient", "age");
    txn.add_edge("knows", 1, 2, {{"since", std::int64_t{2001}}});
    txn.commit();
    store.checkpoint();
    auto t2 = store.begin(TxnMode::read_write);
    t2.remove_node(3);
    t2.commit();
    dump = store.dump();
  }
  CHECK(std::filesystem::exists(dir / "graph.snapshot"));
  auto store = GraphStore::open(dir.path(), fast());
  CHECK(store.dump() == dump);
  auto txn = store.begin(TxnMode::read_write);
  CHECK(txn.planned_index("Patient", age_at_least(1)) == "Patient.age");
  CHECK(txn.add_node("Patient") == 4);  // ids are never reused
}

TEST_CASE("torn WAL tail is discarded on recovery") {
  TempDir dir;
  std::string committed;
  std::uintmax_t good_size = 0;
  {
    auto store = GraphStore::open(dir.path(), fast());
    add_patients(store);
    committed = store.dump();
    good_size = std::filesystem::file_size(dir / "graph.wal");
    auto txn = store.begin(TxnMode::read_write);
    txn.add_node("Patient", {{"age", std::int64_t{1}}});
    txn.commit();
    // Simulate a crash: leave without checkpointing, then tear the last record.
    std::filesystem::copy_file(dir / "graph.wal", dir / "wal.bak");
  }
  std::filesystem::remove(dir / "graph.snapshot");
  std::filesystem::copy_file(dir / "wal.bak", dir / "graph.wal", std::filesystem::copy_options::overwrite_existing);
  auto full = std::filesystem::file_size(dir / "graph.wal");
  std::filesystem::resize_file(dir / "graph.wal", good_size + (full - good_size) / 2);
  auto store = GraphStore::open(dir.path(), fast());
  CHECK(store.dump() == committed);
  CHECK(std::filesystem::file_size(dir / "graph.wal") == good_size);
}

TEST_CASE("begin after a killed process sees only committed data") {
  TempDir dir;
  int pipefd[2];
  REQUIRE(::pipe(pipefd) == 0);
  pid_t pid = ::fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    ::close(pipefd[0]);
    auto store = GraphStore::open(dir.path());
    add_patients(store);
    auto txn = store.begin(TxnMode::read_write);
    txn.add_node("Ghost");
    char c = 1;
    (void)!::write(pipefd[1], &c, 1);
    ::pause();  // killed with the transaction open
    ::_exit(0);
  }
  ::close(pipefd[1]);
  char c;
  REQUIRE(::read(pipefd[0], &c, 1) == 1);
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  ::close(pipefd[0]);

  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_only);
  CHECK(txn.count_nodes("Patient", {}) == 3);
  CHECK(txn.count_nodes("Ghost", {}) == 0);
}

TEST_CASE("closed store rejects work") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_write);
  store.close();
  CHECK(error_of([&] { store.begin(TxnMode::read_only); }) == Errc::store_closed);
  CHECK(error_of([&] { txn.add_node("X"); }) == Errc::store_closed);
}

TEST_CASE("read-only transactions reject writes") {
  TempDir dir;
  auto store = GraphStore::open(dir.path(), fast());
  auto txn = store.begin(TxnMode::read_only);
  CHECK(error_of([&] { txn.add_node("X"); }) == Errc::validation);
}

TEST_CASE("corrupt snapshot is reported, not silently dropped") {
  TempDir dir;
  {
    auto store = GraphStore::open(dir.path(), fast());
    add_patients(store);
  }
  {
    std::fstream f(dir / "graph.snapshot", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    f.put('\x7f');
  }
  CHECK(error_of([&] { GraphStore::open(dir.path(), fast()); }) == Errc::corrupt_data);
}
