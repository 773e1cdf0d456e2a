#include <cstdlib>
#include <random>
#include <thread>

#include "doctest.h"
#include "test_support.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"
#include "visor/image/codec.hpp"
#include "visor/net/client.hpp"
#include "visor/net/config.hpp"
#include "visor/net/server.hpp"
#include "visor/net/wire.hpp"

using namespace visor;
using namespace visor::net;
using visor::testing::TempDir;
using nlohmann::json;

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

Message random_message(std::mt19937_64& rng) {
  Message m;
  m.flags = static_cast<std::uint8_t>(rng());
  m.json.resize(rng() % 200);
  for (auto& c : m.json) c = static_cast<char>(rng());
  m.blobs.resize(rng() % 5);
  for (auto& b : m.blobs) {
    b.resize(rng() % 300);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  }
  return m;
}

// Serves reads from a buffer in chunks of at most `chunk` bytes.
FrameReader::ReadFn memory_stream(const Bytes& data, std::size_t chunk) {
  auto pos = std::make_shared<std::size_t>(0);
  return [&data, chunk, pos](std::uint8_t* buf, std::size_t n) {
    std::size_t take = std::min({n, chunk, data.size() - *pos});
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(*pos), take, buf);
    *pos += take;
    return take;
  };
}

ServerConfig test_config(const TempDir& dir) {
  ServerConfig c;
  c.host = "127.0.0.1";
  c.port = 0;
  c.data_dir = dir.path();
  c.sync = false;
  c.workers = 2;
  return c;
}

const json aged_85_or_more = json::parse(R"([{"FindEntity": {"class": "Patient", "constraints": {"Age": [">=", 85]},
                                                   "results": {"list": ["Age"]}}}])");

void add_patients(Client& c) {
  json cmds = json::array();
  for (int age : {84, 85, 90}) cmds.push_back({{"AddEntity", {{"class", "Patient"}, {"properties", {{"Age", age}}}}}});
  REQUIRE(c.query(cmds).responses[0]["AddEntity"]["status"] == 0);
}

// Reads whatever the server sends until it closes the connection.
Bytes drain(Socket& s) {
  Bytes out;
  std::uint8_t buf[4096];
  for (std::size_t n; (n = s.recv_some(buf, sizeof buf)) > 0;) out.insert(out.end(), buf, buf + n);
  return out;
}

}  // namespace

TEST_CASE("frame layout") {
  Message m{1, "[]", {Bytes{7, 8}}};
  Bytes f = encode(m);
  const Bytes expect{'V', 'D', 'M', 'S', 1, 1, 2, 0, 0, 0, 1, 0, 0, 0, '[', ']', 2, 0, 0, 0, 7, 8};
  CHECK(f == expect);
  CHECK(encoded_size(m) == f.size());
}

TEST_CASE("encode then decode is the identity") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 500; ++i) {
    auto m = random_message(rng);
    CHECK(decode(encode(m)) == m);
  }
}

TEST_CASE("decode rejects malformed frames") {
  Bytes f = encode({0, "[]", {Bytes{1, 2, 3}}});
  Bytes bad = f;
  bad[0] = 'X';
  CHECK(error_of([&] { decode(bad); }) == Errc::protocol_error);
  bad = f;
  bad[4] = 9;
  CHECK(error_of([&] { decode(bad); }) == Errc::protocol_error);
  bad = f;
  bad.pop_back();
  CHECK(error_of([&] { decode(bad); }) == Errc::protocol_error);
  bad = f;
  bad.push_back(0);
  CHECK(error_of([&] { decode(bad); }) == Errc::protocol_error);
}

TEST_CASE("stream reader handles split reads, oversize frames and truncation") {
  std::mt19937_64 rng(5);
  std::vector<Message> msgs;
  Bytes stream;
  for (int i = 0; i < 40; ++i) {
    msgs.push_back(random_message(rng));
    auto f = encode(msgs.back());
    stream.insert(stream.end(), f.begin(), f.end());
  }
  for (std::size_t chunk : {1, 7, 4096}) {
    FrameReader r(memory_stream(stream, chunk));
    std::uint64_t consumed = 0;
    for (const auto& m : msgs) {
      auto got = r.next();
      REQUIRE(got.status == ReadStatus::ok);
      CHECK(got.message == m);
      consumed += got.bytes;
    }
    CHECK(r.next().status == ReadStatus::eof);
    CHECK(consumed == stream.size());
  }

  Message big{0, "[]", {Bytes(1000, 1)}};
  Message small{0, "[1]", {}};
  Bytes two = encode(big);
  auto s = encode(small);
  two.insert(two.end(), s.begin(), s.end());
  FrameReader limited(memory_stream(two, 64), 500);
  auto first = limited.next();
  CHECK(first.status == ReadStatus::oversize);
  CHECK(first.bytes == encoded_size(big));
  auto second = limited.next();
  CHECK(second.status == ReadStatus::ok);
  CHECK(second.message == small);

  Bytes cut = encode(big);
  cut.resize(100);
  FrameReader trunc(memory_stream(cut, 64));
  CHECK(trunc.next().status == ReadStatus::bad_frame);

  Bytes garbage{'G', 'E', 'T', ' ', '/', ' ', 'H', 'T', 'T', 'P', '/', '1', '.', '1'};
  FrameReader g(memory_stream(garbage, 64));
  auto res = g.next();
  CHECK(res.status == ReadStatus::bad_frame);
  CHECK(res.error == "bad magic");
}

TEST_CASE("config precedence: command line over environment over file") {
  TempDir dir;
  write_file_atomic(dir / "visor.conf", as_bytes(std::string_view("# comment\nport = 6000\ndata_dir=/from/file\nworkers=3\n")), false);
  auto only_file = resolve_config(dir / "visor.conf", {}, {});
  CHECK(only_file.port == 6000);
  CHECK(only_file.workers == 3);
  CHECK(only_file.data_dir == "/from/file");

  auto env = resolve_config(dir / "visor.conf", {{"port", "7000"}, {"data_dir", "/from/env"}}, {});
  CHECK(env.port == 7000);
  CHECK(env.data_dir == "/from/env");

  auto cli = resolve_config(dir / "visor.conf", {{"port", "7000"}}, {{"port", "8000"}});
  CHECK(cli.port == 8000);
  CHECK(cli.data_dir == "/from/file");

  ::setenv("VISOR_PORT", "1234", 1);
  CHECK(env_settings().at("port") == "1234");
  ::unsetenv("VISOR_PORT");

  auto defaults = resolve_config(std::nullopt, {}, {});
  CHECK(defaults.port == 55555);
  CHECK(defaults.max_message_bytes() == 256ull << 20);
  CHECK(defaults.indexes.size() == 3);

  CHECK(error_of([] { parse_settings("novalue\n"); }) == Errc::validation);
  CHECK(error_of([] { resolve_config(std::nullopt, {}, {{"port", "70000"}}); }) == Errc::validation);
  CHECK(error_of([] { resolve_config(std::nullopt, {}, {{"colour", "blue"}}); }) == Errc::validation);
  auto idx = resolve_config(std::nullopt, {}, {{"indexes", "A.x, B.y"}});
  CHECK(idx.indexes == std::vector<std::pair<std::string, std::string>>{{"A", "x"}, {"B", "y"}});
}

TEST_CASE("server answers queries and reports timing") {
  TempDir dir;
  Server server(test_config(dir));
  server.start();
  auto client = Client::connect("127.0.0.1", server.port());
  add_patients(client);
  auto reply = client.query(aged_85_or_more);
  CHECK(reply.responses[0]["FindEntity"]["returned"] == 2);
  CHECK_FALSE(reply.timing);

  auto start = std::chrono::steady_clock::now();
  auto timed = client.query(aged_85_or_more, {}, true);
  auto wall = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(timed.timing);
  CHECK(timed.responses.size() == 1);
  const auto& t = *timed.timing;
  for (const char* k : {"metadata_us", "retrieval_us", "preprocess_us"}) {
    REQUIRE(t[k].is_number_integer());
    CHECK(t[k].get<std::int64_t>() >= 0);
  }
  CHECK(t["metadata_us"].get<std::int64_t>() + t["retrieval_us"].get<std::int64_t>() +
            t["preprocess_us"].get<std::int64_t>() <=
        wall);
}

TEST_CASE("image query over the wire") {
  TempDir dir;
  Server server(test_config(dir));
  server.start();
  auto client = Client::connect("127.0.0.1", server.port());
  auto png = image::encode_png(visor::testing::gradient_image(256, 256));
  auto add = client.query(json::parse(R"([{"AddImage": {"properties": {"id": "q1"}}}])"), {png});
  REQUIRE(add.responses[0]["AddImage"]["status"] == 0);
  auto q1 = client.query(json::parse(R"([{"FindImage": {"constraints": {"id": ["==", "q1"]},
      "operations": [{"type": "threshold", "value": 100}, {"type": "resize", "width": 128, "height": 128}]}}])"));
  REQUIRE(q1.blobs.size() == 1);
  CHECK(image::decode(q1.blobs[0]).width == 128);
}

TEST_CASE("garbage magic gets an error frame and the connection closes") {
  TempDir dir;
  Server server(test_config(dir));
  server.start();
  auto s = connect_tcp("127.0.0.1", server.port());
  s.send_all(as_bytes(std::string_view("GET / HTTP/1.1\r\n\r\n")));
  Bytes got = drain(s);
  auto m = decode(got);
  auto body = json::parse(m.json);
  CHECK(body[0]["Error"]["error"] == "protocol-error");

  // Wrong version: the message names both versions.
  auto v = connect_tcp("127.0.0.1", server.port());
  Bytes frame = encode({0, "[]", {}});
  frame[4] = 7;
  v.send_all(frame);
  auto info = json::parse(decode(drain(v)).json)[0]["Error"]["info"].get<std::string>();
  CHECK(info.find('7') != std::string::npos);
  CHECK(info.find('1') != std::string::npos);
}

TEST_CASE("oversize message: error frame, connection survives") {
  TempDir dir;
  auto cfg = test_config(dir);
  cfg.max_message_mib = 1;
  Server server(cfg);
  server.start();
  auto client = Client::connect("127.0.0.1", server.port());
  Message big{0, "[]", {Bytes(2 << 20, 0)}};
  auto resp = client.roundtrip(big);
  CHECK(json::parse(resp.json)[0]["Error"]["status"] == 1);
  add_patients(client);
  CHECK(client.query(aged_85_or_more).responses[0]["FindEntity"]["returned"] == 2);
}

TEST_CASE("pipelined requests are answered in order, bytes are accounted") {
  TempDir dir;
  Server server(test_config(dir));
  server.start();
  auto client = Client::connect("127.0.0.1", server.port());
  Bytes batch;
  for (int i = 0; i < 5; ++i) {
    auto f = encode({0, json::array({{{"AddEntity", {{"class", "N"}, {"properties", {{"i", i}}}}}}}).dump(), {}});
    batch.insert(batch.end(), f.begin(), f.end());
  }
  client.send_raw(batch);
  std::uint64_t received = 0;
  FrameReader r([&](std::uint8_t* b, std::size_t n) { return client.socket().recv_some(b, n); });
  for (int i = 0; i < 5; ++i) {
    auto res = r.next();
    REQUIRE(res.status == ReadStatus::ok);
    received += res.bytes;
    CHECK(json::parse(res.message.json)[0]["AddEntity"]["id"] == i + 1);
  }
  client.socket().shutdown_write();
  CHECK(drain(client.socket()).empty());
  auto sessions = server.sessions();
  REQUIRE(sessions.size() == 1);
  CHECK(sessions[0].envelopes == 5);
  CHECK(sessions[0].bytes_in == batch.size());
  CHECK(sessions[0].bytes_out == received);
}

TEST_CASE("two clients in parallel, a broken one does not disturb the other") {
  TempDir dir;
  Server server(test_config(dir));
  server.start();
  {
    auto c = Client::connect("127.0.0.1", server.port());
    add_patients(c);
  }
  std::atomic<int> ok{0};
  auto reader = [&] {
    auto c = Client::connect("127.0.0.1", server.port());
    for (int i = 0; i < 50; ++i) ok += c.query(aged_85_or_more).responses[0]["FindEntity"]["returned"] == 2;
  };
  std::thread a(reader), b(reader);
  for (int i = 0; i < 20; ++i) {
    auto s = connect_tcp("127.0.0.1", server.port());
    s.send_all(Bytes{'V', 'D', 'M', 'S', 1, 0, 0xFF, 0xFF, 0xFF, 0x7F});
    s.shutdown_write();
    drain(s);
  }
  a.join();
  b.join();
  CHECK(ok == 100);
}

TEST_CASE("graceful shutdown and restart recover the same graph") {
  TempDir dir;
  std::string dump;
  {
    Server server(test_config(dir));
    server.start();
    auto c = Client::connect("127.0.0.1", server.port());
    add_patients(c);
    dump = server.engine().graph().dump();
    server.stop();
  }
  Server again(test_config(dir));
  again.start();
  CHECK(again.engine().graph().dump() == dump);
  auto c = Client::connect("127.0.0.1", again.port());
  CHECK(c.query(aged_85_or_more).responses[0]["FindEntity"]["returned"] == 2);
}

TEST_CASE("connecting to a closed port reports refusal") {
  auto port = [] {
    auto s = listen_tcp("127.0.0.1", 0);
    return local_port(s);
  }();
  try {
    Client::connect("127.0.0.1", port);
    FAIL("connect should fail");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("refused") != std::string::npos);
  }
}
