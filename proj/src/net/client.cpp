#include "visor/net/client.hpp"

#include "visor/common/error.hpp"

namespace visor::net {

Client::Client(Socket socket, std::uint64_t max_message)
    : socket_(std::move(socket)),
      reader_([this](std::uint8_t* buf, std::size_t n) { return socket_.recv_some(buf, n); }, max_message) {}

Client Client::connect(const std::string& host, std::uint16_t port, std::uint64_t max_message) {
  return Client(connect_tcp(host, port), max_message);
}

void Client::send_raw(ByteView bytes) {
  socket_.send_all(bytes);
  sent_ += bytes.size();
}

ReadResult Client::read_frame() {
  ReadResult r = reader_.next();
  received_ += r.bytes;
  switch (r.status) {
    case ReadStatus::ok: return r;
    case ReadStatus::eof: throw Error(Errc::io_error, "server closed the connection");
    case ReadStatus::oversize: throw Error(Errc::protocol_error, "response too large: " + r.error);
    case ReadStatus::bad_frame: throw Error(Errc::protocol_error, "bad response frame: " + r.error);
  }
  throw Error(Errc::internal, "unreachable");
}

Message Client::roundtrip(const Message& request) {
  send_raw(encode(request));
  return read_frame().message;
}

Reply Client::query(const nlohmann::json& commands, std::vector<Bytes> blobs, bool timing) {
  Message req;
  req.flags = timing ? kFlagTiming : 0;
  req.json = commands.dump();
  req.blobs = std::move(blobs);
  const std::uint64_t before_out = sent_, before_in = received_;
  Message resp = roundtrip(req);
  Reply out;
  out.request_bytes = sent_ - before_out;
  out.response_bytes = received_ - before_in;
  try {
    out.responses = nlohmann::json::parse(resp.json);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::protocol_error, std::string("response JSON does not parse: ") + e.what());
  }
  if (!out.responses.is_array()) throw Error(Errc::protocol_error, "response JSON is not an array");
  if (!out.responses.empty() && out.responses.back().is_object() && out.responses.back().contains("_timing")) {
    out.timing = out.responses.back()["_timing"];
    out.responses.erase(out.responses.end() - 1);
  }
  out.blobs = std::move(resp.blobs);
  return out;
}

}  // namespace visor::net
