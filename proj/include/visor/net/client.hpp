#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "visor/net/socket.hpp"
#include "visor/net/wire.hpp"

namespace visor::net {

struct Reply {
  nlohmann::json responses;               // one entry per command
  std::vector<Bytes> blobs;
  std::optional<nlohmann::json> timing;   // present when timing was requested
  std::uint64_t request_bytes = 0;
  std::uint64_t response_bytes = 0;
};

// Blocking client for one connection; one request in flight at a time.
class Client {
 public:
  static Client connect(const std::string& host, std::uint16_t port, std::uint64_t max_message = 4ull << 30);
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  // Sends one frame and waits for its response. Throws Errc::io_error on
  // transport failure and Errc::protocol_error on an unreadable response.
  Message roundtrip(const Message& request);
  Reply query(const nlohmann::json& commands, std::vector<Bytes> blobs = {}, bool timing = false);

  void send_raw(ByteView bytes);
  Socket& socket() noexcept { return socket_; }
  std::uint64_t bytes_sent() const noexcept { return sent_; }
  std::uint64_t bytes_received() const noexcept { return received_; }

 private:
  Client(Socket socket, std::uint64_t max_message);
  ReadResult read_frame();

  Socket socket_;
  FrameReader reader_;
  std::uint64_t sent_ = 0;
  std::uint64_t received_ = 0;
};

}  // namespace visor::net
