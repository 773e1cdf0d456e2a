#pragma once

#include <cstdint>
#include <string>

#include "visor/common/bytes.hpp"

namespace visor::net {

// Owning TCP socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept;
  void close() noexcept;
  void shutdown_read() noexcept;
  void shutdown_write() noexcept;

  // Blocking helpers. recv_some returns 0 at end of stream; send_all throws
  // Errc::io_error when the peer is gone.
  std::size_t recv_some(std::uint8_t* buf, std::size_t n) const;
  void send_all(ByteView data) const;

 private:
  int fd_ = -1;
};

// Listens on host:port; port 0 picks an ephemeral port.
Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 128);
std::uint16_t local_port(const Socket& s);
std::string peer_name(const Socket& s);
Socket accept_tcp(const Socket& listener);
// Throws Errc::io_error; the message says "connection refused" when nothing
// listens on the port.
Socket connect_tcp(const std::string& host, std::uint16_t port);

}  // namespace visor::net
