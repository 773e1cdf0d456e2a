#include "visor/net/socket.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "visor/common/error.hpp"

namespace visor::net {

namespace {

[[noreturn]] void io_fail(const std::string& what, int err) {
  throw Error(Errc::io_error, what + ": " + std::strerror(err));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) throw Error(Errc::io_error, "cannot resolve " + host + ": " + ::gai_strerror(rc));
  return res;
}

}  // namespace

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.release();
  }
  return *this;
}

int Socket::release() noexcept {
  int fd = fd_;
  fd_ = -1;
  return fd;
}

void Socket::close() noexcept {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown_read() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RD);
}

void Socket::shutdown_write() noexcept {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

std::size_t Socket::recv_some(std::uint8_t* buf, std::size_t n) const {
  for (;;) {
    ssize_t got = ::recv(fd_, buf, n, 0);
    if (got >= 0) return static_cast<std::size_t>(got);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET || errno == ENOTCONN) return 0;
    io_fail("recv", errno);
  }
}

void Socket::send_all(ByteView data) const {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) io_fail("send", errno);
    done += static_cast<std::size_t>(n);
  }
}

Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog) {
  addrinfo* res = resolve(host, port, true);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    io_fail("socket", errno);
  }
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  int rc = ::bind(s.fd(), res->ai_addr, res->ai_addrlen);
  int err = errno;
  ::freeaddrinfo(res);
  if (rc != 0) io_fail("bind to port " + std::to_string(port), err);
  if (::listen(s.fd(), backlog) != 0) io_fail("listen", errno);
  return s;
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) io_fail("getsockname", errno);
  return ntohs(addr.sin_port);
}

std::string peer_name(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getpeername(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) return "?";
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof buf);
  return std::string(buf) + ":" + std::to_string(ntohs(addr.sin_port));
}

Socket accept_tcp(const Socket& listener) {
  for (;;) {
    int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      set_nodelay(fd);
      return Socket(fd);
    }
    if (errno == EINTR || errno == ECONNABORTED) continue;
    io_fail("accept", errno);
  }
}

Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo* res = resolve(host, port, false);
  Socket s(::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol));
  if (!s.valid()) {
    ::freeaddrinfo(res);
    io_fail("socket", errno);
  }
  int rc;
  do {
    rc = ::connect(s.fd(), res->ai_addr, res->ai_addrlen);
  } while (rc != 0 && errno == EINTR);
  int err = errno;
  ::freeaddrinfo(res);
  if (rc != 0) {
    if (err == ECONNREFUSED) throw Error(Errc::io_error, "connection refused by " + host + ":" + std::to_string(port));
    io_fail("connect to " + host + ":" + std::to_string(port), err);
  }
  set_nodelay(s.fd());
  return s;
}

}  // namespace visor::net
