#include "visor/bench/proxy.hpp"

#include <sys/socket.h>

#include <chrono>

#include "visor/common/error.hpp"

namespace visor::bench {

struct ThrottleProxy::Link {
  net::Socket client;
  net::Socket server;
  std::thread up;
  std::thread down;
};

ThrottleProxy::ThrottleProxy(std::string target_host, std::uint16_t target_port, double mbps)
    : host_(std::move(target_host)), target_port_(target_port), bytes_per_sec_(mbps * 1e6 / 8.0) {}

ThrottleProxy::~ThrottleProxy() { stop(); }

void ThrottleProxy::start() {
  listener_ = net::listen_tcp("127.0.0.1", 0);
  port_ = net::local_port(listener_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void ThrottleProxy::stop() {
  if (stopping_.exchange(true)) return;
  if (listener_.valid()) ::shutdown(listener_.fd(), SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  listener_.close();
  std::lock_guard lock(mu_);
  for (auto& l : links_) {
    ::shutdown(l->client.fd(), SHUT_RDWR);
    ::shutdown(l->server.fd(), SHUT_RDWR);
  }
  for (auto& l : links_) {
    if (l->up.joinable()) l->up.join();
    if (l->down.joinable()) l->down.join();
  }
  links_.clear();
}

void ThrottleProxy::accept_loop() {
  while (!stopping_) {
    net::Socket client;
    try {
      client = net::accept_tcp(listener_);
    } catch (const Error&) {
      if (stopping_) return;
      continue;
    }
    net::Socket server;
    try {
      server = net::connect_tcp(host_, target_port_);
    } catch (const Error&) {
      continue;  // drops the client
    }
    std::lock_guard lock(mu_);
    if (stopping_) return;
    auto link = std::make_unique<Link>();
    link->client = std::move(client);
    link->server = std::move(server);
    Link& l = *link;
    links_.push_back(std::move(link));
    l.up = std::thread([this, &l] { pump(l.client, l.server, up_); });
    l.down = std::thread([this, &l] { pump(l.server, l.client, down_); });
  }
}

void ThrottleProxy::pump(const net::Socket& from, const net::Socket& to, std::atomic<std::uint64_t>& counter) {
  using clock = std::chrono::steady_clock;
  std::vector<std::uint8_t> buf(16 * 1024);
  // Pacing restarts after an idle gap so credit does not pile up.
  auto epoch = clock::now();
  std::uint64_t sent = 0;
  auto pace = [this](std::uint64_t bytes) {
    return std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(static_cast<double>(bytes) / bytes_per_sec_));
  };
  for (;;) {
    const std::size_t n = from.recv_some(buf.data(), buf.size());
    if (n == 0) break;
    if (bytes_per_sec_ > 0) {
      const auto now = clock::now();
      if (now > epoch + pace(sent)) {
        epoch = now;
        sent = 0;
      }
      sent += n;
      std::this_thread::sleep_until(epoch + pace(sent));
    }
    try {
      to.send_all(ByteView(buf.data(), n));
    } catch (const Error&) {
      break;
    }
    counter += n;
  }
  ::shutdown(to.fd(), SHUT_WR);
}

}  // namespace visor::bench
