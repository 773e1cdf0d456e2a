#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "visor/net/socket.hpp"

namespace visor::bench {

// Loopback TCP relay in front of a server. Counts the bytes it forwards in
// each direction and, when given a rate, paces each direction of each
// connection to that many bits per second.
class ThrottleProxy {
 public:
  ThrottleProxy(std::string target_host, std::uint16_t target_port, double mbps = 0);
  ~ThrottleProxy();
  ThrottleProxy(const ThrottleProxy&) = delete;
  ThrottleProxy& operator=(const ThrottleProxy&) = delete;

  void start();
  void stop();

  std::uint16_t port() const noexcept { return port_; }
  std::uint64_t bytes_up() const noexcept { return up_; }      // client -> server
  std::uint64_t bytes_down() const noexcept { return down_; }  // server -> client

 private:
  struct Link;

  void accept_loop();
  void pump(const net::Socket& from, const net::Socket& to, std::atomic<std::uint64_t>& counter);

  std::string host_;
  std::uint16_t target_port_;
  double bytes_per_sec_;
  net::Socket listener_;
  std::uint16_t port_ = 0;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> up_{0};
  std::atomic<std::uint64_t> down_{0};
  std::mutex mu_;
  std::list<std::unique_ptr<Link>> links_;
};

}  // namespace visor::bench
