#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "visor/net/config.hpp"
#include "visor/net/socket.hpp"
#include "visor/net/wire.hpp"
#include "visor/query/engine.hpp"

namespace visor::net {

struct SessionStats {
  std::uint64_t id = 0;
  std::string peer;
  std::uint64_t envelopes = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  bool open = false;
};

// TCP front end: one thread per connection, at most `workers` envelopes
// executing at once, requests on a connection answered in order.
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts accepting. Throws Errc::io_error if the port is taken.
  void start();
  // Stops accepting, lets in-flight envelopes finish, closes connections and
  // checkpoints the stores. Idempotent.
  void stop();

  std::uint16_t port() const noexcept { return port_; }
  std::vector<SessionStats> sessions() const;
  query::Engine& engine() noexcept { return *engine_; }
  const ServerConfig& config() const noexcept { return config_; }

  // Builds the response frame for one request; exposed for tests.
  Message handle(const Message& request);

 private:
  struct Connection;

  void accept_loop();
  void serve(Connection& c);
  void reap_finished();

  ServerConfig config_;
  std::unique_ptr<query::Engine> engine_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  bool stopped_ = false;
  std::counting_semaphore<1024> workers_;

  mutable std::mutex mu_;
  std::list<std::unique_ptr<Connection>> connections_;
  std::vector<SessionStats> closed_;
  std::uint64_t next_id_ = 1;
};

// Error frame sent for framing problems: one Error response, no blobs.
Message error_frame(const std::string& info);

}  // namespace visor::net
