#include "visor/net/server.hpp"

#include <sys/socket.h>

#include <chrono>

#include "visor/common/error.hpp"

namespace visor::net {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros(std::chrono::nanoseconds d) {
  return std::chrono::duration_cast<std::chrono::microseconds>(d).count();
}

}  // namespace

struct Server::Connection {
  Socket socket;
  std::thread thread;
  std::atomic<bool> done{false};
  std::uint64_t id = 0;
  std::string peer;
  std::atomic<std::uint64_t> envelopes{0}, bytes_in{0}, bytes_out{0};

  SessionStats stats(bool open) const {
    return {id, peer, envelopes.load(), bytes_in.load(), bytes_out.load(), open};
  }
};

Message error_frame(const std::string& info) {
  Message m;
  query::json body = {{"status", status::validation}, {"error", "protocol-error"}, {"info", info}};
  m.json = query::json::array({{{"Error", body}}}).dump();
  return m;
}

Server::Server(ServerConfig config)
    : config_(std::move(config)), workers_(static_cast<std::ptrdiff_t>(std::max(1u, config_.workers))) {
  query::EngineOptions opts;
  opts.sync = config_.sync;
  opts.indexes = config_.indexes;
  engine_ = query::Engine::open(config_.data_dir, opts);
}

Server::~Server() { stop(); }

void Server::start() {
  listener_ = listen_tcp(config_.host, config_.port);
  port_ = local_port(listener_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::accept_loop() {
  while (!stopping_) {
    Socket s;
    try {
      s = accept_tcp(listener_);
    } catch (const Error&) {
      if (stopping_) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      continue;
    }
    std::lock_guard lock(mu_);
    if (stopping_) return;
    reap_finished();
    auto c = std::make_unique<Connection>();
    c->id = next_id_++;
    c->peer = peer_name(s);
    c->socket = std::move(s);
    Connection& ref = *c;
    connections_.push_back(std::move(c));
    ref.thread = std::thread([this, &ref] { serve(ref); });
  }
}

// Caller holds mu_.
void Server::reap_finished() {
  for (auto it = connections_.begin(); it != connections_.end();) {
    if ((*it)->done) {
      (*it)->thread.join();
      closed_.push_back((*it)->stats(false));
      it = connections_.erase(it);
    } else {
      ++it;
    }
  }
}

Message Server::handle(const Message& request) {
  const auto start = Clock::now();
  query::PhaseTimes times;
  const bool timing = request.flags & kFlagTiming;
  workers_.acquire();
  query::QueryResult result;
  try {
    result = engine_->execute(request.json, request.blobs, timing ? &times : nullptr);
  } catch (...) {
    workers_.release();
    throw;
  }
  workers_.release();
  Message out;
  out.flags = request.flags;
  if (timing) {
    result.responses.push_back({{"_timing",
                                 {{"metadata_us", micros(times.metadata)},
                                  {"retrieval_us", micros(times.retrieval)},
                                  {"preprocess_us", micros(times.preprocess)},
                                  {"total_us", micros(Clock::now() - start)}}}});
  }
  out.json = result.responses.dump();
  out.blobs = std::move(result.blobs);
  return out;
}

void Server::serve(Connection& c) {
  FrameReader reader([&c](std::uint8_t* buf, std::size_t n) { return c.socket.recv_some(buf, n); },
                     config_.max_message_bytes());
  auto send = [&c](const Message& m) {
    Bytes frame = encode(m);
    c.socket.send_all(frame);
    c.bytes_out += frame.size();
  };
  try {
    for (;;) {
      ReadResult r = reader.next();
      c.bytes_in += r.bytes;
      if (r.status == ReadStatus::eof) break;
      if (r.status == ReadStatus::bad_frame) {
        send(error_frame(r.error));
        break;
      }
      if (r.status == ReadStatus::oversize) {
        send(error_frame(r.error));
        continue;
      }
      Message response;
      try {
        response = handle(r.message);
      } catch (const std::exception& e) {
        response = error_frame(std::string("internal error: ") + e.what());
      }
      send(response);
      ++c.envelopes;
    }
  } catch (const Error&) {
    // Peer went away mid-write; nothing left to report to it.
  }
  c.socket.shutdown_write();
  c.done = true;
}

std::vector<SessionStats> Server::sessions() const {
  std::lock_guard lock(mu_);
  std::vector<SessionStats> out = closed_;
  for (const auto& c : connections_) out.push_back(c->stats(!c->done));
  return out;
}

void Server::stop() {
  if (stopped_) return;
  stopped_ = true;
  stopping_ = true;
  if (listener_.valid()) ::shutdown(listener_.fd(), SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  listener_.close();
  {
    std::lock_guard lock(mu_);
    for (auto& c : connections_) c->socket.shutdown_read();
  }
  std::lock_guard lock(mu_);
  for (auto& c : connections_) {
    if (c->thread.joinable()) c->thread.join();
    closed_.push_back(c->stats(false));
  }
  connections_.clear();
  engine_->close();
}

}  // namespace visor::net
