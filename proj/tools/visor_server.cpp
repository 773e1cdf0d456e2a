// visor-server: serves the JSON command protocol over TCP until SIGINT or
// SIGTERM.
#include <signal.h>

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "visor/net/config.hpp"
#include "visor/net/server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"visor-server: visual data management server"};
  std::optional<std::string> config_file;
  visor::net::Settings cli;
  std::string host, port, data_dir, max_mib, workers, sync, indexes;
  app.add_option("--config", config_file, "key=value configuration file");
  app.add_option("--host", host, "listen address");
  app.add_option("--port", port, "listen port (0 picks one)");
  app.add_option("--data-dir", data_dir, "data directory");
  app.add_option("--max-message-mib", max_mib, "largest accepted request frame in MiB");
  app.add_option("--workers", workers, "envelopes executed concurrently");
  app.add_option("--sync", sync, "fsync on commit (true/false)");
  app.add_option("--indexes", indexes, "comma-separated Class.property list");
  CLI11_PARSE(app, argc, argv);

  auto put = [&](const char* key, const std::string& v) {
    if (!v.empty()) cli[key] = v;
  };
  put("host", host);
  put("port", port);
  put("data_dir", data_dir);
  put("max_message_mib", max_mib);
  put("workers", workers);
  put("sync", sync);
  put("indexes", indexes);

  // Block the stop signals before any thread starts so they all inherit
  // the mask and sigwait below receives them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  try {
    std::optional<std::filesystem::path> file;
    if (config_file) file = *config_file;
    auto config = visor::net::resolve_config(file, visor::net::env_settings(), cli);
    visor::net::Server server(config);
    server.start();
    std::printf("visor-server listening on %s:%u, data in %s\n", config.host.c_str(), server.port(),
                config.data_dir.c_str());
    std::fflush(stdout);
    int sig = 0;
    sigwait(&stop_signals, &sig);
    std::fprintf(stderr, "signal %d, shutting down\n", sig);
    server.stop();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "visor-server: %s\n", e.what());
    return 1;
  }
  return 0;
}
