#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace visor::net {

struct ServerConfig {
  std::string host = "0.0.0.0";
  std::uint16_t port = 55555;
  std::filesystem::path data_dir = "visor-data";
  std::uint64_t max_message_mib = 256;
  unsigned workers = 4;
  bool sync = true;
  std::vector<std::pair<std::string, std::string>> indexes = {
      {"Patient", "PatientID"}, {"Scan", "ScanID"}, {"Image", "id"}};

  std::uint64_t max_message_bytes() const { return max_message_mib << 20; }
};

// Settings use one vocabulary everywhere: host, port, data_dir,
// max_message_mib, workers, sync, indexes (comma-separated Class.property).
using Settings = std::map<std::string, std::string, std::less<>>;

// key=value lines; '#' starts a comment. Throws Errc::validation with the
// line number on malformed input.
Settings parse_settings(std::string_view text);
// VISOR_PORT and VISOR_DATA_DIR.
Settings env_settings();
// Throws Errc::validation for unknown keys or bad values.
void apply_settings(ServerConfig& config, const Settings& settings);

// Defaults, then the file, then the environment, then the command line.
ServerConfig resolve_config(const std::optional<std::filesystem::path>& file, const Settings& env,
                            const Settings& cli);

}  // namespace visor::net
