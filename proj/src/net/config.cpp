#include "visor/net/config.hpp"

#include <charconv>
#include <cstdlib>

#include "visor/common/error.hpp"
#include "visor/common/file.hpp"

namespace visor::net {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v, std::uint64_t lo, std::uint64_t hi) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || out < lo || out > hi)
    throw Error(Errc::validation, std::string(key) + " must be an integer in " + std::to_string(lo) + ".." +
                                      std::to_string(hi) + ", got \"" + std::string(v) + "\"");
  return out;
}

}  // namespace

Settings parse_settings(std::string_view text) {
  Settings out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty())
      throw Error(Errc::validation, "config line " + std::to_string(line_no) + ": expected key=value");
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

Settings env_settings() {
  Settings out;
  if (const char* p = std::getenv("VISOR_PORT")) out["port"] = p;
  if (const char* d = std::getenv("VISOR_DATA_DIR")) out["data_dir"] = d;
  return out;
}

void apply_settings(ServerConfig& c, const Settings& settings) {
  for (const auto& [key, value] : settings) {
    if (key == "host") {
      c.host = value;
    } else if (key == "port") {
      c.port = static_cast<std::uint16_t>(parse_uint(key, value, 0, 65535));
    } else if (key == "data_dir") {
      if (value.empty()) throw Error(Errc::validation, "data_dir must not be empty");
      c.data_dir = value;
    } else if (key == "max_message_mib") {
      c.max_message_mib = parse_uint(key, value, 1, 4095);
    } else if (key == "workers") {
      c.workers = static_cast<unsigned>(parse_uint(key, value, 1, 1024));
    } else if (key == "sync") {
      if (value != "true" && value != "false") throw Error(Errc::validation, "sync must be true or false");
      c.sync = value == "true";
    } else if (key == "indexes") {
      c.indexes.clear();
      std::string_view rest = value;
      while (!rest.empty()) {
        auto comma = rest.find(',');
        auto item = trim(rest.substr(0, comma));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        if (item.empty()) continue;
        auto dot = item.find('.');
        if (dot == std::string_view::npos || dot == 0 || dot + 1 == item.size())
          throw Error(Errc::validation, "index \"" + std::string(item) + "\" must be Class.property");
        c.indexes.emplace_back(std::string(item.substr(0, dot)), std::string(item.substr(dot + 1)));
      }
    } else {
      throw Error(Errc::validation, "unknown setting \"" + key + "\"");
    }
  }
}

ServerConfig resolve_config(const std::optional<std::filesystem::path>& file, const Settings& env,
                            const Settings& cli) {
  ServerConfig c;
  if (file) {
    auto bytes = read_file(*file);
    apply_settings(c, parse_settings(as_chars(bytes)));
  }
  apply_settings(c, env);
  apply_settings(c, cli);
  return c;
}

}  // namespace visor::net
