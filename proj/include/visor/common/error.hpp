#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace visor {

// Every failure the stores and the engine can report. The numeric status a
// client sees is derived from this through status_code().
enum class Errc {
  store_closed,
  type_conflict,
  unknown_node,
  unknown_edge,
  conflict,
  unsupported_format,
  dimension_mismatch,
  unknown_locator,
  invalid_op_params,
  out_of_bounds,
  invalid_target,
  duplicate_name,
  unknown_set,
  non_finite_value,
  no_labeled_entries,
  decode_error,
  validation,
  ambiguous_endpoint,
  parse_error,
  io_error,
  corrupt_data,
  protocol_error,
  internal,
};

// Client-visible status codes.
namespace status {
inline constexpr int ok = 0;
inline constexpr int validation = 1;
inline constexpr int not_found = 2;
inline constexpr int conflict = 3;
inline constexpr int decode = 4;
inline constexpr int internal = 5;
inline constexpr int aborted = 6;
}  // namespace status

std::string_view errc_name(Errc code) noexcept;
int status_code(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace visor
