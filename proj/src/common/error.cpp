#include "visor/common/error.hpp"

namespace visor {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::store_closed: return "store-closed";
    case Errc::type_conflict: return "type-conflict";
    case Errc::unknown_node: return "unknown-node";
    case Errc::unknown_edge: return "unknown-edge";
    case Errc::conflict: return "conflict";
    case Errc::unsupported_format: return "unsupported-format";
    case Errc::dimension_mismatch: return "dimension-mismatch";
    case Errc::unknown_locator: return "unknown-locator";
    case Errc::invalid_op_params: return "invalid-op-params";
    case Errc::out_of_bounds: return "out-of-bounds";
    case Errc::invalid_target: return "invalid-target";
    case Errc::duplicate_name: return "duplicate-name";
    case Errc::unknown_set: return "unknown-set";
    case Errc::non_finite_value: return "non-finite-value";
    case Errc::no_labeled_entries: return "no-labeled-entries";
    case Errc::decode_error: return "decode-error";
    case Errc::validation: return "validation-error";
    case Errc::ambiguous_endpoint: return "ambiguous-endpoint";
    case Errc::parse_error: return "parse-error";
    case Errc::io_error: return "io-error";
    case Errc::corrupt_data: return "corrupt-data";
    case Errc::protocol_error: return "protocol-error";
    case Errc::internal: return "internal";
  }
  return "unknown";
}

int status_code(Errc code) noexcept {
  switch (code) {
    case Errc::type_conflict:
    case Errc::unsupported_format:
    case Errc::dimension_mismatch:
    case Errc::invalid_op_params:
    case Errc::out_of_bounds:
    case Errc::invalid_target:
    case Errc::duplicate_name:
    case Errc::non_finite_value:
    case Errc::no_labeled_entries:
    case Errc::validation:
    case Errc::ambiguous_endpoint:
    case Errc::parse_error:
    case Errc::protocol_error:
      return status::validation;
    case Errc::unknown_node:
    case Errc::unknown_edge:
    case Errc::unknown_locator:
    case Errc::unknown_set:
      return status::not_found;
    case Errc::conflict:
      return status::conflict;
    case Errc::decode_error:
    case Errc::corrupt_data:
      return status::decode;
    case Errc::store_closed:
    case Errc::io_error:
    case Errc::internal:
      return status::internal;
  }
  return status::internal;
}

}  // namespace visor
