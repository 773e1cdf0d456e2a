#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace visor::graph {

// UTC instant with microsecond resolution.
struct DateTime {
  std::int64_t micros = 0;
  auto operator<=>(const DateTime&) const = default;
};

// Opaque key into the visual store.
struct BlobLocator {
  std::string key;
  auto operator<=>(const BlobLocator&) const = default;
};

using PropertyValue = std::variant<bool, std::int64_t, double, std::string, DateTime, BlobLocator>;
using Properties = std::map<std::string, PropertyValue, std::less<>>;

enum class PropertyType : std::uint8_t { boolean = 0, integer = 1, real = 2, string = 3, datetime = 4, blob = 5 };

inline PropertyType type_of(const PropertyValue& v) noexcept {
  return static_cast<PropertyType>(v.index());
}

std::string_view type_name(PropertyType t) noexcept;

enum class CompareOp { eq, ne, gt, ge, lt, le };

std::optional<CompareOp> parse_compare_op(std::string_view s) noexcept;
std::string_view op_symbol(CompareOp op) noexcept;

struct Constraint {
  std::string property;
  CompareOp op = CompareOp::eq;
  PropertyValue comparand;
};

// Integer and real values compare numerically with each other; any other
// pair of differing types never satisfies a constraint.
bool satisfies(const PropertyValue& value, CompareOp op, const PropertyValue& comparand);

// Throws Errc::type_conflict when the operator cannot apply to the comparand,
// or when the comparand disagrees with the type already fixed for the
// property (integer and real are interchangeable as comparands).
void check_constraint(const Constraint& c, std::optional<PropertyType> established);

// Total order over values: by type tag, then by value. Used for index keys.
struct ValueLess {
  bool operator()(const PropertyValue& a, const PropertyValue& b) const;
};

// ISO-8601 "YYYY-MM-DDTHH:MM:SS[.ffffff](Z|+HH:MM|-HH:MM)"; date-only input
// means midnight UTC. Throws Errc::validation on malformed input.
DateTime parse_datetime(std::string_view text);
std::string format_datetime(DateTime dt);

// Stable single-line rendering used by graph dumps ("i:85", "s:\"x\"", ...).
std::string render(const PropertyValue& v);

}  // namespace visor::graph
