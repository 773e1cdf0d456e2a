#include "visor/query/json_codec.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "visor/common/error.hpp"

namespace visor::query {

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::validation, msg); }

std::int64_t integer_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) invalid(std::string("operation missing \"") + key + "\"");
  if (!it->is_number_integer()) invalid(std::string("operation field \"") + key + "\" must be an integer");
  if (it->is_number_unsigned() && it->get<std::uint64_t>() > std::uint64_t(std::numeric_limits<std::int64_t>::max()))
    return std::numeric_limits<std::int64_t>::max();
  return it->get<std::int64_t>();
}

}  // namespace

graph::PropertyValue value_from_json(const json& j) {
  switch (j.type()) {
    case json::value_t::boolean: return j.get<bool>();
    case json::value_t::number_integer: return j.get<std::int64_t>();
    case json::value_t::number_unsigned: {
      auto u = j.get<std::uint64_t>();
      if (u > std::uint64_t(std::numeric_limits<std::int64_t>::max())) invalid("integer out of 64-bit range");
      return static_cast<std::int64_t>(u);
    }
    case json::value_t::number_float: {
      double d = j.get<double>();
      if (!std::isfinite(d)) throw Error(Errc::non_finite_value, "non-finite real value");
      return d;
    }
    case json::value_t::string: return j.get<std::string>();
    case json::value_t::object:
      if (j.size() == 1 && j.contains("_date") && j["_date"].is_string())
        return graph::parse_datetime(j["_date"].get<std::string>());
      if (j.size() == 1 && j.contains("_blob") && j["_blob"].is_string())
        return graph::BlobLocator{j["_blob"].get<std::string>()};
      invalid("object values must be {\"_date\": ...} or {\"_blob\": ...}");
    default: invalid("unsupported property value " + j.dump());
  }
}

json value_to_json(const graph::PropertyValue& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, graph::DateTime>) return json{{"_date", graph::format_datetime(x)}};
        else if constexpr (std::is_same_v<T, graph::BlobLocator>) return json{{"_blob", x.key}};
        else return json(x);
      },
      v);
}

graph::Properties properties_from_json(const json& j) {
  graph::Properties out;
  if (j.is_null()) return out;
  if (!j.is_object()) invalid("properties must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k.empty() || k[0] == '_') invalid("property name \"" + k + "\" is reserved");
    out.emplace(k, value_from_json(v));
  }
  return out;
}

std::vector<graph::Constraint> constraints_from_json(const json& j) {
  std::vector<graph::Constraint> out;
  if (j.is_null()) return out;
  if (!j.is_object()) invalid("constraints must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!v.is_array() || v.empty() || v.size() % 2 != 0)
      invalid("constraint on \"" + k + "\" must be [op, value, ...]");
    for (std::size_t i = 0; i < v.size(); i += 2) {
      if (!v[i].is_string()) invalid("constraint operator on \"" + k + "\" must be a string");
      auto op = graph::parse_compare_op(v[i].get<std::string>());
      if (!op) invalid("unknown comparison operator \"" + v[i].get<std::string>() + "\"");
      out.push_back({k, *op, value_from_json(v[i + 1])});
    }
  }
  return out;
}

image::TransformOp op_from_json(const json& j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    invalid("operation must be an object with a string \"type\"");
  const auto type = j["type"].get<std::string>();
  if (type == "threshold") {
    static constexpr std::string_view keys[] = {"type", "value"};
    require_known_keys(j, "threshold", keys);
    return image::Threshold{integer_field(j, "value")};
  }
  if (type == "resize") {
    static constexpr std::string_view keys[] = {"type", "width", "height"};
    require_known_keys(j, "resize", keys);
    return image::Resize{integer_field(j, "width"), integer_field(j, "height")};
  }
  if (type == "crop") {
    static constexpr std::string_view keys[] = {"type", "x", "y", "width", "height"};
    require_known_keys(j, "crop", keys);
    return image::Crop{integer_field(j, "x"), integer_field(j, "y"), integer_field(j, "width"),
                       integer_field(j, "height")};
  }
  invalid("unknown operation type \"" + type + "\"");
}

json op_to_json(const image::TransformOp& op) {
  return std::visit(
      [](const auto& o) -> json {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, image::Threshold>) return {{"type", "threshold"}, {"value", o.value}};
        else if constexpr (std::is_same_v<T, image::Resize>)
          return {{"type", "resize"}, {"width", o.width}, {"height", o.height}};
        else
          return {{"type", "crop"}, {"x", o.x}, {"y", o.y}, {"width", o.width}, {"height", o.height}};
      },
      op);
}

std::vector<image::TransformOp> ops_from_json(const json& j) {
  std::vector<image::TransformOp> out;
  if (j.is_null()) return out;
  if (!j.is_array()) invalid("operations must be an array");
  for (const auto& o : j) out.push_back(op_from_json(o));
  return out;
}

void require_known_keys(const json& obj, std::string_view what, std::span<const std::string_view> allowed) {
  if (!obj.is_object()) invalid(std::string(what) + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    if (!ok) invalid("unknown field \"" + k + "\" in " + std::string(what));
  }
}

}  // namespace visor::query
