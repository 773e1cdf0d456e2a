#pragma once

// Conversions between the JSON command vocabulary and store types.
//
// Property values: JSON bool, integer, real and string map directly;
// {"_date": "<ISO-8601>"} is a datetime and {"_blob": "<key>"} a blob
// locator. Constraints: {"Age": [">=", 85]} or several op/value pairs,
// {"Age": [">=", 80, "<", 90]}, all ANDed.

#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "visor/graph/property.hpp"
#include "visor/image/ops.hpp"

namespace visor::query {

using json = nlohmann::json;

graph::PropertyValue value_from_json(const json& j);
json value_to_json(const graph::PropertyValue& v);

// Rejects names starting with '_'; those are reserved for the engine.
graph::Properties properties_from_json(const json& j);
std::vector<graph::Constraint> constraints_from_json(const json& j);

// {"type": "threshold", "value": t}, {"type": "resize", "width": w,
// "height": h} or {"type": "crop", "x", "y", "width", "height"}.
image::TransformOp op_from_json(const json& j);
json op_to_json(const image::TransformOp& op);
std::vector<image::TransformOp> ops_from_json(const json& j);

// Throws Errc::validation naming `what` unless every key of `obj` is listed.
void require_known_keys(const json& obj, std::string_view what, std::span<const std::string_view> allowed);

}  // namespace visor::query
