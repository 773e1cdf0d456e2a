#include "visor/query/engine.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <optional>
#include <set>

#include "visor/common/error.hpp"
#include "visor/image/codec.hpp"
#include "visor/image/tiled.hpp"
#include "visor/query/json_codec.hpp"

namespace visor::query {

namespace {

using Clock = std::chrono::steady_clock;
using graph::NodeId;

constexpr std::string_view kVerbs[] = {"AddEntity",      "Connect",       "FindEntity",
                                       "AddImage",       "FindImage",     "AddDescriptorSet",
                                       "AddDescriptor",  "FindDescriptor", "ClassifyDescriptor"};
constexpr std::string_view kWriteVerbs[] = {"AddEntity", "Connect", "AddImage", "AddDescriptorSet", "AddDescriptor"};
constexpr std::string_view kBlobVerbs[] = {"AddImage", "AddDescriptor", "FindDescriptor", "ClassifyDescriptor"};
constexpr std::string_view kImageReserved[] = {"width", "height", "format", "channels"};

bool listed(std::span<const std::string_view> names, std::string_view v) {
  return std::find(names.begin(), names.end(), v) != names.end();
}

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::validation, msg); }

const json* field(const json& body, const char* key) {
  auto it = body.find(key);
  return it == body.end() ? nullptr : &*it;
}

std::string required_string(const json& body, const char* key, std::string_view verb) {
  const json* v = field(body, key);
  if (!v) invalid(std::string(verb) + " requires \"" + key + "\"");
  if (!v->is_string() || v->get_ref<const std::string&>().empty())
    invalid(std::string(verb) + ": \"" + key + "\" must be a non-empty string");
  return v->get<std::string>();
}

std::optional<std::string> optional_string(const json& body, const char* key, std::string_view verb) {
  if (!field(body, key)) return std::nullopt;
  return required_string(body, key, verb);
}

std::int64_t required_int(const json& body, const char* key, std::string_view verb) {
  const json* v = field(body, key);
  if (!v) invalid(std::string(verb) + " requires \"" + key + "\"");
  if (!v->is_number_integer()) invalid(std::string(verb) + ": \"" + key + "\" must be an integer");
  if (v->is_number_unsigned() && v->get<std::uint64_t>() > std::uint64_t(INT64_MAX))
    invalid(std::string(verb) + ": \"" + key + "\" is out of range");
  return v->get<std::int64_t>();
}

struct RefTarget {
  std::vector<NodeId> nodes;
  bool direct = false;  // descriptor results: select these nodes, do not traverse
};

struct ResultOpts {
  std::optional<std::vector<std::string>> list;
  bool all = false;
  bool count = false;
  std::optional<graph::SortSpec> sort;
  std::optional<std::size_t> limit;
  bool entities() const { return list.has_value() || all; }
};

ResultOpts parse_results(const json* r, std::string_view verb) {
  ResultOpts out;
  if (!r) return out;
  static constexpr std::string_view keys[] = {"list", "all_properties", "count", "sort", "limit"};
  require_known_keys(*r, std::string(verb) + ".results", keys);
  if (auto l = field(*r, "list")) {
    if (!l->is_array()) invalid("results.list must be an array of property names");
    std::vector<std::string> names;
    for (const auto& n : *l) {
      if (!n.is_string()) invalid("results.list must be an array of property names");
      names.push_back(n.get<std::string>());
    }
    out.list = std::move(names);
  }
  if (auto a = field(*r, "all_properties")) {
    if (!a->is_boolean()) invalid("results.all_properties must be a boolean");
    out.all = a->get<bool>();
  }
  if (auto c = field(*r, "count")) {
    if (!c->is_boolean()) invalid("results.count must be a boolean");
    out.count = c->get<bool>();
  }
  if (auto s = field(*r, "sort")) {
    graph::SortSpec spec;
    if (s->is_string()) {
      spec.property = s->get<std::string>();
    } else if (s->is_object()) {
      static constexpr std::string_view sk[] = {"key", "order"};
      require_known_keys(*s, "results.sort", sk);
      spec.property = required_string(*s, "key", "results.sort");
      auto order = optional_string(*s, "order", "results.sort").value_or("ascending");
      if (order != "ascending" && order != "descending") invalid("results.sort.order must be ascending or descending");
      spec.descending = order == "descending";
    } else {
      invalid("results.sort must be a property name or {key, order}");
    }
    out.sort = std::move(spec);
  }
  if (field(*r, "limit")) {
    auto n = required_int(*r, "limit", "results");
    if (n < 1) invalid("results.limit must be at least 1");
    out.limit = static_cast<std::size_t>(n);
  }
  return out;
}

json entity_json(const graph::Node& n, const ResultOpts& r) {
  json e = json::object();
  if (r.all) {
    for (const auto& [k, v] : n.properties)
      if (k.empty() || k[0] != '_') e[k] = value_to_json(v);
  }
  if (r.list) {
    for (const auto& name : *r.list) {
      if (name == "_id") {
        e["_id"] = n.id;
        continue;
      }
      auto it = n.properties.find(name);
      if (it != n.properties.end()) e[name] = value_to_json(it->second);
    }
  }
  return e;
}

graph::Direction parse_direction(const json& link, graph::Direction fallback) {
  auto d = optional_string(link, "direction", "link");
  if (!d) return fallback;
  if (*d == "out") return graph::Direction::out;
  if (*d == "in") return graph::Direction::in;
  if (*d == "any") return graph::Direction::any;
  invalid("link.direction must be out, in or any");
}

// Sorts and truncates the way graph::ResultSpec does, for node sets that do
// not come from the graph's own query paths.
void shape_local(std::vector<graph::Node>& nodes, const ResultOpts& r) {
  std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (r.sort) {
    const auto& key = r.sort->property;
    const bool desc = r.sort->descending;
    std::stable_sort(nodes.begin(), nodes.end(), [&](const graph::Node& a, const graph::Node& b) {
      auto ia = a.properties.find(key), ib = b.properties.find(key);
      bool ha = ia != a.properties.end(), hb = ib != b.properties.end();
      if (ha != hb) return ha;
      if (!ha) return false;
      graph::ValueLess less;
      return desc ? less(ib->second, ia->second) : less(ia->second, ib->second);
    });
  }
  if (r.limit && nodes.size() > *r.limit) nodes.resize(*r.limit);
}

class Session {
 public:
  Session(graph::Transaction& txn, descriptor::DescriptorTxn& dtxn, image::VisualStore& visual,
          std::span<const Bytes> blobs)
      : txn_(txn), dtxn_(dtxn), visual_(visual), blobs_(blobs) {}

  json run(std::string_view verb, const json& body) {
    if (verb == "AddEntity") return add_entity(body);
    if (verb == "Connect") return connect(body);
    if (verb == "FindEntity") return find_entity(body);
    if (verb == "AddImage") return add_image(body);
    if (verb == "FindImage") return find_image(body);
    if (verb == "AddDescriptorSet") return add_descriptor_set(body);
    if (verb == "AddDescriptor") return add_descriptor(body);
    if (verb == "FindDescriptor") return find_descriptor(body);
    if (verb == "ClassifyDescriptor") return classify_descriptor(body);
    invalid("unknown command \"" + std::string(verb) + "\"");
  }

  std::vector<Bytes>& out_blobs() { return out_blobs_; }
  const std::vector<std::string>& written() const { return written_; }
  image::RetrievalTiming timing() const { return timing_; }

 private:
  const Bytes& take_blob(std::string_view verb) {
    if (next_blob_ >= blobs_.size()) invalid(std::string(verb) + " needs a blob but none is left");
    return blobs_[next_blob_++];
  }

  void register_ref(const json& body, RefTarget target) {
    if (!field(body, "_ref")) return;
    auto ref = required_int(body, "_ref", "_ref");
    if (ref < 1) invalid("_ref must be a positive integer");
    if (!refs_.try_emplace(ref, std::move(target)).second) invalid("_ref " + std::to_string(ref) + " is already used");
  }

  const RefTarget& resolve(const json& v, std::string_view what) {
    if (!v.is_number_integer()) invalid(std::string(what) + " must be an integer _ref");
    auto it = refs_.find(v.get<std::int64_t>());
    if (it == refs_.end()) invalid(std::string(what) + " names unknown _ref " + v.dump());
    return it->second;
  }

  NodeId single(const std::vector<NodeId>& nodes, std::string_view what) {
    if (nodes.size() != 1)
      throw Error(Errc::ambiguous_endpoint,
                  std::string(what) + " matched " + std::to_string(nodes.size()) + " entities, expected exactly 1");
    return nodes.front();
  }

  // Nodes selected by an optional class, constraints and link clause.
  std::vector<graph::Node> select(std::optional<std::string> cls, const json& body, const ResultOpts& r,
                                  std::string_view verb) {
    auto constraints = constraints_from_json(field(body, "constraints") ? body["constraints"] : json());
    graph::ResultSpec spec;
    spec.sort = r.sort;
    spec.limit = r.limit;
    const json* link = field(body, "link");
    if (!link) {
      if (!cls) invalid(std::string(verb) + " requires \"class\" or \"link\"");
      return txn_.find_nodes(*cls, constraints, spec);
    }
    static constexpr std::string_view keys[] = {"ref", "class", "direction"};
    require_known_keys(*link, "link", keys);
    if (!field(*link, "ref")) invalid("link requires \"ref\"");
    const auto& target = resolve((*link)["ref"], "link.ref");
    if (!target.direct) {
      graph::NeighborQuery q;
      q.edge_class = optional_string(*link, "class", "link");
      q.direction = parse_direction(*link, graph::Direction::any);
      q.target_class = cls;
      q.constraints = std::move(constraints);
      return txn_.neighbors(target.nodes, q, spec);
    }
    std::vector<graph::Node> out;
    std::set<NodeId> seen;
    for (NodeId id : target.nodes) {
      if (!seen.insert(id).second) continue;
      auto node = txn_.get_node(id);
      if (!node || (cls && node->cls != *cls)) continue;
      bool ok = true;
      for (const auto& c : constraints) {
        graph::check_constraint(c, txn_.property_type(node->cls, c.property));
        auto it = node->properties.find(c.property);
        ok = ok && it != node->properties.end() && graph::satisfies(it->second, c.op, c.comparand);
      }
      if (ok) out.push_back(std::move(*node));
    }
    shape_local(out, r);
    return out;
  }

  static RefTarget ids_of(const std::vector<graph::Node>& nodes) {
    RefTarget t;
    for (const auto& n : nodes) t.nodes.push_back(n.id);
    return t;
  }

  json add_entity(const json& body) {
    static constexpr std::string_view keys[] = {"class", "properties", "_ref"};
    require_known_keys(body, "AddEntity", keys);
    auto cls = required_string(body, "class", "AddEntity");
    auto props = properties_from_json(field(body, "properties") ? body["properties"] : json());
    NodeId id = txn_.add_node(cls, std::move(props));
    register_ref(body, {{id}, false});
    return {{"status", status::ok}, {"id", id}};
  }

  NodeId endpoint(const json& body, const char* ref_key, const char* match_key) {
    const json* ref = field(body, ref_key);
    const json* match = field(body, match_key);
    if ((ref != nullptr) == (match != nullptr))
      invalid(std::string("Connect needs exactly one of \"") + ref_key + "\" or \"" + match_key + "\"");
    if (ref) return single(resolve(*ref, ref_key).nodes, ref_key);
    static constexpr std::string_view keys[] = {"class", "constraints"};
    require_known_keys(*match, match_key, keys);
    auto cls = required_string(*match, "class", match_key);
    auto constraints = constraints_from_json(field(*match, "constraints") ? (*match)["constraints"] : json());
    graph::ResultSpec spec;
    spec.limit = 2;
    return single(ids_of(txn_.find_nodes(cls, constraints, spec)).nodes, match_key);
  }

  json connect(const json& body) {
    static constexpr std::string_view keys[] = {"class", "ref1", "ref2", "src", "dst", "properties"};
    require_known_keys(body, "Connect", keys);
    auto cls = required_string(body, "class", "Connect");
    NodeId src = endpoint(body, "ref1", "src");
    NodeId dst = endpoint(body, "ref2", "dst");
    auto props = properties_from_json(field(body, "properties") ? body["properties"] : json());
    auto id = txn_.add_edge(cls, src, dst, std::move(props));
    return {{"status", status::ok}, {"id", id}};
  }

  json find_entity(const json& body) {
    static constexpr std::string_view keys[] = {"class", "constraints", "link", "results", "_ref"};
    require_known_keys(body, "FindEntity", keys);
    auto cls = optional_string(body, "class", "FindEntity");
    auto r = parse_results(field(body, "results"), "FindEntity");
    json out = {{"status", status::ok}};
    // Count-only lookups on a class skip materializing nodes.
    if (r.count && !r.entities() && !field(body, "link") && !field(body, "_ref") && cls && !r.limit) {
      auto constraints = constraints_from_json(field(body, "constraints") ? body["constraints"] : json());
      out["count"] = txn_.count_nodes(*cls, constraints);
      return out;
    }
    auto nodes = select(cls, body, r, "FindEntity");
    register_ref(body, ids_of(nodes));
    if (r.count) {
      out["count"] = nodes.size();
      if (!r.entities()) return out;
    }
    out["returned"] = nodes.size();
    if (r.entities()) {
      json list = json::array();
      for (const auto& n : nodes) list.push_back(entity_json(n, r));
      out["entities"] = std::move(list);
    }
    return out;
  }

  json add_image(const json& body) {
    static constexpr std::string_view keys[] = {"format", "tile_size", "properties", "operations", "link", "_ref"};
    require_known_keys(body, "AddImage", keys);
    auto format = image::ImageFormat::tiled;
    if (auto f = optional_string(body, "format", "AddImage")) {
      auto parsed = image::parse_format(*f);
      if (!parsed) throw Error(Errc::unsupported_format, "unknown image format \"" + *f + "\"");
      format = *parsed;
    }
    std::optional<std::uint16_t> tile_size;
    if (field(body, "tile_size")) {
      auto ts = required_int(body, "tile_size", "AddImage");
      if (ts < 1 || ts > 32768 || !image::is_valid_tile_size(static_cast<std::uint32_t>(ts)))
        throw Error(Errc::invalid_op_params, "tile_size must be a power of two up to 32768");
      tile_size = static_cast<std::uint16_t>(ts);
    }
    auto props = properties_from_json(field(body, "properties") ? body["properties"] : json());
    for (auto name : kImageReserved)
      if (props.contains(name)) invalid("AddImage: property \"" + std::string(name) + "\" is set by the server");
    auto ops = ops_from_json(field(body, "operations") ? body["operations"] : json());
    const Bytes& blob = take_blob("AddImage");

    image::Image img = image::decode(blob);
    img = image::apply_ops(std::move(img), ops);
    auto rec = visual_.store_image(img, format, tile_size);
    written_.push_back(rec.locator);

    props.emplace("width", static_cast<std::int64_t>(rec.width));
    props.emplace("height", static_cast<std::int64_t>(rec.height));
    props.emplace("channels", static_cast<std::int64_t>(rec.channels));
    props.emplace("format", std::string(image::format_name(rec.format)));
    props.emplace("_blob", graph::BlobLocator{rec.locator});
    NodeId id = txn_.add_node(kImageClass, std::move(props));

    if (const json* link = field(body, "link")) {
      static constexpr std::string_view lk[] = {"ref", "class", "direction"};
      require_known_keys(*link, "link", lk);
      if (!field(*link, "ref")) invalid("link requires \"ref\"");
      NodeId other = single(resolve((*link)["ref"], "link.ref").nodes, "link.ref");
      auto edge_class = required_string(*link, "class", "link");
      auto dir = parse_direction(*link, graph::Direction::in);
      if (dir == graph::Direction::any) invalid("AddImage link.direction must be in or out");
      if (dir == graph::Direction::in) txn_.add_edge(edge_class, other, id);
      else txn_.add_edge(edge_class, id, other);
    }
    register_ref(body, {{id}, false});
    return {{"status", status::ok}, {"id", id}, {"width", rec.width}, {"height", rec.height}};
  }

  static std::vector<std::vector<image::TransformOp>> pipelines_from_json(const json* ops) {
    std::vector<std::vector<image::TransformOp>> out;
    if (!ops || ops->is_null() || (ops->is_array() && ops->empty())) {
      out.emplace_back();
      return out;
    }
    if (!ops->is_array()) invalid("operations must be an array");
    const bool nested = ops->front().is_array();
    for (const auto& p : *ops) {
      if (p.is_array() != nested) invalid("operations must be all op objects or all op arrays");
    }
    if (!nested) {
      out.push_back(ops_from_json(*ops));
      return out;
    }
    for (const auto& p : *ops) out.push_back(ops_from_json(p));
    return out;
  }

  json find_image(const json& body) {
    static constexpr std::string_view keys[] = {"constraints", "link", "operations", "format", "results", "_ref"};
    require_known_keys(body, "FindImage", keys);
    auto r = parse_results(field(body, "results"), "FindImage");
    auto pipelines = pipelines_from_json(field(body, "operations"));
    auto format = image::ImageFormat::png;
    if (auto f = optional_string(body, "format", "FindImage")) {
      auto parsed = image::parse_format(*f);
      if (!parsed) throw Error(Errc::unsupported_format, "unknown image format \"" + *f + "\"");
      format = *parsed;
    }
    auto nodes = select(std::string(kImageClass), body, r, "FindImage");
    register_ref(body, ids_of(nodes));
    std::size_t produced = 0;
    for (const auto& n : nodes) {
      auto it = n.properties.find("_blob");
      if (it == n.properties.end() || !std::holds_alternative<graph::BlobLocator>(it->second))
        throw Error(Errc::internal, "image entity " + std::to_string(n.id) + " has no blob");
      const auto& locator = std::get<graph::BlobLocator>(it->second).key;
      for (const auto& ops : pipelines) {
        image::RetrievalTiming t;
        out_blobs_.push_back(visual_.retrieve_image(locator, ops, format, &t));
        timing_.retrieval += t.retrieval;
        timing_.preprocess += t.preprocess;
        ++produced;
      }
    }
    json out = {{"status", status::ok}, {"returned", nodes.size()}, {"blobs", produced}};
    if (r.count) out["count"] = nodes.size();
    if (r.entities()) {
      json list = json::array();
      for (const auto& n : nodes) list.push_back(entity_json(n, r));
      out["entities"] = std::move(list);
    }
    return out;
  }

  json add_descriptor_set(const json& body) {
    static constexpr std::string_view keys[] = {"name", "dimensions"};
    require_known_keys(body, "AddDescriptorSet", keys);
    auto name = required_string(body, "name", "AddDescriptorSet");
    auto d = required_int(body, "dimensions", "AddDescriptorSet");
    if (d < 1 || d > (1 << 20)) invalid("AddDescriptorSet: dimensions must be in 1..1048576");
    dtxn_.create_set(name, static_cast<std::uint32_t>(d));
    return {{"status", status::ok}};
  }

  std::vector<float> vector_blob(const std::string& set, std::string_view verb) {
    auto dim = dtxn_.dimension(set);
    if (!dim) throw Error(Errc::unknown_set, "no descriptor set named \"" + set + "\"");
    const Bytes& blob = take_blob(verb);
    if (blob.size() != std::size_t{4} * *dim)
      invalid(std::string(verb) + ": blob has " + std::to_string(blob.size()) + " bytes, expected " +
              std::to_string(std::size_t{4} * *dim) + " (dimension x 4)");
    std::vector<float> v(*dim);
    ByteReader rd(blob);
    for (auto& x : v) x = rd.f32();
    return v;
  }

  json add_descriptor(const json& body) {
    static constexpr std::string_view keys[] = {"set", "label", "link"};
    require_known_keys(body, "AddDescriptor", keys);
    auto set = required_string(body, "set", "AddDescriptor");
    auto label = optional_string(body, "label", "AddDescriptor");
    std::optional<std::uint64_t> node;
    if (const json* link = field(body, "link")) {
      static constexpr std::string_view lk[] = {"ref"};
      require_known_keys(*link, "link", lk);
      if (!field(*link, "ref")) invalid("link requires \"ref\"");
      node = single(resolve((*link)["ref"], "link.ref").nodes, "link.ref");
    }
    auto v = vector_blob(set, "AddDescriptor");
    auto id = dtxn_.add(set, v, std::move(label), node);
    return {{"status", status::ok}, {"id", id}};
  }

  std::size_t k_of(const json& body, std::string_view verb) {
    if (!field(body, "k_neighbors")) return 1;
    auto k = required_int(body, "k_neighbors", verb);
    if (k < 1) invalid(std::string(verb) + ": k_neighbors must be at least 1");
    return static_cast<std::size_t>(k);
  }

  json find_descriptor(const json& body) {
    static constexpr std::string_view keys[] = {"set", "k_neighbors", "_ref"};
    require_known_keys(body, "FindDescriptor", keys);
    auto set = required_string(body, "set", "FindDescriptor");
    auto k = k_of(body, "FindDescriptor");
    auto v = vector_blob(set, "FindDescriptor");
    auto hits = dtxn_.knn(set, v, k);
    json list = json::array();
    RefTarget linked;
    linked.direct = true;
    for (const auto& h : hits) {
      json e = {{"_id", h.id}, {"_distance", h.distance}};
      if (h.label) e["_label"] = *h.label;
      if (h.node) {
        e["_node"] = *h.node;
        if (std::find(linked.nodes.begin(), linked.nodes.end(), *h.node) == linked.nodes.end())
          linked.nodes.push_back(*h.node);
      }
      list.push_back(std::move(e));
    }
    register_ref(body, std::move(linked));
    return {{"status", status::ok}, {"returned", hits.size()}, {"entities", std::move(list)}};
  }

  json classify_descriptor(const json& body) {
    static constexpr std::string_view keys[] = {"set", "k_neighbors"};
    require_known_keys(body, "ClassifyDescriptor", keys);
    auto set = required_string(body, "set", "ClassifyDescriptor");
    auto k = k_of(body, "ClassifyDescriptor");
    auto v = vector_blob(set, "ClassifyDescriptor");
    return {{"status", status::ok}, {"label", dtxn_.classify(set, v, k)}};
  }

  graph::Transaction& txn_;
  descriptor::DescriptorTxn& dtxn_;
  image::VisualStore& visual_;
  std::span<const Bytes> blobs_;
  std::size_t next_blob_ = 0;
  std::map<std::int64_t, RefTarget> refs_;
  std::vector<std::string> written_;
  std::vector<Bytes> out_blobs_;
  image::RetrievalTiming timing_;
};

struct Failure {
  std::size_t index;
  int status;
  std::string error;
  std::string info;
};

QueryResult failed(const json& commands, const Failure& f) {
  QueryResult out;
  const std::size_t n = commands.is_array() ? commands.size() : 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::string verb = "Error";
    if (commands[i].is_object() && commands[i].size() == 1) verb = commands[i].begin().key();
    json body;
    if (i == f.index) body = {{"status", f.status}, {"error", f.error}, {"info", f.info}};
    else body = {{"status", status::aborted}, {"info", "aborted: command " + std::to_string(f.index) + " failed"}};
    out.responses.push_back({{verb, std::move(body)}});
  }
  return out;
}

QueryResult synthetic(const std::string& info) {
  QueryResult out;
  out.responses.push_back({{"Error", {{"status", status::validation}, {"error", "parse-error"}, {"info", info}}}});
  return out;
}

// Shape check before anything executes: every element is {"Verb": {...}}
// with a known verb, and request blobs match the blob-consuming commands.
std::optional<Failure> check_shape(const json& commands, std::size_t blob_count) {
  std::size_t consumers = 0;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    const auto& c = commands[i];
    if (!c.is_object() || c.size() != 1)
      return Failure{i, status::validation, "validation-error", "each command must be an object with one verb key"};
    const auto& verb = c.begin().key();
    if (!listed(kVerbs, verb))
      return Failure{i, status::validation, "validation-error", "unknown command \"" + verb + "\""};
    if (!c.begin().value().is_object())
      return Failure{i, status::validation, "validation-error", verb + " body must be an object"};
    if (listed(kBlobVerbs, verb) && ++consumers > blob_count)
      return Failure{i, status::validation, "validation-error", verb + " needs a blob but none is left"};
  }
  if (consumers < blob_count && !commands.empty())
    return Failure{commands.size() - 1, status::validation, "validation-error",
                   std::to_string(blob_count) + " blobs sent but only " + std::to_string(consumers) + " consumed"};
  return std::nullopt;
}

}  // namespace

bool is_write_envelope(const json& commands) {
  if (!commands.is_array()) return false;
  for (const auto& c : commands)
    if (c.is_object() && c.size() == 1 && listed(kWriteVerbs, c.begin().key())) return true;
  return false;
}

Engine::Engine(graph::GraphStore graph, std::unique_ptr<image::VisualStore> visual,
               descriptor::DescriptorStore descriptors)
    : graph_(std::move(graph)), visual_(std::move(visual)), descriptors_(std::move(descriptors)) {}

Engine::~Engine() = default;

std::unique_ptr<Engine> Engine::open(const std::filesystem::path& data_dir, EngineOptions options) {
  std::filesystem::create_directories(data_dir);
  graph::GraphOptions go;
  go.sync = options.sync;
  go.checkpoint_bytes = options.checkpoint_bytes;
  auto graph = graph::GraphStore::open(data_dir / "graph", go);
  auto visual = std::make_unique<image::VisualStore>(data_dir / "blobs", image::VisualStoreOptions{options.sync});
  auto descriptors = descriptor::DescriptorStore::open(data_dir / "descriptors", options.sync);
  if (!options.indexes.empty()) {
    auto txn = graph.begin(graph::TxnMode::read_write);
    for (const auto& [cls, prop] : options.indexes) txn.create_index(cls, prop);
    txn.commit();
  }
  return std::unique_ptr<Engine>(new Engine(std::move(graph), std::move(visual), std::move(descriptors)));
}

void Engine::close() {
  std::lock_guard lock(writer_);
  graph_.close();
}

QueryResult Engine::execute(std::string_view text, std::span<const Bytes> blobs, PhaseTimes* times) {
  const auto start = Clock::now();
  json commands;
  try {
    commands = json::parse(text);
  } catch (const json::parse_error& e) {
    return synthetic(std::string("malformed JSON: ") + e.what());
  }
  if (!commands.is_array()) return synthetic("request must be a JSON array of commands");
  if (auto f = check_shape(commands, blobs.size())) return failed(commands, *f);
  if (commands.empty()) return {};

  const bool write = is_write_envelope(commands);
  std::unique_lock<std::mutex> lock(writer_, std::defer_lock);
  if (write) lock.lock();

  std::size_t index = 0;
  std::vector<std::string> written;
  try {
    auto txn = graph_.begin(write ? graph::TxnMode::read_write : graph::TxnMode::read_only);
    auto dtxn = descriptors_.begin();
    Session session(txn, dtxn, *visual_, blobs);
    QueryResult out;
    try {
      for (; index < commands.size(); ++index) {
        const auto& [verb, body] = *commands[index].items().begin();
        out.responses.push_back({{verb, session.run(verb, body)}});
      }
      if (write) {
        index = commands.size() - 1;
        txn.commit();
        dtxn.commit();
      }
    } catch (...) {
      written = session.written();
      throw;
    }
    out.blobs = std::move(session.out_blobs());
    if (times) {
      auto t = session.timing();
      times->retrieval += t.retrieval;
      times->preprocess += t.preprocess;
      auto total = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start);
      times->metadata += std::max(std::chrono::nanoseconds(0), total - t.retrieval - t.preprocess);
    }
    return out;
  } catch (const Error& e) {
    for (const auto& loc : written) visual_->remove(loc);
    return failed(commands, {std::min(index, commands.size() - 1), status_code(e.code()),
                             std::string(errc_name(e.code())), e.what()});
  } catch (const std::exception& e) {
    for (const auto& loc : written) visual_->remove(loc);
    return failed(commands, {std::min(index, commands.size() - 1), status::internal, "internal", e.what()});
  }
}

}  // namespace visor::query
