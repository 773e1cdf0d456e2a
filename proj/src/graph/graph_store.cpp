#include "visor/graph/graph_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <unordered_map>

#include "visor/common/bytes.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"

namespace visor::graph {
namespace detail {

constexpr std::uint64_t kForever = std::numeric_limits<std::uint64_t>::max();
constexpr char kSnapshotMagic[4] = {'V', 'D', 'G', 'S'};
constexpr std::uint16_t kSnapshotVersion = 1;
constexpr std::uint8_t kWalCommit = 1;

// One committed state of an entity. A null value is a tombstone: the entity
// was removed at `begin`.
template <typename T>
struct Version {
  std::uint64_t begin = 0;
  std::uint64_t end = kForever;
  std::shared_ptr<const T> value;
};

template <typename T>
struct Chain {
  std::vector<Version<T>> versions;  // ascending `begin`

  std::shared_ptr<const T> at(std::uint64_t ts) const {
    for (auto it = versions.rbegin(); it != versions.rend(); ++it)
      if (it->begin <= ts && ts < it->end) return it->value;
    return nullptr;
  }
  std::shared_ptr<const T> head() const {
    if (versions.empty() || versions.back().end != kForever) return nullptr;
    return versions.back().value;
  }
  std::uint64_t last_write() const { return versions.empty() ? 0 : versions.back().begin; }
};

struct SchemaKey {
  bool edge = false;
  std::string cls;
  std::string prop;
  auto operator<=>(const SchemaKey&) const = default;
};
using Schema = std::map<SchemaKey, PropertyType>;

struct IndexKey {
  std::string cls;
  std::string prop;
  auto operator<=>(const IndexKey&) const = default;
};
// Candidate generator: holds every value any retained version ever had, so
// lookups are always re-checked against the visible version.
using Index = std::map<PropertyValue, std::set<NodeId>, ValueLess>;

struct ChangeSet {
  std::uint64_t next_node = 1;
  std::uint64_t next_edge = 1;
  Schema schema;
  std::set<IndexKey> indexes;
  std::vector<std::shared_ptr<const Node>> node_puts;
  std::vector<NodeId> node_dels;
  std::vector<std::shared_ptr<const Edge>> edge_puts;
  std::vector<EdgeId> edge_dels;
};

// ---------------------------------------------------------------------------
// Record encoding

void put_value(ByteWriter& w, const PropertyValue& v) {
  w.u8(static_cast<std::uint8_t>(type_of(v)));
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) w.u8(x ? 1 : 0);
        else if constexpr (std::is_same_v<T, std::int64_t>) w.i64(x);
        else if constexpr (std::is_same_v<T, double>) w.f64(x);
        else if constexpr (std::is_same_v<T, std::string>) w.str(x);
        else if constexpr (std::is_same_v<T, DateTime>) w.i64(x.micros);
        else w.str(x.key);
      },
      v);
}

PropertyValue get_value(ByteReader& r) {
  switch (r.u8()) {
    case 0: return r.u8() != 0;
    case 1: return r.i64();
    case 2: return r.f64();
    case 3: return r.str();
    case 4: return DateTime{r.i64()};
    case 5: return BlobLocator{r.str()};
    default: throw Error(Errc::corrupt_data, "unknown property type tag");
  }
}

void put_props(ByteWriter& w, const Properties& props) {
  w.u32(static_cast<std::uint32_t>(props.size()));
  for (const auto& [name, value] : props) {
    w.str(name);
    put_value(w, value);
  }
}

Properties get_props(ByteReader& r) {
  Properties props;
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    auto name = r.str();
    props.emplace(std::move(name), get_value(r));
  }
  return props;
}

void put_node(ByteWriter& w, const Node& n) {
  w.u64(n.id);
  w.str(n.cls);
  put_props(w, n.properties);
}

std::shared_ptr<const Node> get_node_record(ByteReader& r) {
  auto n = std::make_shared<Node>();
  n->id = r.u64();
  n->cls = r.str();
  n->properties = get_props(r);
  return n;
}

void put_edge(ByteWriter& w, const Edge& e) {
  w.u64(e.id);
  w.str(e.cls);
  w.u64(e.src);
  w.u64(e.dst);
  put_props(w, e.properties);
}

std::shared_ptr<const Edge> get_edge_record(ByteReader& r) {
  auto e = std::make_shared<Edge>();
  e->id = r.u64();
  e->cls = r.str();
  e->src = r.u64();
  e->dst = r.u64();
  e->properties = get_props(r);
  return e;
}

void put_schema(ByteWriter& w, const Schema& schema) {
  w.u32(static_cast<std::uint32_t>(schema.size()));
  for (const auto& [key, type] : schema) {
    w.u8(key.edge ? 1 : 0);
    w.str(key.cls);
    w.str(key.prop);
    w.u8(static_cast<std::uint8_t>(type));
  }
}

Schema get_schema(ByteReader& r) {
  Schema schema;
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    SchemaKey key;
    key.edge = r.u8() != 0;
    key.cls = r.str();
    key.prop = r.str();
    auto t = r.u8();
    if (t > 5) throw Error(Errc::corrupt_data, "unknown schema type");
    schema.emplace(std::move(key), static_cast<PropertyType>(t));
  }
  return schema;
}

void put_index_keys(ByteWriter& w, const std::set<IndexKey>& keys) {
  w.u32(static_cast<std::uint32_t>(keys.size()));
  for (const auto& k : keys) {
    w.str(k.cls);
    w.str(k.prop);
  }
}

std::set<IndexKey> get_index_keys(ByteReader& r) {
  std::set<IndexKey> keys;
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    IndexKey k;
    k.cls = r.str();
    k.prop = r.str();
    keys.insert(std::move(k));
  }
  return keys;
}

Bytes encode_commit(std::uint64_t ts, const ChangeSet& cs) {
  ByteWriter w;
  w.u8(kWalCommit);
  w.u64(ts);
  w.u64(cs.next_node);
  w.u64(cs.next_edge);
  put_schema(w, cs.schema);
  put_index_keys(w, cs.indexes);
  w.u32(static_cast<std::uint32_t>(cs.node_puts.size()));
  for (const auto& n : cs.node_puts) put_node(w, *n);
  w.u32(static_cast<std::uint32_t>(cs.node_dels.size()));
  for (auto id : cs.node_dels) w.u64(id);
  w.u32(static_cast<std::uint32_t>(cs.edge_puts.size()));
  for (const auto& e : cs.edge_puts) put_edge(w, *e);
  w.u32(static_cast<std::uint32_t>(cs.edge_dels.size()));
  for (auto id : cs.edge_dels) w.u64(id);
  return w.take();
}

ChangeSet decode_commit(ByteView payload, std::uint64_t& ts) {
  ByteReader r(payload);
  if (r.u8() != kWalCommit) throw Error(Errc::corrupt_data, "unknown WAL record kind");
  ChangeSet cs;
  ts = r.u64();
  cs.next_node = r.u64();
  cs.next_edge = r.u64();
  cs.schema = get_schema(r);
  cs.indexes = get_index_keys(r);
  for (auto n = r.u32(); n > 0; --n) cs.node_puts.push_back(get_node_record(r));
  for (auto n = r.u32(); n > 0; --n) cs.node_dels.push_back(r.u64());
  for (auto n = r.u32(); n > 0; --n) cs.edge_puts.push_back(get_edge_record(r));
  for (auto n = r.u32(); n > 0; --n) cs.edge_dels.push_back(r.u64());
  if (!r.done()) throw Error(Errc::corrupt_data, "trailing bytes in WAL record");
  return cs;
}

std::string dump_lines(const std::vector<std::shared_ptr<const Node>>& nodes,
                       const std::vector<std::shared_ptr<const Edge>>& edges) {
  std::ostringstream out;
  auto props = [&](const Properties& p) {
    out << '{';
    bool first = true;
    for (const auto& [k, v] : p) {
      if (!first) out << ", ";
      first = false;
      out << k << '=' << render(v);
    }
    out << '}';
  };
  for (const auto& n : nodes) {
    out << "N " << n->id << ' ' << n->cls << ' ';
    props(n->properties);
    out << '\n';
  }
  for (const auto& e : edges) {
    out << "E " << e->id << ' ' << e->cls << ' ' << e->src << "->" << e->dst << ' ';
    props(e->properties);
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

class GraphCore {
 public:
  GraphCore(std::filesystem::path dir, GraphOptions options) : dir_(std::move(dir)), options_(options) {}
  ~GraphCore() {
    if (wal_fd_ >= 0) ::close(wal_fd_);
  }

  void recover();
  void ensure_open() const {
    if (!open_.load()) throw Error(Errc::store_closed, "graph store is closed");
  }

  std::uint64_t register_reader() {
    std::shared_lock lock(state_mu_);
    ensure_open();
    std::lock_guard guard(active_mu_);
    active_.insert(committed_ts_);
    return committed_ts_;
  }
  void unregister_reader(std::uint64_t ts) {
    std::lock_guard guard(active_mu_);
    if (auto it = active_.find(ts); it != active_.end()) active_.erase(it);
  }

  void commit(std::uint64_t start_ts, ChangeSet& cs, const std::set<NodeId>& created_nodes,
              const std::set<EdgeId>& created_edges);
  void checkpoint();
  void close();

  std::uint64_t take_node_id() { return next_node_.fetch_add(1); }
  std::uint64_t take_edge_id() { return next_edge_.fetch_add(1); }
  std::uint64_t take_txn_id() { return next_txn_.fetch_add(1); }

  // Reads below require state_mu_ held (shared or exclusive).
  std::shared_ptr<const Node> node_at(NodeId id, std::uint64_t ts) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : it->second.at(ts);
  }
  std::shared_ptr<const Edge> edge_at(EdgeId id, std::uint64_t ts) const {
    auto it = edges_.find(id);
    return it == edges_.end() ? nullptr : it->second.at(ts);
  }
  const std::vector<EdgeId>* adjacency(NodeId id, bool out) const {
    const auto& adj = out ? out_adj_ : in_adj_;
    auto it = adj.find(id);
    return it == adj.end() ? nullptr : &it->second;
  }
  const std::set<NodeId>* members(std::string_view cls) const {
    auto it = class_members_.find(cls);
    return it == class_members_.end() ? nullptr : &it->second;
  }
  std::optional<PropertyType> schema_type(const SchemaKey& key) const {
    auto it = schema_.find(key);
    if (it == schema_.end()) return std::nullopt;
    return it->second;
  }
  const Index* index(std::string_view cls, std::string_view prop) const {
    auto it = indexes_.find(IndexKey{std::string(cls), std::string(prop)});
    return it == indexes_.end() ? nullptr : &it->second;
  }
  template <typename F>
  void for_each_node_id(F&& f) const {
    for (const auto& [id, chain] : nodes_) f(id);
  }
  template <typename F>
  void for_each_edge_id(F&& f) const {
    for (const auto& [id, chain] : edges_) f(id);
  }

  std::shared_mutex& state_mutex() const { return state_mu_; }
  std::uint64_t wal_size() const { return wal_size_.load(); }
  std::uint64_t committed() const {
    std::shared_lock lock(state_mu_);
    return committed_ts_;
  }
  bool is_open() const { return open_.load(); }

 private:
  void apply(const ChangeSet& cs, std::uint64_t ts, std::set<NodeId>* touched_nodes, std::set<EdgeId>* touched_edges);
  void index_insert(const Node& n);
  void build_index(const IndexKey& key);
  void prune(const std::set<NodeId>& nodes, const std::set<EdgeId>& edges);
  void append_wal(const Bytes& payload);
  Bytes encode_snapshot() const;
  void load_snapshot(ByteView data);
  void checkpoint_locked();

  std::filesystem::path dir_;
  GraphOptions options_;

  mutable std::shared_mutex state_mu_;
  std::mutex commit_mu_;
  std::mutex active_mu_;
  std::multiset<std::uint64_t> active_;

  std::unordered_map<NodeId, Chain<Node>> nodes_;
  std::unordered_map<EdgeId, Chain<Edge>> edges_;
  std::map<std::string, std::set<NodeId>, std::less<>> class_members_;
  std::unordered_map<NodeId, std::vector<EdgeId>> out_adj_;
  std::unordered_map<NodeId, std::vector<EdgeId>> in_adj_;
  Schema schema_;
  std::map<IndexKey, Index> indexes_;
  std::uint64_t committed_ts_ = 0;

  std::atomic<std::uint64_t> next_node_{1};
  std::atomic<std::uint64_t> next_edge_{1};
  std::atomic<std::uint64_t> next_txn_{1};
  std::atomic<bool> open_{false};

  int wal_fd_ = -1;
  std::atomic<std::uint64_t> wal_size_{0};
};

void GraphCore::index_insert(const Node& n) {
  for (auto it = indexes_.lower_bound(IndexKey{n.cls, ""}); it != indexes_.end() && it->first.cls == n.cls; ++it) {
    auto p = n.properties.find(it->first.prop);
    if (p != n.properties.end()) it->second[p->second].insert(n.id);
  }
}

void GraphCore::build_index(const IndexKey& key) {
  auto [it, inserted] = indexes_.try_emplace(key);
  if (!inserted) return;
  auto m = class_members_.find(key.cls);
  if (m == class_members_.end()) return;
  for (NodeId id : m->second) {
    auto c = nodes_.find(id);
    if (c == nodes_.end()) continue;
    for (const auto& v : c->second.versions) {
      if (!v.value) continue;
      auto p = v.value->properties.find(key.prop);
      if (p != v.value->properties.end()) it->second[p->second].insert(id);
    }
  }
}

void GraphCore::apply(const ChangeSet& cs, std::uint64_t ts, std::set<NodeId>* touched_nodes,
                      std::set<EdgeId>* touched_edges) {
  for (const auto& [k, t] : cs.schema) schema_.emplace(k, t);

  auto close_head = [ts](auto& chain) {
    if (!chain.versions.empty() && chain.versions.back().end == kForever) chain.versions.back().end = ts;
  };

  for (const auto& n : cs.node_puts) {
    auto& chain = nodes_[n->id];
    close_head(chain);
    chain.versions.push_back({ts, kForever, n});
    class_members_[n->cls].insert(n->id);
    index_insert(*n);
    if (touched_nodes) touched_nodes->insert(n->id);
  }
  for (const auto& e : cs.edge_puts) {
    auto& chain = edges_[e->id];
    if (chain.versions.empty()) {
      out_adj_[e->src].push_back(e->id);
      in_adj_[e->dst].push_back(e->id);
    }
    close_head(chain);
    chain.versions.push_back({ts, kForever, e});
    if (touched_edges) touched_edges->insert(e->id);
  }
  for (EdgeId id : cs.edge_dels) {
    auto it = edges_.find(id);
    if (it == edges_.end()) continue;
    close_head(it->second);
    it->second.versions.push_back({ts, kForever, nullptr});
    if (touched_edges) touched_edges->insert(id);
  }
  for (NodeId id : cs.node_dels) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) continue;
    close_head(it->second);
    it->second.versions.push_back({ts, kForever, nullptr});
    if (touched_nodes) touched_nodes->insert(id);
  }
  for (const auto& key : cs.indexes) build_index(key);

  std::uint64_t nn = next_node_.load();
  while (nn < cs.next_node && !next_node_.compare_exchange_weak(nn, cs.next_node)) {
  }
  std::uint64_t ne = next_edge_.load();
  while (ne < cs.next_edge && !next_edge_.compare_exchange_weak(ne, cs.next_edge)) {
  }
}

// Drops versions no active or future transaction can observe.
void GraphCore::prune(const std::set<NodeId>& nodes, const std::set<EdgeId>& edges) {
  std::uint64_t horizon;
  {
    std::lock_guard guard(active_mu_);
    horizon = active_.empty() ? committed_ts_ : std::min(*active_.begin(), committed_ts_);
  }

  auto unindex = [this](NodeId id, const Node& old, const Chain<Node>* remaining) {
    for (auto it = indexes_.lower_bound(IndexKey{old.cls, ""}); it != indexes_.end() && it->first.cls == old.cls;
         ++it) {
      auto p = old.properties.find(it->first.prop);
      if (p == old.properties.end()) continue;
      bool still_used = false;
      if (remaining) {
        for (const auto& v : remaining->versions) {
          if (!v.value) continue;
          auto q = v.value->properties.find(it->first.prop);
          if (q != v.value->properties.end() && !ValueLess{}(q->second, p->second) &&
              !ValueLess{}(p->second, q->second)) {
            still_used = true;
            break;
          }
        }
      }
      if (still_used) continue;
      auto bucket = it->second.find(p->second);
      if (bucket != it->second.end()) {
        bucket->second.erase(id);
        if (bucket->second.empty()) it->second.erase(bucket);
      }
    }
  };

  for (NodeId id : nodes) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) continue;
    auto& versions = it->second.versions;
    std::vector<std::shared_ptr<const Node>> dropped;
    while (!versions.empty() && versions.front().end <= horizon) {
      if (versions.front().value) dropped.push_back(versions.front().value);
      versions.erase(versions.begin());
    }
    bool gone = versions.size() == 1 && !versions.front().value && versions.front().begin <= horizon;
    if (gone) versions.clear();
    for (const auto& old : dropped) unindex(id, *old, versions.empty() ? nullptr : &it->second);
    if (versions.empty()) {
      if (!dropped.empty()) {
        auto m = class_members_.find(dropped.front()->cls);
        if (m != class_members_.end()) {
          m->second.erase(id);
          if (m->second.empty()) class_members_.erase(m);
        }
      }
      nodes_.erase(it);
      if (auto a = out_adj_.find(id); a != out_adj_.end() && a->second.empty()) out_adj_.erase(a);
      if (auto a = in_adj_.find(id); a != in_adj_.end() && a->second.empty()) in_adj_.erase(a);
    }
  }

  for (EdgeId id : edges) {
    auto it = edges_.find(id);
    if (it == edges_.end()) continue;
    auto& versions = it->second.versions;
    std::shared_ptr<const Edge> last;
    while (!versions.empty() && versions.front().end <= horizon) {
      if (versions.front().value) last = versions.front().value;
      versions.erase(versions.begin());
    }
    if (versions.size() == 1 && !versions.front().value && versions.front().begin <= horizon) versions.clear();
    if (versions.empty() && last) {
      auto drop = [id](std::unordered_map<NodeId, std::vector<EdgeId>>& adj, NodeId n) {
        auto a = adj.find(n);
        if (a == adj.end()) return;
        std::erase(a->second, id);
        if (a->second.empty()) adj.erase(a);
      };
      drop(out_adj_, last->src);
      drop(in_adj_, last->dst);
      edges_.erase(it);
    }
  }
}

void GraphCore::append_wal(const Bytes& payload) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.u32(crc32(payload));
  w.raw(payload);
  const Bytes& rec = w.bytes();
  std::size_t off = 0;
  while (off < rec.size()) {
    ssize_t n = ::write(wal_fd_, rec.data() + off, rec.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      if (::ftruncate(wal_fd_, static_cast<off_t>(wal_size_.load())) != 0) {
      }
      throw Error(Errc::io_error, std::string("WAL append failed: ") + std::strerror(err));
    }
    off += static_cast<std::size_t>(n);
  }
  if (options_.sync && ::fdatasync(wal_fd_) != 0)
    throw Error(Errc::io_error, std::string("WAL sync failed: ") + std::strerror(errno));
  wal_size_ += rec.size();
}

void GraphCore::commit(std::uint64_t start_ts, ChangeSet& cs, const std::set<NodeId>& created_nodes,
                       const std::set<EdgeId>& created_edges) {
  std::lock_guard commit_lock(commit_mu_);
  ensure_open();
  {
    std::shared_lock lock(state_mu_);
    auto stale = [start_ts](const auto& map, std::uint64_t id) {
      auto it = map.find(id);
      return it == map.end() || it->second.last_write() > start_ts;
    };
    auto conflict = [](const std::string& what) { throw Error(Errc::conflict, what); };

    for (const auto& n : cs.node_puts)
      if (!created_nodes.contains(n->id) && stale(nodes_, n->id))
        conflict("node " + std::to_string(n->id) + " was modified by a concurrent transaction");
    for (NodeId id : cs.node_dels)
      if (stale(nodes_, id)) conflict("node " + std::to_string(id) + " was modified by a concurrent transaction");
    for (const auto& e : cs.edge_puts)
      if (!created_edges.contains(e->id) && stale(edges_, e->id))
        conflict("edge " + std::to_string(e->id) + " was modified by a concurrent transaction");
    for (EdgeId id : cs.edge_dels)
      if (stale(edges_, id)) conflict("edge " + std::to_string(id) + " was modified by a concurrent transaction");

    std::set<NodeId> deleted(cs.node_dels.begin(), cs.node_dels.end());
    std::set<NodeId> put;
    for (const auto& n : cs.node_puts) put.insert(n->id);
    auto live = [&](NodeId id) {
      if (deleted.contains(id)) return false;
      if (put.contains(id)) return true;
      auto it = nodes_.find(id);
      return it != nodes_.end() && it->second.head() != nullptr;
    };
    for (const auto& e : cs.edge_puts)
      if (created_edges.contains(e->id) && (!live(e->src) || !live(e->dst)))
        conflict("edge endpoint removed by a concurrent transaction");

    std::set<EdgeId> edge_dels(cs.edge_dels.begin(), cs.edge_dels.end());
    for (NodeId id : cs.node_dels) {
      for (bool out : {true, false}) {
        const auto& adj = out ? out_adj_ : in_adj_;
        auto a = adj.find(id);
        if (a == adj.end()) continue;
        for (EdgeId e : a->second) {
          auto c = edges_.find(e);
          if (c != edges_.end() && c->second.head() && !edge_dels.contains(e))
            conflict("edge attached to removed node " + std::to_string(id) + " by a concurrent transaction");
        }
      }
    }
    for (const auto& [k, t] : cs.schema) {
      auto it = schema_.find(k);
      if (it != schema_.end() && it->second != t)
        conflict("property '" + k.prop + "' of class '" + k.cls + "' was concurrently fixed to type " +
                 std::string(type_name(it->second)));
    }
  }

  cs.next_node = next_node_.load();
  cs.next_edge = next_edge_.load();
  std::uint64_t ts = committed_ts_ + 1;
  append_wal(encode_commit(ts, cs));

  std::set<NodeId> touched_nodes;
  std::set<EdgeId> touched_edges;
  {
    std::unique_lock lock(state_mu_);
    apply(cs, ts, &touched_nodes, &touched_edges);
    committed_ts_ = ts;
    prune(touched_nodes, touched_edges);
  }
  if (wal_size_.load() >= options_.checkpoint_bytes) checkpoint_locked();
}

Bytes GraphCore::encode_snapshot() const {
  ByteWriter w;
  w.raw(ByteView(reinterpret_cast<const std::uint8_t*>(kSnapshotMagic), 4));
  w.u16(kSnapshotVersion);
  w.u64(committed_ts_);
  w.u64(next_node_.load());
  w.u64(next_edge_.load());
  put_schema(w, schema_);
  std::set<IndexKey> keys;
  for (const auto& [k, idx] : indexes_) keys.insert(k);
  put_index_keys(w, keys);

  std::vector<std::shared_ptr<const Node>> nodes;
  for (const auto& [id, chain] : nodes_)
    if (auto n = chain.head()) nodes.push_back(n);
  std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  w.u64(nodes.size());
  for (const auto& n : nodes) put_node(w, *n);

  std::vector<std::shared_ptr<const Edge>> edges;
  for (const auto& [id, chain] : edges_)
    if (auto e = chain.head()) edges.push_back(e);
  std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  w.u64(edges.size());
  for (const auto& e : edges) put_edge(w, *e);

  w.u32(crc32(w.bytes()));
  return w.take();
}

void GraphCore::load_snapshot(ByteView data) {
  if (data.size() < 10 || std::memcmp(data.data(), kSnapshotMagic, 4) != 0)
    throw Error(Errc::corrupt_data, "graph.snapshot: bad magic");
  auto body = data.first(data.size() - 4);
  ByteReader tail(data.last(4));
  if (tail.u32() != crc32(body)) throw Error(Errc::corrupt_data, "graph.snapshot: checksum mismatch");
  ByteReader r(body);
  r.raw(4);
  if (auto v = r.u16(); v != kSnapshotVersion)
    throw Error(Errc::corrupt_data, "graph.snapshot: unsupported version " + std::to_string(v));
  ChangeSet cs;
  std::uint64_t ts = r.u64();
  cs.next_node = r.u64();
  cs.next_edge = r.u64();
  cs.schema = get_schema(r);
  cs.indexes = get_index_keys(r);
  for (auto n = r.u64(); n > 0; --n) cs.node_puts.push_back(get_node_record(r));
  for (auto n = r.u64(); n > 0; --n) cs.edge_puts.push_back(get_edge_record(r));
  apply(cs, ts, nullptr, nullptr);
  committed_ts_ = ts;
}

void GraphCore::recover() {
  std::filesystem::create_directories(dir_);
  auto snap = dir_ / "graph.snapshot";
  if (std::filesystem::exists(snap)) load_snapshot(read_file(snap));

  auto wal_path = dir_ / "graph.wal";
  std::uint64_t valid = 0;
  if (std::filesystem::exists(wal_path)) {
    Bytes wal = read_file(wal_path);
    ByteView all(wal);
    while (all.size() - valid >= 8) {
      ByteReader h(all.subspan(valid, 8));
      std::uint32_t len = h.u32();
      std::uint32_t crc = h.u32();
      if (all.size() - valid - 8 < len) break;
      auto payload = all.subspan(valid + 8, len);
      if (crc32(payload) != crc) break;
      std::uint64_t ts = 0;
      ChangeSet cs;
      try {
        cs = decode_commit(payload, ts);
      } catch (const Error&) {
        break;
      }
      if (ts > committed_ts_) {
        apply(cs, ts, nullptr, nullptr);
        committed_ts_ = ts;
      }
      valid += 8 + len;
    }
  }
  wal_fd_ = ::open(wal_path.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (wal_fd_ < 0) throw Error(Errc::io_error, "cannot open " + wal_path.string() + ": " + std::strerror(errno));
  // Drop a torn tail left by a crash mid-append.
  if (::ftruncate(wal_fd_, static_cast<off_t>(valid)) != 0 || ::lseek(wal_fd_, 0, SEEK_END) < 0)
    throw Error(Errc::io_error, "cannot truncate " + wal_path.string());
  wal_size_ = valid;
  open_ = true;
}

void GraphCore::checkpoint_locked() {
  Bytes snap;
  {
    std::shared_lock lock(state_mu_);
    snap = encode_snapshot();
  }
  write_file_atomic(dir_ / "graph.snapshot", snap);
  if (::ftruncate(wal_fd_, 0) != 0 || ::lseek(wal_fd_, 0, SEEK_SET) < 0)
    throw Error(Errc::io_error, "cannot truncate graph.wal");
  if (options_.sync) ::fdatasync(wal_fd_);
  wal_size_ = 0;
}

void GraphCore::checkpoint() {
  std::lock_guard commit_lock(commit_mu_);
  ensure_open();
  checkpoint_locked();
}

void GraphCore::close() {
  std::lock_guard commit_lock(commit_mu_);
  if (!open_.load()) return;
  checkpoint_locked();
  open_ = false;
  ::close(wal_fd_);
  wal_fd_ = -1;
}

// ---------------------------------------------------------------------------

class TxnState {
 public:
  TxnState(std::shared_ptr<GraphCore> core, TxnMode mode)
      : core_(std::move(core)), mode_(mode), id_(core_->take_txn_id()), start_ts_(core_->register_reader()) {}

  ~TxnState() { finish(); }

  TxnMode mode() const { return mode_; }
  std::uint64_t id() const { return id_; }
  bool is_open() const { return open_; }

  void finish() {
    if (!open_) return;
    open_ = false;
    core_->unregister_reader(start_ts_);
  }

  void require_open() const {
    if (!open_) throw Error(Errc::validation, "transaction is no longer open");
    core_->ensure_open();
  }
  void require_write() const {
    require_open();
    if (mode_ != TxnMode::read_write) throw Error(Errc::validation, "transaction is read-only");
  }

  std::shared_ptr<const Node> node(NodeId id) const {
    if (auto it = node_writes_.find(id); it != node_writes_.end()) return it->second;
    std::shared_lock lock(core_->state_mutex());
    return core_->node_at(id, start_ts_);
  }
  std::shared_ptr<const Edge> edge(EdgeId id) const {
    if (auto it = edge_writes_.find(id); it != edge_writes_.end()) return it->second;
    std::shared_lock lock(core_->state_mutex());
    return core_->edge_at(id, start_ts_);
  }

  std::optional<PropertyType> established(bool edge, std::string_view cls, std::string_view prop) const {
    SchemaKey key{edge, std::string(cls), std::string(prop)};
    if (auto it = schema_pending_.find(key); it != schema_pending_.end()) return it->second;
    std::shared_lock lock(core_->state_mutex());
    return core_->schema_type(key);
  }

  void fix_types(bool edge, std::string_view cls, const Properties& props) {
    for (const auto& [name, value] : props) {
      if (name.empty()) throw Error(Errc::validation, "property name must be non-empty");
      if (auto* d = std::get_if<double>(&value); d && !std::isfinite(*d))
        throw Error(Errc::non_finite_value, "property '" + name + "' is not finite");
      auto t = type_of(value);
      auto have = established(edge, cls, name);
      if (have && *have != t)
        throw Error(Errc::type_conflict, "property '" + name + "' of class '" + std::string(cls) + "' is " +
                                             std::string(type_name(*have)) + ", got " + std::string(type_name(t)));
      if (!have) schema_pending_.emplace(SchemaKey{edge, std::string(cls), name}, t);
    }
  }

  NodeId add_node(std::string_view cls, Properties props) {
    require_write();
    if (cls.empty()) throw Error(Errc::validation, "node class must be non-empty");
    fix_types(false, cls, props);
    auto n = std::make_shared<Node>();
    n->id = core_->take_node_id();
    n->cls = std::string(cls);
    n->properties = std::move(props);
    node_writes_[n->id] = n;
    created_nodes_.insert(n->id);
    return n->id;
  }

  EdgeId add_edge(std::string_view cls, NodeId src, NodeId dst, Properties props) {
    require_write();
    if (cls.empty()) throw Error(Errc::validation, "edge class must be non-empty");
    for (NodeId id : {src, dst})
      if (!node(id)) throw Error(Errc::unknown_node, "node " + std::to_string(id) + " does not exist");
    fix_types(true, cls, props);
    auto e = std::make_shared<Edge>();
    e->id = core_->take_edge_id();
    e->cls = std::string(cls);
    e->src = src;
    e->dst = dst;
    e->properties = std::move(props);
    edge_writes_[e->id] = e;
    created_edges_.insert(e->id);
    return e->id;
  }

  void set_properties(NodeId id, const Properties& props) {
    require_write();
    auto cur = node(id);
    if (!cur) throw Error(Errc::unknown_node, "node " + std::to_string(id) + " does not exist");
    fix_types(false, cur->cls, props);
    auto n = std::make_shared<Node>(*cur);
    for (const auto& [k, v] : props) n->properties.insert_or_assign(k, v);
    node_writes_[id] = n;
  }

  void remove_edge(EdgeId id) {
    require_write();
    if (!edge(id)) throw Error(Errc::unknown_edge, "edge " + std::to_string(id) + " does not exist");
    if (created_edges_.erase(id)) edge_writes_.erase(id);
    else edge_writes_[id] = nullptr;
  }

  void remove_node(NodeId id) {
    require_write();
    if (!node(id)) throw Error(Errc::unknown_node, "node " + std::to_string(id) + " does not exist");
    for (const auto& e : incident(id, Direction::any)) remove_edge(e->id);
    if (created_nodes_.erase(id)) node_writes_.erase(id);
    else node_writes_[id] = nullptr;
  }

  std::vector<std::shared_ptr<const Edge>> incident(NodeId id, Direction dir) const {
    std::set<EdgeId> ids;
    {
      std::shared_lock lock(core_->state_mutex());
      for (bool out : {true, false}) {
        if (out && dir == Direction::in) continue;
        if (!out && dir == Direction::out) continue;
        if (const auto* adj = core_->adjacency(id, out))
          for (EdgeId e : *adj)
            if (!edge_writes_.contains(e) && core_->edge_at(e, start_ts_)) ids.insert(e);
      }
    }
    for (const auto& [eid, e] : edge_writes_) {
      if (!e) continue;
      bool out = e->src == id, in = e->dst == id;
      if ((dir == Direction::out && out) || (dir == Direction::in && in) || (dir == Direction::any && (out || in)))
        ids.insert(eid);
    }
    std::vector<std::shared_ptr<const Edge>> result;
    result.reserve(ids.size());
    for (EdgeId e : ids)
      if (auto p = edge(e)) result.push_back(std::move(p));
    return result;
  }

  void check_constraints(std::string_view cls, std::span<const Constraint> cs) const {
    for (const auto& c : cs) {
      if (c.property.empty()) throw Error(Errc::validation, "constraint property must be non-empty");
      check_constraint(c, cls.empty() ? std::nullopt : established(false, cls, c.property));
    }
  }

  static bool matches(const Node& n, std::span<const Constraint> cs) {
    for (const auto& c : cs) {
      auto p = n.properties.find(c.property);
      if (p == n.properties.end() || !satisfies(p->second, c.op, c.comparand)) return false;
    }
    return true;
  }

  // Index choice; state_mu_ must be held. Returns the candidate set or
  // nullopt for a class scan.
  std::optional<std::set<NodeId>> index_candidates(std::string_view cls, std::span<const Constraint> cs,
                                                   std::string* chosen) const {
    for (const auto& c : cs) {
      if (c.op == CompareOp::ne) continue;
      const Index* idx = core_->index(cls, c.property);
      if (!idx) continue;
      auto have = core_->schema_type(SchemaKey{false, std::string(cls), c.property});
      PropertyValue key = c.comparand;
      if (have && *have != type_of(key)) {
        if (*have == PropertyType::real && type_of(key) == PropertyType::integer)
          key = static_cast<double>(std::get<std::int64_t>(key));
        else
          continue;
      }
      if (!have) return std::set<NodeId>{};
      if (chosen) *chosen = std::string(cls) + "." + c.property;
      auto first = idx->begin(), last = idx->end();
      switch (c.op) {
        case CompareOp::eq: std::tie(first, last) = idx->equal_range(key); break;
        case CompareOp::gt: first = idx->upper_bound(key); break;
        case CompareOp::ge: first = idx->lower_bound(key); break;
        case CompareOp::lt: last = idx->lower_bound(key); break;
        case CompareOp::le: last = idx->upper_bound(key); break;
        case CompareOp::ne: break;
      }
      std::set<NodeId> out;
      for (auto it = first; it != last; ++it) out.insert(it->second.begin(), it->second.end());
      return out;
    }
    return std::nullopt;
  }

  std::vector<std::shared_ptr<const Node>> find(std::string_view cls, std::span<const Constraint> cs,
                                                bool allow_index) const {
    require_open();
    check_constraints(cls, cs);
    std::vector<std::shared_ptr<const Node>> out;
    {
      std::shared_lock lock(core_->state_mutex());
      std::optional<std::set<NodeId>> candidates;
      if (allow_index) candidates = index_candidates(cls, cs, nullptr);
      auto consider = [&](NodeId id) {
        if (node_writes_.contains(id)) return;
        auto n = core_->node_at(id, start_ts_);
        if (n && n->cls == cls && matches(*n, cs)) out.push_back(std::move(n));
      };
      if (candidates) {
        for (NodeId id : *candidates) consider(id);
      } else if (const auto* m = core_->members(cls)) {
        for (NodeId id : *m) consider(id);
      }
    }
    for (const auto& [id, n] : node_writes_)
      if (n && n->cls == cls && matches(*n, cs)) out.push_back(n);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
    return out;
  }

  std::optional<std::string> planned_index(std::string_view cls, std::span<const Constraint> cs) const {
    require_open();
    std::shared_lock lock(core_->state_mutex());
    std::string chosen;
    if (index_candidates(cls, cs, &chosen)) return chosen.empty() ? std::nullopt : std::optional(chosen);
    return std::nullopt;
  }

  std::vector<std::shared_ptr<const Node>> neighbors(std::span<const NodeId> start, const NeighborQuery& q) const {
    require_open();
    if (q.target_class) check_constraints(*q.target_class, q.constraints);
    else check_constraints("", q.constraints);
    std::set<NodeId> reached;
    for (NodeId s : start) {
      for (const auto& e : incident(s, q.direction)) {
        if (q.edge_class && e->cls != *q.edge_class) continue;
        if (q.direction == Direction::out) reached.insert(e->dst);
        else if (q.direction == Direction::in) reached.insert(e->src);
        else reached.insert(e->src == s ? e->dst : e->src);
      }
    }
    std::vector<std::shared_ptr<const Node>> out;
    for (NodeId id : reached) {
      auto n = node(id);
      if (!n) continue;
      if (q.target_class && n->cls != *q.target_class) continue;
      if (!matches(*n, q.constraints)) continue;
      out.push_back(std::move(n));
    }
    return out;
  }

  void create_index(std::string_view cls, std::string_view prop) {
    require_write();
    if (cls.empty() || prop.empty()) throw Error(Errc::validation, "index needs a class and a property");
    index_pending_.insert(IndexKey{std::string(cls), std::string(prop)});
  }

  std::string dump() const {
    require_open();
    std::vector<std::shared_ptr<const Node>> nodes;
    std::vector<std::shared_ptr<const Edge>> edges;
    {
      std::shared_lock lock(core_->state_mutex());
      core_->for_each_node_id([&](NodeId id) {
        if (node_writes_.contains(id)) return;
        if (auto n = core_->node_at(id, start_ts_)) nodes.push_back(std::move(n));
      });
      core_->for_each_edge_id([&](EdgeId id) {
        if (edge_writes_.contains(id)) return;
        if (auto e = core_->edge_at(id, start_ts_)) edges.push_back(std::move(e));
      });
    }
    for (const auto& [id, n] : node_writes_)
      if (n) nodes.push_back(n);
    for (const auto& [id, e] : edge_writes_)
      if (e) edges.push_back(e);
    std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
    std::sort(edges.begin(), edges.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
    return dump_lines(nodes, edges);
  }

  void commit() {
    require_open();
    bool empty = node_writes_.empty() && edge_writes_.empty() && schema_pending_.empty() && index_pending_.empty();
    if (mode_ == TxnMode::read_write && !empty) {
      ChangeSet cs;
      cs.schema = schema_pending_;
      cs.indexes = index_pending_;
      for (const auto& [id, n] : node_writes_) {
        if (n) cs.node_puts.push_back(n);
        else cs.node_dels.push_back(id);
      }
      for (const auto& [id, e] : edge_writes_) {
        if (e) cs.edge_puts.push_back(e);
        else cs.edge_dels.push_back(id);
      }
      try {
        core_->commit(start_ts_, cs, created_nodes_, created_edges_);
      } catch (...) {
        discard();
        throw;
      }
    }
    discard();
  }

  void discard() {
    node_writes_.clear();
    edge_writes_.clear();
    created_nodes_.clear();
    created_edges_.clear();
    schema_pending_.clear();
    index_pending_.clear();
    finish();
  }

 private:
  std::shared_ptr<GraphCore> core_;
  TxnMode mode_;
  std::uint64_t id_;
  std::uint64_t start_ts_;
  bool open_ = true;

  std::map<NodeId, std::shared_ptr<const Node>> node_writes_;  // null: removed
  std::set<NodeId> created_nodes_;
  std::map<EdgeId, std::shared_ptr<const Edge>> edge_writes_;
  std::set<EdgeId> created_edges_;
  Schema schema_pending_;
  std::set<IndexKey> index_pending_;
};

}  // namespace detail

// ---------------------------------------------------------------------------

namespace {

Node project(const Node& n, const ResultSpec& spec) {
  if (!spec.properties) return n;
  Node out{n.id, n.cls, {}};
  for (const auto& name : *spec.properties)
    if (auto it = n.properties.find(name); it != n.properties.end()) out.properties.emplace(name, it->second);
  return out;
}

std::vector<Node> shape(std::vector<std::shared_ptr<const Node>> nodes, const ResultSpec& spec) {
  if (spec.sort) {
    const auto& key = spec.sort->property;
    bool desc = spec.sort->descending;
    std::stable_sort(nodes.begin(), nodes.end(), [&](const auto& a, const auto& b) {
      auto pa = a->properties.find(key);
      auto pb = b->properties.find(key);
      bool ha = pa != a->properties.end(), hb = pb != b->properties.end();
      if (ha != hb) return ha;
      if (!ha) return false;
      if (satisfies(pa->second, CompareOp::lt, pb->second)) return !desc;
      if (satisfies(pa->second, CompareOp::gt, pb->second)) return desc;
      return false;
    });
  }
  std::size_t n = spec.limit ? std::min(*spec.limit, nodes.size()) : nodes.size();
  std::vector<Node> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(project(*nodes[i], spec));
  return out;
}

}  // namespace

Transaction::Transaction(std::unique_ptr<detail::TxnState> state) : state_(std::move(state)) {}
Transaction::Transaction(Transaction&&) noexcept = default;
Transaction& Transaction::operator=(Transaction&&) noexcept = default;
Transaction::~Transaction() = default;

TxnMode Transaction::mode() const noexcept { return state_->mode(); }
std::uint64_t Transaction::id() const noexcept { return state_->id(); }
bool Transaction::is_open() const noexcept { return state_ && state_->is_open(); }

NodeId Transaction::add_node(std::string_view cls, Properties properties) {
  return state_->add_node(cls, std::move(properties));
}
EdgeId Transaction::add_edge(std::string_view cls, NodeId src, NodeId dst, Properties properties) {
  return state_->add_edge(cls, src, dst, std::move(properties));
}
void Transaction::set_properties(NodeId node, const Properties& properties) {
  state_->set_properties(node, properties);
}
void Transaction::remove_node(NodeId node) { state_->remove_node(node); }
void Transaction::remove_edge(EdgeId edge) { state_->remove_edge(edge); }

std::optional<Node> Transaction::get_node(NodeId node) const {
  state_->require_open();
  if (auto n = state_->node(node)) return *n;
  return std::nullopt;
}
std::optional<Edge> Transaction::get_edge(EdgeId edge) const {
  state_->require_open();
  if (auto e = state_->edge(edge)) return *e;
  return std::nullopt;
}

std::vector<Node> Transaction::find_nodes(std::string_view cls, std::span<const Constraint> constraints,
                                          const ResultSpec& spec) const {
  return shape(state_->find(cls, constraints, spec.allow_index), spec);
}

std::size_t Transaction::count_nodes(std::string_view cls, std::span<const Constraint> constraints) const {
  return state_->find(cls, constraints, true).size();
}

std::vector<Node> Transaction::neighbors(std::span<const NodeId> start, const NeighborQuery& query,
                                         const ResultSpec& spec) const {
  return shape(state_->neighbors(start, query), spec);
}

std::vector<Edge> Transaction::incident_edges(NodeId node, Direction direction) const {
  state_->require_open();
  std::vector<Edge> out;
  for (const auto& e : state_->incident(node, direction)) out.push_back(*e);
  return out;
}

void Transaction::create_index(std::string_view cls, std::string_view property) {
  state_->create_index(cls, property);
}

std::optional<std::string> Transaction::planned_index(std::string_view cls,
                                                      std::span<const Constraint> constraints) const {
  return state_->planned_index(cls, constraints);
}

std::optional<PropertyType> Transaction::property_type(std::string_view cls, std::string_view property) const {
  state_->require_open();
  return state_->established(false, cls, property);
}

std::string Transaction::dump() const { return state_->dump(); }

void Transaction::commit() { state_->commit(); }

void Transaction::abort() {
  if (state_) state_->discard();
}

GraphStore::GraphStore(std::shared_ptr<detail::GraphCore> core) : core_(std::move(core)) {}
GraphStore::GraphStore(GraphStore&&) noexcept = default;
GraphStore& GraphStore::operator=(GraphStore&&) noexcept = default;

GraphStore::~GraphStore() {
  if (!core_) return;
  try {
    core_->close();
  } catch (...) {
  }
}

GraphStore GraphStore::open(const std::filesystem::path& dir, GraphOptions options) {
  auto core = std::make_shared<detail::GraphCore>(dir, options);
  core->recover();
  return GraphStore(std::move(core));
}

Transaction GraphStore::begin(TxnMode mode) const {
  if (!core_) throw Error(Errc::store_closed, "graph store is closed");
  return Transaction(std::make_unique<detail::TxnState>(core_, mode));
}

void GraphStore::checkpoint() { core_->checkpoint(); }
void GraphStore::close() { core_->close(); }
bool GraphStore::is_open() const noexcept { return core_ && core_->is_open(); }

std::string GraphStore::dump() const {
  auto txn = begin(TxnMode::read_only);
  return txn.dump();
}

std::uint64_t GraphStore::wal_bytes() const { return core_->wal_size(); }
std::uint64_t GraphStore::committed_version() const { return core_->committed(); }

}  // namespace visor::graph
