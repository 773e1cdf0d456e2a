#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visor/graph/property.hpp"

namespace visor::graph {

using NodeId = std::uint64_t;
using EdgeId = std::uint64_t;

struct Node {
  NodeId id = 0;
  std::string cls;
  Properties properties;
  bool operator==(const Node&) const = default;
};

struct Edge {
  EdgeId id = 0;
  std::string cls;
  NodeId src = 0;
  NodeId dst = 0;
  Properties properties;
  bool operator==(const Edge&) const = default;
};

enum class TxnMode { read_only, read_write };
enum class Direction { out, in, any };

struct SortSpec {
  std::string property;
  bool descending = false;
};

// Shapes a node result list. Nodes lacking the sort property go last, in
// ascending id order.
struct ResultSpec {
  std::optional<std::vector<std::string>> properties;  // projection; nullopt keeps all
  std::optional<SortSpec> sort;
  std::optional<std::size_t> limit;
  bool allow_index = true;
};

struct NeighborQuery {
  std::optional<std::string> edge_class;  // nullopt follows any edge class
  Direction direction = Direction::out;
  std::optional<std::string> target_class;
  std::vector<Constraint> constraints;
};

struct GraphOptions {
  bool sync = true;                              // fdatasync the WAL before acknowledging a commit
  std::uint64_t checkpoint_bytes = 64ull << 20;  // WAL size that triggers a snapshot
};

namespace detail {
class GraphCore;
class TxnState;
}  // namespace detail

class GraphStore;

// A unit of work against the store. Read-only transactions see the committed
// state as of begin(); read-write transactions additionally see their own
// pending changes. Destroying an open transaction aborts it. A Transaction
// may move between threads but must not be used by two threads at once.
class Transaction {
 public:
  Transaction(Transaction&&) noexcept;
  Transaction& operator=(Transaction&&) noexcept;
  ~Transaction();

  TxnMode mode() const noexcept;
  std::uint64_t id() const noexcept;
  bool is_open() const noexcept;

  NodeId add_node(std::string_view cls, Properties properties = {});
  EdgeId add_edge(std::string_view cls, NodeId src, NodeId dst, Properties properties = {});
  // Merges `properties` into the node; new names extend the schema.
  void set_properties(NodeId node, const Properties& properties);
  void remove_node(NodeId node);  // also removes incident edges
  void remove_edge(EdgeId edge);

  std::optional<Node> get_node(NodeId node) const;
  std::optional<Edge> get_edge(EdgeId edge) const;

  std::vector<Node> find_nodes(std::string_view cls, std::span<const Constraint> constraints,
                               const ResultSpec& spec = {}) const;
  std::size_t count_nodes(std::string_view cls, std::span<const Constraint> constraints) const;

  // Set semantics: each reachable node appears once.
  std::vector<Node> neighbors(std::span<const NodeId> start, const NeighborQuery& query,
                              const ResultSpec& spec = {}) const;
  std::vector<Edge> incident_edges(NodeId node, Direction direction) const;

  void create_index(std::string_view cls, std::string_view property);
  // Which index find_nodes would use for these constraints, as
  // "class.property", or nullopt for a class scan.
  std::optional<std::string> planned_index(std::string_view cls, std::span<const Constraint> constraints) const;

  std::optional<PropertyType> property_type(std::string_view cls, std::string_view property) const;

  // Canonical dump of every node and edge visible to this transaction.
  std::string dump() const;

  void commit();
  void abort();

 private:
  friend class GraphStore;
  explicit Transaction(std::unique_ptr<detail::TxnState> state);
  std::unique_ptr<detail::TxnState> state_;
};

// Embedded property-graph store persisted as a snapshot plus write-ahead log
// under one directory. Thread-safe: many concurrent readers, one committer
// at a time.
class GraphStore {
 public:
  static GraphStore open(const std::filesystem::path& dir, GraphOptions options = {});

  GraphStore(GraphStore&&) noexcept;
  GraphStore& operator=(GraphStore&&) noexcept;
  ~GraphStore();

  Transaction begin(TxnMode mode) const;

  // Writes a snapshot and truncates the WAL.
  void checkpoint();
  // Checkpoints and rejects further work with Errc::store_closed.
  void close();
  bool is_open() const noexcept;

  std::string dump() const;
  std::uint64_t wal_bytes() const;
  std::uint64_t committed_version() const;

 private:
  explicit GraphStore(std::shared_ptr<detail::GraphCore> core);
  std::shared_ptr<detail::GraphCore> core_;
};

}  // namespace visor::graph
