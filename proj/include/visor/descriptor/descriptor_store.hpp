#pragma once

// Feature-vector sets with exact L2 k-nearest-neighbour search.
//
// VDDS set file (one per set, all integers and floats little-endian):
//   magic "VDDS", version u16, dimension u32, count u64, next_id u64,
//   name (u32 length + bytes), then `count` fixed-stride records
//     id u64, node u64 (0 = unlinked), label index u32 (0xFFFFFFFF = none),
//     dimension x f32
//   then the label table: u32 count, (u32 length + bytes) per label.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace visor::descriptor {

using DescriptorId = std::uint64_t;

struct Neighbor {
  DescriptorId id = 0;
  double distance = 0.0;
  std::optional<std::string> label;
  std::optional<std::uint64_t> node;
  bool operator==(const Neighbor&) const = default;
};

namespace detail {
class StoreCore;
class TxnState;
}  // namespace detail

// One session's view of the descriptor sets: committed state as of begin()
// plus this transaction's own additions.
class DescriptorTxn {
 public:
  DescriptorTxn(DescriptorTxn&&) noexcept;
  DescriptorTxn& operator=(DescriptorTxn&&) noexcept;
  ~DescriptorTxn();

  void create_set(std::string_view name, std::uint32_t dimension);
  DescriptorId add(std::string_view set, std::span<const float> vector, std::optional<std::string> label = {},
                   std::optional<std::uint64_t> node = {});

  // min(k, |set|) entries by ascending L2 distance, ties by ascending id.
  std::vector<Neighbor> knn(std::string_view set, std::span<const float> query, std::size_t k) const;
  // Majority label among the k nearest labelled entries; ties go to the
  // smaller summed distance, then the lexicographically smaller label.
  std::string classify(std::string_view set, std::span<const float> query, std::size_t k) const;

  std::optional<std::uint32_t> dimension(std::string_view set) const;
  std::size_t size(std::string_view set) const;
  bool has_changes() const noexcept;

  // Persists new sets and entries; every touched set file is rewritten
  // atomically.
  void commit();
  void abort();

 private:
  friend class DescriptorStore;
  explicit DescriptorTxn(std::unique_ptr<detail::TxnState> state);
  std::unique_ptr<detail::TxnState> state_;
};

class DescriptorStore {
 public:
  static DescriptorStore open(const std::filesystem::path& dir, bool sync = true);

  DescriptorStore(DescriptorStore&&) noexcept;
  DescriptorStore& operator=(DescriptorStore&&) noexcept;
  ~DescriptorStore();

  DescriptorTxn begin() const;
  std::vector<std::string> set_names() const;

 private:
  explicit DescriptorStore(std::shared_ptr<detail::StoreCore> core);
  std::shared_ptr<detail::StoreCore> core_;
};

// Exact search over a dense row-major matrix; the reference kernel used by
// the store.
std::vector<Neighbor> exact_knn(std::span<const float> rows, std::span<const DescriptorId> ids, std::uint32_t dimension,
                                std::span<const float> query, std::size_t k);

}  // namespace visor::descriptor
