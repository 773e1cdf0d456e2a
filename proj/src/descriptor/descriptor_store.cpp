#include "visor/descriptor/descriptor_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <shared_mutex>
#include <tuple>

#include "visor/common/bytes.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"

namespace visor::descriptor {

std::vector<Neighbor> exact_knn(std::span<const float> rows, std::span<const DescriptorId> ids, std::uint32_t dimension,
                                std::span<const float> query, std::size_t k) {
  const std::size_t n = ids.size();
  std::vector<std::pair<double, std::size_t>> scored(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = rows.data() + i * dimension;
    double acc = 0.0;
    for (std::uint32_t j = 0; j < dimension; ++j) {
      double d = static_cast<double>(row[j]) - static_cast<double>(query[j]);
      acc += d * d;
    }
    scored[i] = {acc, i};
  }
  const std::size_t take = std::min(k, n);
  auto less = [&](const auto& a, const auto& b) { return std::tie(a.first, ids[a.second]) < std::tie(b.first, ids[b.second]); };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), less);
  std::vector<Neighbor> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = {ids[scored[i].second], std::sqrt(scored[i].first), {}, {}};
  return out;
}

namespace detail {
namespace {

constexpr std::uint16_t kSetVersion = 1;
constexpr std::uint32_t kNoLabel = 0xFFFFFFFFu;

std::string hex_name(std::string_view name) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : name) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 0xF]);
  }
  return out + ".vdds";
}

void check_vector(std::uint32_t dim, std::span<const float> v) {
  if (v.size() != dim)
    throw Error(Errc::dimension_mismatch,
                "vector has " + std::to_string(v.size()) + " components, set dimension is " + std::to_string(dim));
  for (float x : v)
    if (!std::isfinite(x)) throw Error(Errc::non_finite_value, "vector contains a non-finite component");
}

}  // namespace

struct Entry {
  DescriptorId id = 0;
  std::vector<float> vector;
  std::optional<std::string> label;
  std::optional<std::uint64_t> node;
};

struct SetData {
  std::string name;
  std::uint32_t dim = 0;
  std::uint64_t created_seq = 0;
  std::uint64_t next_id = 1;  // guarded by StoreCore::id_mu_

  std::vector<float> data;  // row-major, dim floats per entry
  std::vector<DescriptorId> ids;
  std::vector<std::uint64_t> seqs;  // commit sequence per entry, non-decreasing
  std::vector<std::uint32_t> label_index;
  std::vector<std::uint64_t> nodes;  // 0 = unlinked
  std::vector<std::string> labels;
  std::map<std::string, std::uint32_t, std::less<>> label_lookup;

  std::size_t visible(std::uint64_t seq) const {
    return static_cast<std::size_t>(std::upper_bound(seqs.begin(), seqs.end(), seq) - seqs.begin());
  }

  void append(const Entry& e, std::uint64_t seq) {
    data.insert(data.end(), e.vector.begin(), e.vector.end());
    ids.push_back(e.id);
    seqs.push_back(seq);
    nodes.push_back(e.node.value_or(0));
    if (e.label) {
      auto [it, inserted] = label_lookup.try_emplace(*e.label, static_cast<std::uint32_t>(labels.size()));
      if (inserted) labels.push_back(*e.label);
      label_index.push_back(it->second);
    } else {
      label_index.push_back(kNoLabel);
    }
  }

  Neighbor neighbor(std::size_t row, double distance) const {
    Neighbor n{ids[row], distance, {}, {}};
    if (label_index[row] != kNoLabel) n.label = labels[label_index[row]];
    if (nodes[row] != 0) n.node = nodes[row];
    return n;
  }
};

Bytes encode_set(const SetData& s, std::size_t count, std::span<const Entry> extra, std::uint64_t next_id) {
  // Labels are renumbered so the table only holds labels in use.
  std::vector<std::string> table;
  std::map<std::string, std::uint32_t, std::less<>> index;
  auto label_ref = [&](const std::optional<std::string>& l) -> std::uint32_t {
    if (!l) return kNoLabel;
    auto [it, inserted] = index.try_emplace(*l, static_cast<std::uint32_t>(table.size()));
    if (inserted) table.push_back(*l);
    return it->second;
  };
  ByteWriter w;
  w.raw(std::string_view("VDDS"));
  w.u16(kSetVersion);
  w.u32(s.dim);
  w.u64(count + extra.size());
  w.u64(next_id);
  w.str(s.name);
  for (std::size_t i = 0; i < count; ++i) {
    w.u64(s.ids[i]);
    w.u64(s.nodes[i]);
    w.u32(label_ref(s.label_index[i] == kNoLabel ? std::nullopt : std::optional(s.labels[s.label_index[i]])));
    for (std::uint32_t j = 0; j < s.dim; ++j) w.f32(s.data[i * s.dim + j]);
  }
  for (const auto& e : extra) {
    w.u64(e.id);
    w.u64(e.node.value_or(0));
    w.u32(label_ref(e.label));
    for (float x : e.vector) w.f32(x);
  }
  w.u32(static_cast<std::uint32_t>(table.size()));
  for (const auto& l : table) w.str(l);
  return w.take();
}

std::unique_ptr<SetData> decode_set(ByteView bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "VDDS", 4) != 0)
    throw Error(Errc::corrupt_data, "descriptor set: bad magic");
  ByteReader r(bytes);
  r.raw(4);
  if (r.u16() != kSetVersion) throw Error(Errc::corrupt_data, "descriptor set: unsupported version");
  auto s = std::make_unique<SetData>();
  s->dim = r.u32();
  std::uint64_t count = r.u64();
  s->next_id = r.u64();
  s->name = r.str();
  if (s->dim == 0) throw Error(Errc::corrupt_data, "descriptor set: zero dimension");
  const std::uint64_t stride = 20 + 4ull * s->dim;
  if (count > r.remaining() / stride) throw Error(Errc::corrupt_data, "descriptor set: truncated records");
  std::vector<std::uint32_t> raw_labels(count);
  s->data.reserve(count * s->dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    s->ids.push_back(r.u64());
    s->nodes.push_back(r.u64());
    raw_labels[i] = r.u32();
    for (std::uint32_t j = 0; j < s->dim; ++j) s->data.push_back(r.f32());
    s->seqs.push_back(0);
  }
  std::uint32_t n_labels = r.u32();
  for (std::uint32_t i = 0; i < n_labels; ++i) {
    s->labels.push_back(r.str());
    s->label_lookup.emplace(s->labels.back(), i);
  }
  for (auto l : raw_labels) {
    if (l != kNoLabel && l >= n_labels) throw Error(Errc::corrupt_data, "descriptor set: bad label index");
    s->label_index.push_back(l);
  }
  return s;
}

class StoreCore {
 public:
  StoreCore(std::filesystem::path dir, bool sync) : dir_(std::move(dir)), sync_(sync) {}

  void load() {
    std::filesystem::create_directories(dir_);
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
      if (entry.path().extension() != ".vdds") continue;
      auto set = decode_set(read_file(entry.path()));
      std::string name = set->name;
      sets_.emplace(std::move(name), std::move(set));
    }
  }

  std::uint64_t snapshot() const {
    std::shared_lock lock(mu_);
    return committed_seq_;
  }

  std::shared_mutex& mutex() const { return mu_; }

  // Requires mu_ held.
  const SetData* find(std::string_view name, std::uint64_t seq) const {
    auto it = sets_.find(name);
    if (it == sets_.end() || it->second->created_seq > seq) return nullptr;
    return it->second.get();
  }

  DescriptorId take_id(std::string_view name) {
    std::shared_lock lock(mu_);
    std::lock_guard guard(id_mu_);
    return sets_.find(name)->second->next_id++;
  }

  struct PendingSet {
    std::uint32_t dim = 0;
    std::uint64_t next_id = 1;
    std::vector<Entry> entries;
  };

  void commit(const std::map<std::string, PendingSet, std::less<>>& created,
              const std::map<std::string, std::vector<Entry>, std::less<>>& added) {
    std::lock_guard commit_lock(commit_mu_);
    std::vector<std::pair<std::string, Bytes>> files;
    {
      std::shared_lock lock(mu_);
      for (const auto& [name, p] : created)
        if (sets_.contains(name)) throw Error(Errc::duplicate_name, "descriptor set '" + name + "' already exists");
      for (const auto& [name, p] : created) {
        SetData shell;
        shell.name = name;
        shell.dim = p.dim;
        files.emplace_back(name, encode_set(shell, 0, p.entries, p.next_id));
      }
      for (const auto& [name, entries] : added) {
        const auto& s = *sets_.at(name);
        std::uint64_t next;
        {
          std::lock_guard guard(id_mu_);
          next = s.next_id;
        }
        files.emplace_back(name, encode_set(s, s.ids.size(), entries, next));
      }
    }
    for (const auto& [name, bytes] : files) write_file_atomic(dir_ / hex_name(name), bytes, sync_);

    std::unique_lock lock(mu_);
    std::uint64_t seq = committed_seq_ + 1;
    for (const auto& [name, p] : created) {
      auto s = std::make_unique<SetData>();
      s->name = name;
      s->dim = p.dim;
      s->created_seq = seq;
      s->next_id = p.next_id;
      for (const auto& e : p.entries) s->append(e, seq);
      sets_.emplace(name, std::move(s));
    }
    for (const auto& [name, entries] : added) {
      auto& s = *sets_.at(name);
      for (const auto& e : entries) s.append(e, seq);
    }
    committed_seq_ = seq;
  }

  std::vector<std::string> names() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [name, s] : sets_) out.push_back(name);
    return out;
  }

 private:
  std::filesystem::path dir_;
  bool sync_;
  mutable std::shared_mutex mu_;
  std::mutex commit_mu_;
  std::mutex id_mu_;
  std::map<std::string, std::unique_ptr<SetData>, std::less<>> sets_;
  std::uint64_t committed_seq_ = 0;
};

class TxnState {
 public:
  explicit TxnState(std::shared_ptr<StoreCore> core) : core_(std::move(core)), start_(core_->snapshot()) {}

  void create_set(std::string_view name, std::uint32_t dim) {
    if (name.empty()) throw Error(Errc::validation, "descriptor set name must be non-empty");
    if (dim < 1) throw Error(Errc::validation, "descriptor set dimension must be at least 1");
    bool exists;
    {
      std::shared_lock lock(core_->mutex());
      exists = core_->find(name, start_) != nullptr;
    }
    if (exists || created_.contains(name))
      throw Error(Errc::duplicate_name, "descriptor set '" + std::string(name) + "' already exists");
    created_.emplace(std::string(name), StoreCore::PendingSet{dim, 1, {}});
  }

  std::optional<std::uint32_t> dimension(std::string_view name) const {
    if (auto it = created_.find(name); it != created_.end()) return it->second.dim;
    std::shared_lock lock(core_->mutex());
    if (const auto* s = core_->find(name, start_)) return s->dim;
    return std::nullopt;
  }

  std::uint32_t require_dim(std::string_view name) const {
    auto d = dimension(name);
    if (!d) throw Error(Errc::unknown_set, "no descriptor set '" + std::string(name) + "'");
    return *d;
  }

  DescriptorId add(std::string_view name, std::span<const float> v, std::optional<std::string> label,
                   std::optional<std::uint64_t> node) {
    check_vector(require_dim(name), v);
    Entry e{0, std::vector<float>(v.begin(), v.end()), std::move(label), node};
    if (auto it = created_.find(name); it != created_.end()) {
      e.id = it->second.next_id++;
      it->second.entries.push_back(std::move(e));
      return it->second.entries.back().id;
    }
    e.id = core_->take_id(name);
    auto& list = added_[std::string(name)];
    list.push_back(std::move(e));
    return list.back().id;
  }

  // Every visible entry scored; `labelled_only` drops unlabelled ones.
  std::vector<Neighbor> nearest(std::string_view name, std::span<const float> q, std::size_t k,
                                bool labelled_only) const {
    std::uint32_t dim = require_dim(name);
    check_vector(dim, q);
    std::vector<Neighbor> merged;
    {
      std::shared_lock lock(core_->mutex());
      if (const auto* s = core_->find(name, start_)) {
        std::size_t n = s->visible(start_);
        if (labelled_only) {
          std::vector<float> rows;
          std::vector<DescriptorId> ids;
          std::vector<std::size_t> origin;
          for (std::size_t i = 0; i < n; ++i) {
            if (s->label_index[i] == kNoLabel) continue;
            rows.insert(rows.end(), s->data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                        s->data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
            ids.push_back(s->ids[i]);
            origin.push_back(i);
          }
          auto part = exact_knn(rows, ids, dim, q, k);
          std::map<DescriptorId, std::size_t> row_of;
          for (std::size_t i = 0; i < ids.size(); ++i) row_of[ids[i]] = origin[i];
          for (const auto& p : part) merged.push_back(s->neighbor(row_of[p.id], p.distance));
        } else {
          auto part = exact_knn(std::span(s->data).first(n * dim), std::span(s->ids).first(n), dim, q, k);
          std::size_t row = 0;
          std::map<DescriptorId, std::size_t> row_of;
          for (; row < n; ++row) row_of[s->ids[row]] = row;
          for (const auto& p : part) merged.push_back(s->neighbor(row_of[p.id], p.distance));
        }
      }
    }
    const std::vector<Entry>* pending = nullptr;
    if (auto it = created_.find(name); it != created_.end()) pending = &it->second.entries;
    else if (auto jt = added_.find(name); jt != added_.end()) pending = &jt->second;
    if (pending) {
      std::vector<float> rows;
      std::vector<DescriptorId> ids;
      std::map<DescriptorId, const Entry*> by_id;
      for (const auto& e : *pending) {
        if (labelled_only && !e.label) continue;
        rows.insert(rows.end(), e.vector.begin(), e.vector.end());
        ids.push_back(e.id);
        by_id[e.id] = &e;
      }
      for (auto& p : exact_knn(rows, ids, dim, q, k)) {
        p.label = by_id[p.id]->label;
        p.node = by_id[p.id]->node;
        merged.push_back(std::move(p));
      }
    }
    std::sort(merged.begin(), merged.end(),
              [](const Neighbor& a, const Neighbor& b) { return std::tie(a.distance, a.id) < std::tie(b.distance, b.id); });
    if (merged.size() > k) merged.resize(k);
    return merged;
  }

  std::string classify(std::string_view name, std::span<const float> q, std::size_t k) const {
    if (k < 1) throw Error(Errc::validation, "k must be at least 1");
    auto near = nearest(name, q, k, true);
    if (near.empty()) throw Error(Errc::no_labeled_entries, "descriptor set '" + std::string(name) + "' has no labelled entries");
    std::map<std::string, std::pair<std::size_t, double>> votes;
    for (const auto& n : near) {
      auto& v = votes[*n.label];
      ++v.first;
      v.second += n.distance;
    }
    const std::string* best = nullptr;
    std::pair<std::size_t, double> best_score{0, 0.0};
    // std::map iterates labels lexicographically, so strict comparisons keep
    // the smaller label on a full tie.
    for (const auto& [label, score] : votes) {
      if (!best || score.first > best_score.first ||
          (score.first == best_score.first && score.second < best_score.second)) {
        best = &label;
        best_score = score;
      }
    }
    return *best;
  }

  std::size_t size(std::string_view name) const {
    require_dim(name);
    std::size_t n = 0;
    {
      std::shared_lock lock(core_->mutex());
      if (const auto* s = core_->find(name, start_)) n = s->visible(start_);
    }
    if (auto it = created_.find(name); it != created_.end()) n += it->second.entries.size();
    if (auto it = added_.find(name); it != added_.end()) n += it->second.size();
    return n;
  }

  bool has_changes() const { return !created_.empty() || !added_.empty(); }

  void commit() {
    if (has_changes()) core_->commit(created_, added_);
    abort();
  }

  void abort() {
    created_.clear();
    added_.clear();
  }

 private:
  std::shared_ptr<StoreCore> core_;
  std::uint64_t start_;
  std::map<std::string, StoreCore::PendingSet, std::less<>> created_;
  std::map<std::string, std::vector<Entry>, std::less<>> added_;
};

}  // namespace detail

DescriptorTxn::DescriptorTxn(std::unique_ptr<detail::TxnState> state) : state_(std::move(state)) {}
DescriptorTxn::DescriptorTxn(DescriptorTxn&&) noexcept = default;
DescriptorTxn& DescriptorTxn::operator=(DescriptorTxn&&) noexcept = default;
DescriptorTxn::~DescriptorTxn() = default;

void DescriptorTxn::create_set(std::string_view name, std::uint32_t dimension) { state_->create_set(name, dimension); }

DescriptorId DescriptorTxn::add(std::string_view set, std::span<const float> vector, std::optional<std::string> label,
                                std::optional<std::uint64_t> node) {
  return state_->add(set, vector, std::move(label), node);
}

std::vector<Neighbor> DescriptorTxn::knn(std::string_view set, std::span<const float> query, std::size_t k) const {
  if (k < 1) throw Error(Errc::validation, "k must be at least 1");
  return state_->nearest(set, query, k, false);
}

std::string DescriptorTxn::classify(std::string_view set, std::span<const float> query, std::size_t k) const {
  return state_->classify(set, query, k);
}

std::optional<std::uint32_t> DescriptorTxn::dimension(std::string_view set) const { return state_->dimension(set); }
std::size_t DescriptorTxn::size(std::string_view set) const { return state_->size(set); }
bool DescriptorTxn::has_changes() const noexcept { return state_->has_changes(); }
void DescriptorTxn::commit() { state_->commit(); }
void DescriptorTxn::abort() { state_->abort(); }

DescriptorStore::DescriptorStore(std::shared_ptr<detail::StoreCore> core) : core_(std::move(core)) {}
DescriptorStore::DescriptorStore(DescriptorStore&&) noexcept = default;
DescriptorStore& DescriptorStore::operator=(DescriptorStore&&) noexcept = default;
DescriptorStore::~DescriptorStore() = default;

DescriptorStore DescriptorStore::open(const std::filesystem::path& dir, bool sync) {
  auto core = std::make_shared<detail::StoreCore>(dir, sync);
  core->load();
  return DescriptorStore(std::move(core));
}

DescriptorTxn DescriptorStore::begin() const {
  return DescriptorTxn(std::make_unique<detail::TxnState>(core_));
}

std::vector<std::string> DescriptorStore::set_names() const { return core_->names(); }

}  // namespace visor::descriptor
