#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "visor/common/bytes.hpp"
#include "visor/descriptor/descriptor_store.hpp"
#include "visor/graph/graph_store.hpp"
#include "visor/image/visual_store.hpp"

namespace visor::query {

using json = nlohmann::json;

inline constexpr std::string_view kImageClass = "Image";

struct QueryResult {
  json responses = json::array();  // one {"Verb": {...}} object per command
  std::vector<Bytes> blobs;
};

// Time spent per phase while executing one envelope. Filled only when the
// caller passes a sink to execute().
struct PhaseTimes {
  std::chrono::nanoseconds metadata{0};
  std::chrono::nanoseconds retrieval{0};
  std::chrono::nanoseconds preprocess{0};
};

struct EngineOptions {
  bool sync = true;
  std::uint64_t checkpoint_bytes = 64ull << 20;
  // (class, property) pairs indexed at open.
  std::vector<std::pair<std::string, std::string>> indexes;
};

// Executes JSON command envelopes against the graph, visual and descriptor
// stores kept under one data directory. Each envelope is all-or-nothing.
// Safe to call from many threads; write envelopes run one at a time.
class Engine {
 public:
  static std::unique_ptr<Engine> open(const std::filesystem::path& data_dir, EngineOptions options = {});
  ~Engine();

  QueryResult execute(std::string_view commands, std::span<const Bytes> blobs, PhaseTimes* times = nullptr);

  // Checkpoints the graph and rejects further envelopes.
  void close();

  graph::GraphStore& graph() noexcept { return graph_; }
  image::VisualStore& visual() noexcept { return *visual_; }
  descriptor::DescriptorStore& descriptors() noexcept { return descriptors_; }

 private:
  Engine(graph::GraphStore graph, std::unique_ptr<image::VisualStore> visual, descriptor::DescriptorStore descriptors);

  graph::GraphStore graph_;
  std::unique_ptr<image::VisualStore> visual_;
  descriptor::DescriptorStore descriptors_;
  std::mutex writer_;
};

// True when the command array contains a verb that mutates state.
bool is_write_envelope(const json& commands);

}  // namespace visor::query
