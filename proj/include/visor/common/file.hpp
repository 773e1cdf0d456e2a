#pragma once

#include <filesystem>

#include "visor/common/bytes.hpp"

namespace visor {

Bytes read_file(const std::filesystem::path& path);

// Writes to a sibling temporary, renames it over `path` and, when `sync` is
// set, fsyncs both the file and the directory. Readers observe either the old
// or the new contents.
void write_file_atomic(const std::filesystem::path& path, ByteView data, bool sync = true);

void fsync_directory(const std::filesystem::path& dir);

}  // namespace visor
