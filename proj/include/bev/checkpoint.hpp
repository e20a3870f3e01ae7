#pragma once

// Versioned binary container of named, shape-tagged arrays. The byte layout
// is described in docs/checkpoint_format.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bev {

enum class DType : std::uint32_t { F32 = 0, F64 = 1 };

struct NamedArray {
  std::string name;
  DType dtype = DType::F64;
  std::vector<std::uint64_t> dims;
  /// Values widened to double; F32 entries round-trip exactly.
  std::vector<double> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to a temporary sibling and renames, so a crash never leaves a
/// truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace bev
