#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tqa {

// Versioned binary container: JSON metadata plus named float64 arrays.
// Byte layout (all integers little-endian):
//   8 bytes  magic "TQACKPT\0"
//   u32      format version
//   u64      metadata length N, then N bytes of UTF-8 JSON
//   u64      array count K, then per array:
//            u32 name length n, n name bytes, u64 element count c, c * binary64
struct NamedArray {
  std::string name;
  std::vector<double> values;
};

struct CheckpointFile {
  static constexpr std::uint32_t kVersion = 1;
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
};

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

}  // namespace tqa
