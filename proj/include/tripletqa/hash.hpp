#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace tqa {

// 64-bit FNV-1a. Used for config hashes, artifact checksums and the
// frozen-weight fingerprint; not a security primitive.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes);
  void update(std::string_view s);
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string fnv1a_hex(std::string_view s);
std::string hash_doubles(std::span<const double> values);
std::string file_checksum(const std::filesystem::path& path);

}  // namespace tqa
