#include "tripletqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "tripletqa/errors.hpp"

namespace tqa {

namespace {

constexpr char kMagic[8] = {'T', 'Q', 'A', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint truncated reading " + what);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

std::string get_string(std::istream& in, std::uint64_t n, const std::string& what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint truncated reading " + what);
  return s;
}

}  // namespace

const NamedArray& CheckpointFile::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw DataError("checkpoint has no array '" + name + "'");
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, CheckpointFile::kVersion);
  put<std::uint64_t>(out, ckpt.metadata.size());
  out.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put<std::uint64_t>(out, ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint64_t>(out, a.values.size());
    for (double v : a.values) put<double>(out, v);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + " is not a checkpoint file");
  }
  auto version = get<std::uint32_t>(in, "version");
  if (version != CheckpointFile::kVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile ckpt;
  ckpt.metadata = get_string(in, get<std::uint64_t>(in, "metadata length"), "metadata");
  auto count = get<std::uint64_t>(in, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = get_string(in, get<std::uint32_t>(in, "array name length"), "array name");
    auto n = get<std::uint64_t>(in, "element count");
    a.values.resize(n);
    for (auto& v : a.values) v = get<double>(in, a.name);
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace tqa
