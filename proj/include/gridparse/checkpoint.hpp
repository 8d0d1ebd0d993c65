#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gridparse/tensor.hpp"

namespace gridparse {

// Versioned container for named float32 arrays plus string metadata.
//
// Layout (all integers little-endian):
//   8 bytes   magic "GRIDPARS"
//   u32       format version (kArchiveVersion)
//   u32 + n   kind ("nca" or "transformer")
//   u32       metadata count, then per entry u32 + key, u32 + value
//   u32       array count, then per array u32 + name, u32 rows, u32 cols,
//             rows * cols IEEE-754 float32 values in row-major order
//   u64       FNV-1a 64 hash of every preceding byte
struct Archive {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Mat<float>>> arrays;

  const std::string& meta_value(const std::string& key) const;  // throws CorruptCheckpoint
  const Mat<float>& array(const std::string& name) const;       // throws CorruptCheckpoint
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string encode_archive(const Archive& a);
Archive decode_archive(const std::string& bytes);  // throws CorruptCheckpoint
void write_archive(const std::string& path, const Archive& a);
Archive read_archive(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(const std::string& s);

}  // namespace gridparse
