#include "gridparse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gridparse/error.hpp"

namespace gridparse {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'R', 'I', 'D', 'P', 'A', 'R', 'S'};

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(ErrorKind::CorruptCheckpoint, "checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, b_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, b_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

const std::string& Archive::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw Error(ErrorKind::CorruptCheckpoint, "checkpoint lacks metadata key " + key);
}

const Mat<float>& Archive::array(const std::string& name) const {
  for (const auto& [k, v] : arrays) {
    if (k == name) return v;
  }
  throw Error(ErrorKind::CorruptCheckpoint, "checkpoint lacks array " + name);
}

std::string encode_archive(const Archive& a) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kArchiveVersion);
  put_str(out, a.kind);
  put_u32(out, static_cast<std::uint32_t>(a.meta.size()));
  for (const auto& [k, v] : a.meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(a.arrays.size()));
  for (const auto& [name, m] : a.arrays) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Archive decode_archive(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::CorruptCheckpoint, "not a gridparse checkpoint (bad magic)");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a64(bytes.data(), bytes.size() - 8)) {
    throw Error(ErrorKind::CorruptCheckpoint, "checkpoint checksum mismatch");
  }
  Reader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  const auto version = r.u32();
  if (version != kArchiveVersion) {
    throw Error(ErrorKind::CorruptCheckpoint, "unsupported checkpoint version " + std::to_string(version));
  }
  Archive a;
  a.kind = r.str();
  const auto n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    auto v = r.str();
    a.meta.emplace_back(std::move(k), std::move(v));
  }
  const auto n_arrays = r.u32();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    Mat<float> m(rows, cols);
    r.raw(m.data(), static_cast<std::size_t>(rows) * cols * sizeof(float));
    a.arrays.emplace_back(std::move(name), std::move(m));
  }
  if (r.pos() + 8 != bytes.size()) throw Error(ErrorKind::CorruptCheckpoint, "trailing bytes in checkpoint");
  return a;
}

void write_archive(const std::string& path, const Archive& a) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  const auto bytes = encode_archive(a);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorKind::Io, "write failed: " + path);
}

Archive read_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_archive(ss.str());
}

}  // namespace gridparse
