#pragma once

// Versioned binary container for named arrays. Byte layout (all integers and
// floats little-endian):
//
//   magic           4 bytes   "MWLB"
//   format_version  u32       currently 1
//   config_digest   u64       FNV-1a 64 of the config text below
//   config_len      u32
//   config_text     config_len bytes, "key=value" lines
//   entry_count     u32
//   entry_count times:
//     name_len      u32
//     name          name_len bytes
//     role          u8        0 encoder, 1 predictor, 2 joint, 3 other
//     ndims         u32
//     dims          ndims x u64
//     values        prod(dims) x f64 (IEEE-754 binary64)
//
// Entries are written in name order, so identical contents give identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "mwerlab/numcore.hpp"

namespace mwerlab {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'M', 'W', 'L', 'B'};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Container {
  std::string config_text;
  ParamSet entries;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_container(const Container& c) {
  std::string out(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, fnv1a64(c.config_text));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.config_text.size()));
  out += c.config_text;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.entries.size()));
  for (const auto& [name, e] : c.entries.entries()) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.role));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) detail::put<std::uint64_t>(out, d);
    for (double v : e.value.values()) detail::put<double>(out, v);
  }
  return out;
}

inline Container deserialize_container(std::string_view bytes) {
  detail::Reader r(bytes);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  const auto digest = r.get<std::uint64_t>();
  Container c;
  c.config_text = r.bytes(r.get<std::uint32_t>());
  if (fnv1a64(c.config_text) != digest) throw FormatError("checkpoint: config digest mismatch");
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto role = r.get<std::uint8_t>();
    if (role > 3) throw FormatError("checkpoint: bad role tag for " + name);
    const auto ndims = r.get<std::uint32_t>();
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      n *= shape.back();
    }
    std::vector<double> vals(n);
    for (double& v : vals) v = r.get<double>();
    c.entries.add(name, Array(std::move(shape), std::move(vals)), static_cast<Role>(role));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

inline void write_container(const std::string& path, const Container& c) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  const std::string bytes = serialize_container(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_container(ss.str());
}

}  // namespace mwerlab
