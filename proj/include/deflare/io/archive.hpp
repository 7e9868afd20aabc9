#pragma once

// Binary tensor archive:
//
//   "FLRARCH1" | u32 header length | JSON header |
//   u32 entry count | entries...
//
// entry: u32 name length | name | u8 dtype (1 = f64) | u32 rank | u64 dims[rank] | data
//
// All integers and floats little-endian. Entries are written in name order,
// so equal contents give byte-identical files.

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deflare/core/error.hpp"
#include "deflare/core/tensor.hpp"

namespace deflare::io {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

inline constexpr char kArchiveMagic[8] = {'F', 'L', 'R', 'A', 'R', 'C', 'H', '1'};

struct Archive {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, Tensor<double>> tensors;

  const Tensor<double>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("archive has no entry '" + name + "'");
    return it->second;
  }
};

namespace detail {

template <class U>
void put(std::string& out, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.append(b, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <class U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, s_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw IoError("archive truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Archive& a) {
  std::string out(kArchiveMagic, sizeof(kArchiveMagic));
  const std::string header = a.header.dump();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensors.size()));
  for (const auto& [name, t] : a.tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint8_t>(out, 1);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  return out;
}

inline Archive deserialize(const std::string& bytes) {
  detail::Reader r(bytes);
  if (r.bytes(sizeof(kArchiveMagic)) != std::string(kArchiveMagic, sizeof(kArchiveMagic))) {
    throw IoError("not a tensor archive (bad magic)");
  }
  Archive a;
  const auto hlen = r.get<std::uint32_t>();
  try {
    a.header = nlohmann::json::parse(r.bytes(hlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("archive header: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    if (r.get<std::uint8_t>() != 1) throw IoError("archive entry '" + name + "': unknown dtype");
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    const std::string raw = r.bytes(n * sizeof(double));
    std::memcpy(data.data(), raw.data(), raw.size());
    a.tensors.emplace(std::move(name), Tensor<double>(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw IoError("archive has trailing bytes");
  return a;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_archive(const std::filesystem::path& path, const Archive& a) {
  write_file(path, serialize(a));
}

inline Archive read_archive(const std::filesystem::path& path) { return deserialize(read_file(path)); }

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr)) {
    throw IoError("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

}  // namespace deflare::io
