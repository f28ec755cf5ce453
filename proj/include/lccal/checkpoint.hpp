#pragma once

// RCAL tensor container:
//   magic "RCAL" | version u32 | count u32 |
//   per tensor: name_len u32 | name bytes | rank u32 | dims u32... | f32 LE payload
// Integers are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lccal/errors.hpp"
#include "lccal/params.hpp"

namespace lccal {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ad::Tensor<float> tensor;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw LoadError(path + ": truncated checkpoint");
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write("RCAL", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.tensor.rank()));
    for (int d : t.tensor.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.tensor.data()),
             static_cast<std::streamsize>(t.tensor.size() * sizeof(float)));
  }
}

inline void write_checkpoint_file(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_checkpoint(os, tensors);
  if (!os) throw IoError("failed writing '" + path + "'");
}

/// Reads the container. When `keep` is non-empty, tensors whose name does not
/// start with one of its prefixes are skipped without reading their payload.
inline std::vector<NamedTensor> read_checkpoint(std::istream& is, const std::string& path,
                                                const std::vector<std::string>& keep = {}) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RCAL", 4) != 0) throw LoadError(path + ": not an RCAL checkpoint");
  const std::uint32_t version = detail::get_u32(is, path);
  if (version != kCheckpointVersion) throw LoadError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(is, path);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(is, path);
    if (len > (1u << 16)) throw LoadError(path + ": implausible tensor name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw LoadError(path + ": truncated checkpoint");
    const std::uint32_t rank = detail::get_u32(is, path);
    if (rank > 8) throw LoadError(path + ": implausible rank for tensor '" + name + "'");
    ad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint32_t d = detail::get_u32(is, path);
      if (d == 0) throw LoadError(path + ": zero dimension in tensor '" + name + "'");
      shape.push_back(static_cast<int>(d));
      n *= d;
    }
    bool wanted = keep.empty();
    for (const auto& prefix : keep) wanted = wanted || name.rfind(prefix, 0) == 0;
    if (!wanted) {
      is.seekg(static_cast<std::streamoff>(n * sizeof(float)), std::ios::cur);
      if (!is) throw LoadError(path + ": truncated checkpoint");
      continue;
    }
    std::vector<float> data(n);
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float))))
      throw LoadError(path + ": truncated payload for tensor '" + name + "'");
    out.push_back(NamedTensor{std::move(name), ad::Tensor<float>(std::move(shape), std::move(data))});
  }
  return out;
}

inline std::vector<NamedTensor> read_checkpoint_file(const std::string& path, const std::vector<std::string>& keep = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_checkpoint(is, path, keep);
}

inline std::vector<NamedTensor> to_named(const ad::ParameterSet<float>& ps, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& e : ps.entries()) out.push_back(NamedTensor{prefix + e.name, e.value});
  return out;
}

/// Copies `tensors` (names carrying `prefix`) into `ps`. Every parameter must
/// be present with a matching shape; names under `prefix` that `ps` does not
/// know are errors too.
inline void assign_parameters(ad::ParameterSet<float>& ps, const std::vector<NamedTensor>& tensors,
                              const std::string& prefix, const std::string& source) {
  std::set<std::string> missing;
  for (const auto& e : ps.entries()) missing.insert(e.name);
  std::vector<std::string> extra;
  std::vector<std::string> mismatched;
  for (const auto& t : tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string local = t.name.substr(prefix.size());
    if (!ps.contains(local)) {
      extra.push_back(t.name);
      continue;
    }
    missing.erase(local);
    if (ps.get(local).shape() != t.tensor.shape()) {
      mismatched.push_back(t.name + " " + ad::shape_str(t.tensor.shape()) + " vs " + ad::shape_str(ps.get(local).shape()));
      continue;
    }
    ps.get(local) = t.tensor;
  }
  if (missing.empty() && extra.empty() && mismatched.empty()) return;
  std::ostringstream msg;
  msg << source << ": checkpoint does not match the network configuration";
  if (!missing.empty()) {
    msg << "; missing:";
    for (const auto& m : missing) msg << ' ' << prefix << m;
  }
  if (!extra.empty()) {
    msg << "; extra:";
    for (const auto& m : extra) msg << ' ' << m;
  }
  if (!mismatched.empty()) {
    msg << "; shape mismatch:";
    for (const auto& m : mismatched) msg << ' ' << m;
  }
  throw LoadError(msg.str());
}

}  // namespace lccal
