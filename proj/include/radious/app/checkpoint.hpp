#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "radious/error.hpp"
#include "radious/num/tape.hpp"

namespace radious::app {

// Binary checkpoint:
//   magic "RDCKPT01" | u32 version | u64 seed
//   u64 config length | config bytes (verbatim JSON snapshot)
//   u64 tensor count, then per tensor in ascending name order:
//     u64 name length | name bytes | u32 rank | u64 dims... | u64 count | f64 values
// All integers and reals are little-endian; reals are 8-byte IEEE doubles.
// Because names are sorted and every field has one encoding, load -> save is
// byte-identical.

struct TensorBlob {
  std::vector<int> shape;
  std::vector<double> values;

  bool operator==(const TensorBlob&) const = default;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t seed = 0;
  std::string config_json;  // stored verbatim, never re-serialized
  std::map<std::string, TensorBlob> tensors;
};

namespace detail {

constexpr char kMagic[8] = {'R', 'D', 'C', 'K', 'P', 'T', '0', '1'};

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t take_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) fail("io", "truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t take_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) fail("io", "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double take_f64(std::istream& in) { return std::bit_cast<double>(take_u64(in)); }

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot write checkpoint '" + path + "'");
  out.write(detail::kMagic, sizeof(detail::kMagic));
  detail::put_u32(out, ck.version);
  detail::put_u64(out, ck.seed);
  detail::put_u64(out, ck.config_json.size());
  out.write(ck.config_json.data(), static_cast<std::streamsize>(ck.config_json.size()));
  detail::put_u64(out, ck.tensors.size());
  for (const auto& [name, blob] : ck.tensors) {
    detail::put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(blob.shape.size()));
    for (int d : blob.shape) detail::put_u64(out, static_cast<std::uint64_t>(d));
    detail::put_u64(out, blob.values.size());
    for (double v : blob.values) detail::put_f64(out, v);
  }
  if (!out) fail("io", "write failure on checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io", "cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kMagic, 8) != 0)
    fail("format", "'" + path + "' is not a radious checkpoint");
  Checkpoint ck;
  ck.version = detail::take_u32(in);
  if (ck.version != 1) fail("format", "unsupported checkpoint version " + std::to_string(ck.version));
  ck.seed = detail::take_u64(in);
  const std::uint64_t cfg_len = detail::take_u64(in);
  ck.config_json.resize(cfg_len);
  in.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len));
  const std::uint64_t count = detail::take_u64(in);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t name_len = detail::take_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    TensorBlob blob;
    const std::uint32_t rank = detail::take_u32(in);
    blob.shape.resize(rank);
    for (auto& d : blob.shape) d = static_cast<int>(detail::take_u64(in));
    blob.values.resize(detail::take_u64(in));
    for (auto& v : blob.values) v = detail::take_f64(in);
    if (!in) fail("io", "truncated checkpoint '" + path + "'");
    ck.tensors.emplace(std::move(name), std::move(blob));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Tape bridging

inline Checkpoint checkpoint_from_tape(const num::GradientTape& tape, std::uint64_t seed,
                                       std::string config_json) {
  Checkpoint ck;
  ck.seed = seed;
  ck.config_json = std::move(config_json);
  for (const std::string& name : tape.names()) {
    const num::Tensor t = tape.get(name);
    TensorBlob blob;
    blob.shape = t.shape();
    auto values = t.data();
    blob.values.assign(values.begin(), values.end());
    ck.tensors.emplace(name, std::move(blob));
  }
  return ck;
}

// Copies matching tensors into the tape. With allow_partial the checkpoint may
// cover a subset of the tape (pretrained backbone into the full model); names
// present in both must agree on shape either way.
inline int load_into_tape(const Checkpoint& ck, num::GradientTape& tape, bool allow_partial) {
  int loaded = 0;
  for (const std::string& name : tape.names()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      if (allow_partial) continue;
      fail("checkpoint", "checkpoint is missing tensor '" + name + "'");
    }
    const TensorBlob& blob = it->second;
    if (blob.shape != tape.get(name).shape())
      fail("dimension", "checkpoint tensor '" + name + "' has a different shape than the model");
    std::vector<num::real> values(blob.values.begin(), blob.values.end());
    tape.set(name, num::Tensor::from(blob.shape, std::move(values)));
    ++loaded;
  }
  return loaded;
}

}  // namespace radious::app
