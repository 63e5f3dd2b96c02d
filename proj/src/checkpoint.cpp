// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/checkpoint.hpp"

#include <cmath>
#include <cstring>

namespace lord {

namespace {

constexpr char kMagic[4] = {'L', 'O', 'R', 'D'};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u32(kCheckpointVersion);
  w.u8(ckpt.stage);
  w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, a] : ckpt.arrays) {
    if (shape_numel(a.shape) != a.values.size()) {
      throw std::invalid_argument("array '" + name + "' shape does not match its payload");
    }
    w.str(name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t e : a.shape) w.u64(e);
    for (double v : a.values) w.f64(v);
  }
  w.u32(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncatedError("truncated checkpoint");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError();
  ByteReader r(bytes.subspan(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw VersionMismatchError(version);
  Checkpoint ckpt;
  ckpt.stage = r.u8();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      a.shape.push_back(r.u64());
      n *= a.shape.back();
    }
    if (n * 8 > r.remaining()) throw TruncatedError("truncated checkpoint");
    a.values.resize(n);
    for (double& v : a.values) v = r.f64();
    ckpt.arrays[a.name] = std::move(a);
  }
  const std::size_t body = bytes.size() - r.remaining();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) throw std::runtime_error("corrupt checkpoint: trailing bytes");
  if (stored != crc32_of(bytes.first(body))) throw ChecksumError();
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

NamedArray text_array(const std::string& name, const std::string& text) {
  NamedArray a{name, {text.size()}, {}};
  if (text.empty()) a.shape = {0};
  for (unsigned char c : text) a.values.push_back(c);
  return a;
}

std::string array_text(const NamedArray& array) {
  std::string s;
  for (double v : array.values) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

NamedArray int_array(const std::string& name, const std::vector<std::uint64_t>& values) {
  NamedArray a{name, {values.size()}, {}};
  for (std::uint64_t v : values) {
    if (v > (std::uint64_t{1} << 53)) throw std::invalid_argument("integer too large for f64 storage");
    a.values.push_back(static_cast<double>(v));
  }
  return a;
}

std::vector<std::uint64_t> array_ints(const NamedArray& array) {
  std::vector<std::uint64_t> out;
  for (double v : array.values) {
    if (v < 0 || v != std::floor(v)) throw std::runtime_error("array '" + array.name + "' is not integral");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

}  // namespace lord
