// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint files. Layout (little-endian):
//   "LORD" | u32 version | u8 stage | u32 count
//   count x { u32 name_len, name, u32 rank, rank x u64 extent, f64 payload }
//   u32 CRC32 of every preceding byte

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lord/serialize.hpp"

namespace lord {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class BadMagicError : public std::runtime_error {
 public:
  BadMagicError() : std::runtime_error("bad magic") {}
};

class VersionMismatchError : public std::runtime_error {
 public:
  explicit VersionMismatchError(std::uint32_t found)
      : std::runtime_error("version mismatch: file has " + std::to_string(found) + ", expected " +
                           std::to_string(kCheckpointVersion)) {}
};

class ChecksumError : public std::runtime_error {
 public:
  ChecksumError() : std::runtime_error("checksum mismatch") {}
};

struct Checkpoint {
  std::uint8_t stage = 1;
  ArrayMap arrays;

  void put(NamedArray a) { arrays[a.name] = std::move(a); }
  void put(const std::string& name, const Tensor& t) { put(to_named(name, t)); }
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Text and integer payloads stored as ordinary f64 arrays so that one array
// format covers everything in the file.
NamedArray text_array(const std::string& name, const std::string& text);
std::string array_text(const NamedArray& array);
NamedArray int_array(const std::string& name, const std::vector<std::uint64_t>& values);
std::vector<std::uint64_t> array_ints(const NamedArray& array);

}  // namespace lord
