// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint:
//   "HYMV" u32 version
//   u32 n_config  { str key, str value }          (sorted by key)
//   u32 n_params  { str name, u32 rank, i64 dims[rank], u64 offset }
//   u64 payload_bytes, payload (little-endian f32, manifest order)
//   u64 FNV-1a of the payload
// Strings are u32 length + bytes. Offsets are in bytes from payload start.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinyvid/nn.hpp"

namespace tinyvid {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::vector<float> values;
};

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

std::uint64_t fnv1a64(const void* data, std::size_t size);

Checkpoint make_checkpoint(const std::map<std::string, std::string>& config,
                           const ParamList& params);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes to `path` via a temporary file and rename.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint values into params with matching names and shapes.
/// Every parameter must be present.
void load_params(const Checkpoint& ckpt, const ParamList& params);

/// Writes raw bytes atomically (temporary file, then rename).
void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace tinyvid
