// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "tinyvid/error.hpp"

namespace tinyvid {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int64_t i64() { return get<std::int64_t>(); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (bytes.size() - pos < n) throw IoError("checkpoint truncated");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

Checkpoint make_checkpoint(const std::map<std::string, std::string>& config,
                           const ParamList& params) {
  Checkpoint c;
  c.config = config;
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    CheckpointEntry e;
    e.name = p.name;
    e.shape = p.tensor.shape();
    e.offset = offset;
    const auto d = p.tensor.data();
    e.values.assign(d.begin(), d.end());
    offset += e.values.size() * sizeof(float);
    c.entries.push_back(std::move(e));
  }
  return c;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw("HYMV", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.config.size()));
  for (const auto& [k, v] : ckpt.config) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : ckpt.entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.i64(d);
    w.u64(offset);
    offset += e.values.size() * sizeof(float);
  }
  w.u64(offset);
  const std::size_t start = w.out.size();
  for (const auto& e : ckpt.entries) w.raw(e.values.data(), e.values.size() * sizeof(float));
  w.u64(fnv1a64(w.out.data() + start, w.out.size() - start));
  return std::move(w.out);
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "HYMV", 4) != 0) throw IoError("not a checkpoint (bad magic)");
  r.pos = 4;
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  const auto nc = r.u32();
  for (std::uint32_t i = 0; i < nc; ++i) {
    auto k = r.str();
    c.config[k] = r.str();
  }
  const auto np = r.u32();
  std::uint64_t expect = 0;
  for (std::uint32_t i = 0; i < np; ++i) {
    CheckpointEntry e;
    e.name = r.str();
    const auto rank = r.u32();
    for (std::uint32_t a = 0; a < rank; ++a) {
      e.shape.push_back(r.i64());
      if (e.shape.back() <= 0) throw IoError("checkpoint entry '" + e.name + "' has a bad shape");
    }
    e.offset = r.u64();
    if (e.offset != expect) throw IoError("checkpoint manifest offsets are not contiguous");
    expect += static_cast<std::uint64_t>(shape_numel(e.shape)) * sizeof(float);
    c.entries.push_back(std::move(e));
  }
  const auto payload = r.u64();
  if (payload != expect) throw IoError("checkpoint payload size does not match manifest");
  r.need(payload + 8);
  const std::size_t start = r.pos;
  const auto sum = fnv1a64(bytes.data() + start, payload);
  for (auto& e : c.entries) {
    e.values.resize(static_cast<std::size_t>(shape_numel(e.shape)));
    std::memcpy(e.values.data(), bytes.data() + start + e.offset, e.values.size() * sizeof(float));
  }
  r.pos = start + payload;
  if (r.u64() != sum) throw IoError("checkpoint checksum mismatch");
  if (r.pos != bytes.size()) throw IoError("trailing bytes after checkpoint");
  return c;
}

void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

void load_params(const Checkpoint& ckpt, const ParamList& params) {
  for (const auto& p : params) {
    const auto* e = ckpt.find(p.name);
    if (!e) throw IoError("checkpoint lacks parameter '" + p.name + "'");
    if (e->shape != p.tensor.shape()) {
      throw ShapeError("parameter '" + p.name + "': checkpoint shape " + shape_str(e->shape) +
                       " vs model " + shape_str(p.tensor.shape()));
    }
    auto d = p.tensor.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(e->values[i]);
  }
}

}  // namespace tinyvid
