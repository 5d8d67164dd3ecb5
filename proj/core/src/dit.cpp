// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/dit.hpp"

#include <cmath>
#include <sstream>

#include "tinyvid/error.hpp"

namespace tinyvid {

namespace {

std::string join3(const std::array<std::int64_t, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto r = std::stoll(v, &used);
    if (used == v.size()) return r;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad integer for " + key + ": '" + v + "'");
}

std::array<std::int64_t, 3> parse3(const std::string& key, const std::string& v) {
  std::array<std::int64_t, 3> out{};
  std::stringstream ss(v);
  std::string item;
  int n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 3) throw ConfigError(key + " needs three comma-separated integers");
    out[static_cast<std::size_t>(n++)] = parse_i64(key, item);
  }
  if (n != 3) throw ConfigError(key + " needs three comma-separated integers");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

// [B, L, heads * hd] <-> [B, heads, L, hd]
Tensor split_heads(const Tensor& x, std::int64_t heads) {
  const auto& s = x.shape();
  return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale_) {
  return layer_norm(x) * (scale_ + 1.0) + shift;
}

// qkv [B, L, 3 dim] -> attention output [B, L, dim].
Tensor self_attention(const Tensor& qkv, std::int64_t dim, std::int64_t heads,
                      const RopeTables* rope) {
  Tensor q = split_heads(slice(qkv, 2, 0, dim), heads);
  Tensor k = split_heads(slice(qkv, 2, dim, dim), heads);
  const Tensor v = split_heads(slice(qkv, 2, 2 * dim, dim), heads);
  if (rope) {
    q = rotary(q, rope->cos, rope->sin);
    k = rotary(k, rope->cos, rope->sin);
  }
  return merge_heads(attention(q, k, v));
}

void check_finite(const Tensor& x, std::int64_t block, const char* kind) {
  if (!all_finite(x)) {
    throw NumericError("non-finite activations after block " + std::to_string(block) + " (" +
                           kind + ")",
                       static_cast<long>(block));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (n_dual < 0 || n_single < 0) throw ConfigError("block counts must be non-negative");
  if (n_dual + n_single < 1) throw ConfigError("model needs at least one block");
  if (dim < 1 || ffn_dim < 1 || heads < 1 || head_dim < 1) {
    throw ConfigError("dim, ffn_dim, heads and head_dim must be positive");
  }
  if (heads * head_dim != dim) {
    throw ConfigError("heads * head_dim = " + std::to_string(heads * head_dim) +
                      " must equal dim = " + std::to_string(dim));
  }
  if (rope_split[0] + rope_split[1] + rope_split[2] != head_dim) {
    throw ConfigError("rope_split " + join3(rope_split) + " must sum to head_dim = " +
                      std::to_string(head_dim));
  }
  for (auto d : rope_split) {
    if (d < 0 || d % 2 != 0) throw ConfigError("rope_split components must be even, got " + join3(rope_split));
  }
  for (auto k : patch) {
    if (k < 1) throw ConfigError("patch extents must be positive");
  }
  if (rope_base <= 1.0) throw ConfigError("rope_base must exceed 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("time_embed_dim must be a positive even number");
  }
  if (in_channels < 1 || out_channels < 1) throw ConfigError("channel counts must be positive");
  if (text_vocab < 1) throw ConfigError("text_vocab must be positive");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["dit.n_dual"] = std::to_string(n_dual);
  kv["dit.n_single"] = std::to_string(n_single);
  kv["dit.dim"] = std::to_string(dim);
  kv["dit.ffn_dim"] = std::to_string(ffn_dim);
  kv["dit.heads"] = std::to_string(heads);
  kv["dit.head_dim"] = std::to_string(head_dim);
  kv["dit.rope_split"] = join3(rope_split);
  kv["dit.patch"] = join3(patch);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", rope_base);
  kv["dit.rope_base"] = buf;
  kv["dit.time_embed_dim"] = std::to_string(time_embed_dim);
  kv["dit.in_channels"] = std::to_string(in_channels);
  kv["dit.out_channels"] = std::to_string(out_channels);
  kv["dit.text_vocab"] = std::to_string(text_vocab);
  kv["dit.guidance_embed"] = guidance_embed ? "true" : "false";
  kv["dit.i2v"] = i2v ? "true" : "false";
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const char* key, auto apply) {
    if (auto it = kv.find(key); it != kv.end()) apply(it->first, it->second);
  };
  auto i64 = [&](const char* key, std::int64_t& field) {
    get(key, [&](const std::string& k, const std::string& v) { field = parse_i64(k, v); });
  };
  i64("dit.n_dual", c.n_dual);
  i64("dit.n_single", c.n_single);
  i64("dit.dim", c.dim);
  i64("dit.ffn_dim", c.ffn_dim);
  i64("dit.heads", c.heads);
  i64("dit.head_dim", c.head_dim);
  i64("dit.time_embed_dim", c.time_embed_dim);
  i64("dit.in_channels", c.in_channels);
  i64("dit.out_channels", c.out_channels);
  i64("dit.text_vocab", c.text_vocab);
  get("dit.rope_split", [&](const std::string& k, const std::string& v) { c.rope_split = parse3(k, v); });
  get("dit.patch", [&](const std::string& k, const std::string& v) { c.patch = parse3(k, v); });
  get("dit.rope_base", [&](const std::string& k, const std::string& v) {
    try {
      c.rope_base = std::stod(v);
    } catch (const std::exception&) {
      throw ConfigError("bad number for " + k + ": '" + v + "'");
    }
  });
  get("dit.guidance_embed", [&](const std::string& k, const std::string& v) { c.guidance_embed = parse_bool(k, v); });
  get("dit.i2v", [&](const std::string& k, const std::string& v) { c.i2v = parse_bool(k, v); });
  return c;
}

ModelConfig reference_config() {
  ModelConfig c;
  c.n_dual = 20;
  c.n_single = 40;
  c.dim = 3072;
  c.ffn_dim = 12288;
  c.heads = 24;
  c.head_dim = 128;
  c.rope_split = {16, 56, 56};
  return c;
}

// ---------------------------------------------------------------------------
// Patches and positions

std::int64_t token_count(const Shape& latent, const std::array<std::int64_t, 3>& patch) {
  if (latent.size() != 4 && latent.size() != 5) {
    throw ShapeError("latent must be [T', C, H', W'] or [B, T', C, H', W'], got " + shape_str(latent));
  }
  const std::size_t o = latent.size() - 4;
  const std::int64_t ext[3] = {latent[o], latent[o + 2], latent[o + 3]};
  const char* names[3] = {"time", "height", "width"};
  std::int64_t n = 1;
  for (int a = 0; a < 3; ++a) {
    if (ext[a] % patch[static_cast<std::size_t>(a)] != 0) {
      throw ShapeError(std::string(names[a]) + " axis: " + std::to_string(ext[a]) +
                       " is not divisible by patch extent " +
                       std::to_string(patch[static_cast<std::size_t>(a)]));
    }
    n *= ext[a] / patch[static_cast<std::size_t>(a)];
  }
  return n;
}

Tensor extract_patches(const Tensor& x, const std::array<std::int64_t, 3>& patch) {
  if (x.rank() != 5) throw ShapeError("patchify expects [B, T', C, H', W'], got " + shape_str(x.shape()));
  const auto L = token_count(x.shape(), patch);
  const auto& s = x.shape();
  const auto [kt, kh, kw] = patch;
  const Tensor r = reshape(x, {s[0], s[1] / kt, kt, s[2], s[3] / kh, kh, s[4] / kw, kw});
  return reshape(permute(r, {0, 1, 4, 6, 3, 2, 5, 7}), {s[0], L, s[2] * kt * kh * kw});
}

Tensor merge_patches(const Tensor& tokens, std::int64_t channels, std::int64_t t, std::int64_t h,
                     std::int64_t w, const std::array<std::int64_t, 3>& patch) {
  const auto [kt, kh, kw] = patch;
  const auto B = tokens.dim(0);
  if (tokens.rank() != 3 || tokens.dim(1) != t * h * w || tokens.dim(2) != channels * kt * kh * kw) {
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match grid");
  }
  const Tensor r = reshape(tokens, {B, t, h, w, channels, kt, kh, kw});
  return reshape(permute(r, {0, 1, 5, 4, 2, 6, 3, 7}), {B, t * kt, channels, h * kh, w * kw});
}

std::vector<std::array<std::int64_t, 3>> grid_coords(std::int64_t t, std::int64_t h,
                                                     std::int64_t w) {
  std::vector<std::array<std::int64_t, 3>> c;
  c.reserve(static_cast<std::size_t>(t * h * w));
  for (std::int64_t a = 0; a < t; ++a)
    for (std::int64_t b = 0; b < h; ++b)
      for (std::int64_t d = 0; d < w; ++d) c.push_back({a, b, d});
  return c;
}

RopeTables rope_tables(const std::vector<std::array<std::int64_t, 3>>& coords,
                       const std::array<std::int64_t, 3>& split, double base) {
  for (auto d : split) {
    if (d < 0 || d % 2 != 0) throw ConfigError("rope segment widths must be even, got " + join3(split));
  }
  const auto half = (split[0] + split[1] + split[2]) / 2;
  const auto L = static_cast<std::int64_t>(coords.size());
  std::vector<double> c(static_cast<std::size_t>(L * half)), s(c.size());
  for (std::int64_t i = 0; i < L; ++i) {
    std::size_t col = static_cast<std::size_t>(i * half);
    for (std::size_t a = 0; a < 3; ++a) {
      const auto d = split[a];
      for (std::int64_t j = 0; j < d / 2; ++j) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
        const double angle = static_cast<double>(coords[static_cast<std::size_t>(i)][a]) * freq;
        c[col] = std::cos(angle);
        s[col] = std::sin(angle);
        ++col;
      }
    }
  }
  return {Tensor({L, half}, std::move(c)), Tensor({L, half}, std::move(s))};
}

RopeTables identity_rope(std::int64_t count, std::int64_t head_dim) {
  return {Tensor::ones({count, head_dim / 2}), Tensor::zeros({count, head_dim / 2})};
}

RopeTables concat_rope(const RopeTables& a, const RopeTables& b) {
  return {concat({a.cos, b.cos}, 0), concat({a.sin, b.sin}, 0)};
}

std::pair<Tensor, Tensor> rope3d(const Tensor& q, const Tensor& k,
                                 const std::vector<std::array<std::int64_t, 3>>& coords,
                                 const std::array<std::int64_t, 3>& split, double base) {
  const auto hd = split[0] + split[1] + split[2];
  if (q.rank() < 2 || q.dim(-1) != hd) {
    throw ConfigError("head_dim " + std::to_string(q.rank() ? q.dim(-1) : 0) +
                      " does not match rope split " + join3(split));
  }
  const auto tables = rope_tables(coords, split, base);
  return {rotary(q, tables.cos, tables.sin), rotary(k, tables.cos, tables.sin)};
}

Tensor sinusoidal_embedding(std::span<const double> values, std::int64_t width, double scale_) {
  const auto half = width / 2;
  std::vector<double> d;
  d.reserve(values.size() * static_cast<std::size_t>(width));
  for (double v : values) {
    const double x = scale_ * v;
    for (std::int64_t i = 0; i < half; ++i) {
      d.push_back(std::cos(x * std::pow(10.0, -4.0 * static_cast<double>(i) / static_cast<double>(half))));
    }
    for (std::int64_t i = 0; i < half; ++i) {
      d.push_back(std::sin(x * std::pow(10.0, -4.0 * static_cast<double>(i) / static_cast<double>(half))));
    }
  }
  return Tensor({static_cast<std::int64_t>(values.size()), 2 * half}, std::move(d));
}

// ---------------------------------------------------------------------------
// Text

std::int64_t last_content_position(const TokenIds& ids) {
  for (auto i = static_cast<std::int64_t>(ids.size()) - 1; i >= 0; --i) {
    if (ids[static_cast<std::size_t>(i)] != kPadToken) return i;
  }
  return 0;
}

RefinerBlock::RefinerBlock(std::int64_t dim, std::int64_t ffn_dim, std::int64_t h, Rng& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), fc1(dim, ffn_dim, rng), fc2(ffn_dim, dim, rng),
      heads(h) {}

Tensor RefinerBlock::operator()(const Tensor& x) const {
  const auto dim = x.dim(2);
  Tensor h = x + proj(self_attention(qkv(layer_norm(x)), dim, heads, nullptr));
  return h + fc2(gelu(fc1(layer_norm(h))));
}

void RefinerBlock::collect(const std::string& prefix, ParamList& out) const {
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

TextEncoder::TextEncoder(std::int64_t vocab, std::int64_t dim, std::int64_t ffn_dim,
                         std::int64_t heads, Rng& rng)
    : embed_(vocab, dim, rng), refiner_(dim, ffn_dim, heads, rng) {
  // Unit-variance rows would dominate the residual stream.
  auto d = embed_.table.mutable_data();
  for (auto& v : d) v *= 0.1;
}

ConditioningBundle TextEncoder::operator()(const Captions& captions) const {
  if (captions.empty()) throw ShapeError("captions: batch axis is empty");
  const auto len = captions.front().size();
  if (len == 0) throw ShapeError("captions: token axis is empty");
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> pooled_rows;
  const auto vocab = embed_.table.dim(0);
  for (std::size_t b = 0; b < captions.size(); ++b) {
    if (captions[b].size() != len) throw ShapeError("captions: rows differ in length");
    for (auto id : captions[b]) {
      if (id < 0 || id >= vocab) {
        throw ShapeError("caption token " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(vocab));
      }
      ids.push_back(id);
    }
    pooled_rows.push_back(static_cast<std::int64_t>(b * len) + last_content_position(captions[b]));
  }
  const auto B = static_cast<std::int64_t>(captions.size());
  const auto L = static_cast<std::int64_t>(len);
  const auto dim = embed_.table.dim(1);
  const Tensor text = refiner_(reshape(embed_(ids), {B, L, dim}));
  const Tensor pooled = index_select(reshape(text, {B * L, dim}), 0, pooled_rows);
  return {text, pooled};
}

void TextEncoder::collect(const std::string& prefix, ParamList& out) const {
  embed_.collect(prefix + ".embed", out);
  refiner_.collect(prefix + ".refiner", out);
}

// ---------------------------------------------------------------------------
// Blocks

Modulation::Modulation(std::int64_t dim, std::int64_t n, Rng& rng)
    : linear(dim, n * dim, rng, /*zero_init=*/true), chunks(n) {}

std::vector<Tensor> Modulation::operator()(const Tensor& vec) const {
  const auto B = vec.dim(0), dim = vec.dim(1);
  const Tensor m = reshape(linear(silu(vec)), {B, 1, chunks * dim});
  std::vector<Tensor> out;
  for (std::int64_t i = 0; i < chunks; ++i) out.push_back(slice(m, 2, i * dim, dim));
  return out;
}

void Modulation::collect(const std::string& prefix, ParamList& out) const {
  linear.collect(prefix, out);
}

StreamWeights::StreamWeights(std::int64_t dim, std::int64_t ffn_dim, Rng& rng)
    : mod(dim, 6, rng), qkv(dim, 3 * dim, rng), proj(dim, dim, rng), fc1(dim, ffn_dim, rng),
      fc2(ffn_dim, dim, rng) {}

void StreamWeights::collect(const std::string& prefix, ParamList& out) const {
  mod.collect(prefix + ".mod", out);
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

namespace {

Tensor run_stream(const StreamWeights& w, const Tensor& x, const Tensor& vec, std::int64_t heads,
                  const RopeTables* rope) {
  const auto m = w.mod(vec);
  const auto dim = x.dim(2);
  Tensor h = x + m[2] * w.proj(self_attention(w.qkv(modulate(x, m[0], m[1])), dim, heads, rope));
  return h + m[5] * w.fc2(gelu(w.fc1(modulate(h, m[3], m[4]))));
}

}  // namespace

DualStreamBlock::DualStreamBlock(const ModelConfig& c, Rng& rng)
    : video(c.dim, c.ffn_dim, rng), text(c.dim, c.ffn_dim, rng), heads(c.heads) {}

std::pair<Tensor, Tensor> DualStreamBlock::operator()(const Tensor& video_tokens,
                                                      const Tensor& text_tokens, const Tensor& vec,
                                                      const RopeTables& rope) const {
  return {run_stream(video, video_tokens, vec, heads, &rope),
          run_stream(text, text_tokens, vec, heads, nullptr)};
}

void DualStreamBlock::collect(const std::string& prefix, ParamList& out) const {
  video.collect(prefix + ".video", out);
  text.collect(prefix + ".text", out);
}

SingleStreamBlock::SingleStreamBlock(const ModelConfig& c, Rng& rng)
    : mod(c.dim, 3, rng),
      qkv_mlp(c.dim, 3 * c.dim + c.ffn_dim, rng),
      out(c.dim + c.ffn_dim, c.dim, rng),
      heads(c.heads),
      dim(c.dim),
      ffn_dim(c.ffn_dim) {}

Tensor SingleStreamBlock::operator()(const Tensor& joint, const Tensor& vec,
                                     const RopeTables& rope) const {
  const auto m = mod(vec);
  const Tensor h = qkv_mlp(modulate(joint, m[0], m[1]));
  const Tensor attn = self_attention(slice(h, 2, 0, 3 * dim), dim, heads, &rope);
  const Tensor mlp = gelu(slice(h, 2, 3 * dim, ffn_dim));
  return joint + m[2] * out(concat({attn, mlp}, 2));
}

void SingleStreamBlock::collect(const std::string& prefix, ParamList& out_) const {
  mod.collect(prefix + ".mod", out_);
  qkv_mlp.collect(prefix + ".qkv_mlp", out_);
  out.collect(prefix + ".out", out_);
}

// ---------------------------------------------------------------------------
// Model

Dit::Dit(ModelConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  Rng r = rng.split("dit");
  const auto& c = config_;
  const auto P = c.patch[0] * c.patch[1] * c.patch[2];
  patch_embed_ = Linear(c.in_channels * P, c.dim, r);
  time_in_ = Linear(c.time_embed_dim, c.dim, r);
  time_out_ = Linear(c.dim, c.dim, r);
  pooled_in_ = Linear(c.dim, c.dim, r);
  pooled_out_ = Linear(c.dim, c.dim, r);
  if (c.guidance_embed) {
    guide_in_ = Linear(c.time_embed_dim, c.dim, r);
    guide_out_ = Linear(c.dim, c.dim, r, /*zero_init=*/true);
  }
  text_ = TextEncoder(c.text_vocab, c.dim, c.ffn_dim, c.heads, r);
  for (std::int64_t i = 0; i < c.n_dual; ++i) dual_.emplace_back(c, r);
  for (std::int64_t i = 0; i < c.n_single; ++i) single_.emplace_back(c, r);
  final_mod_ = Modulation(c.dim, 2, r);
  final_proj_ = Linear(c.dim, c.out_channels * P, r, /*zero_init=*/true);
}

Dit Dit::clone() const {
  Rng r(0);
  Dit copy(config_, r);
  copy_params(parameters(), copy.parameters());
  return copy;
}

Dit Dit::make_student(const Dit& teacher, Rng& rng) {
  if (teacher.config_.guidance_embed) throw ContractError("teacher already has a guidance input");
  ModelConfig c = teacher.config_;
  c.guidance_embed = true;
  Dit student(c, rng);
  const auto from = teacher.parameters();
  for (const auto& p : student.parameters()) {
    for (const auto& q : from) {
      if (q.name == p.name) {
        auto d = p.tensor.mutable_data();
        const auto s = q.tensor.data();
        std::copy(s.begin(), s.end(), d.begin());
        break;
      }
    }
  }
  return student;
}

TokenGrid Dit::patchify(const Tensor& x) const {
  if (x.rank() != 5) throw ShapeError("model input must be [B, T', C, H', W'], got " + shape_str(x.shape()));
  if (x.dim(2) != config_.in_channels) {
    throw ShapeError("channel axis: model expects " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(x.dim(2)));
  }
  TokenGrid g;
  const auto& p = config_.patch;
  token_count(x.shape(), p);
  g.t = x.dim(1) / p[0];
  g.h = x.dim(3) / p[1];
  g.w = x.dim(4) / p[2];
  g.coords = grid_coords(g.t, g.h, g.w);
  g.tokens = patch_embed_(extract_patches(x, p));
  return g;
}

ConditioningBundle Dit::encode_text(const Captions& captions) const { return text_(captions); }

Tensor Dit::global_vector(std::span<const double> t, const Tensor& pooled,
                          std::span<const double> guidance, std::int64_t batch) const {
  if (static_cast<std::int64_t>(t.size()) != batch) {
    throw ShapeError("batch axis: " + std::to_string(t.size()) + " timesteps for " +
                     std::to_string(batch) + " items");
  }
  Tensor vec = time_out_(silu(time_in_(sinusoidal_embedding(t, config_.time_embed_dim))));
  vec = vec + pooled_out_(silu(pooled_in_(pooled)));
  if (!guidance.empty() && !config_.guidance_embed) {
    throw ContractError("model has no guidance-scale input");
  }
  if (config_.guidance_embed) {
    std::vector<double> g(guidance.begin(), guidance.end());
    if (g.empty()) g.assign(static_cast<std::size_t>(batch), 1.0);
    if (static_cast<std::int64_t>(g.size()) != batch) {
      throw ShapeError("batch axis: " + std::to_string(g.size()) + " guidance scales for " +
                       std::to_string(batch) + " items");
    }
    vec = vec + guide_out_(silu(guide_in_(sinusoidal_embedding(g, config_.time_embed_dim))));
  }
  return vec;
}

Tensor Dit::forward(const Tensor& x, std::span<const double> t, const ConditioningBundle& cond,
                    std::span<const double> guidance) const {
  const TokenGrid grid = patchify(x);
  const auto B = x.dim(0);
  if (cond.text.dim(0) != B || cond.pooled.dim(0) != B) {
    throw ShapeError("batch axis: conditioning batch does not match latents");
  }
  const Tensor vec = global_vector(t, cond.pooled, guidance, B);
  const RopeTables rope = rope_tables(grid.coords, config_.rope_split, config_.rope_base);

  Tensor vid = grid.tokens, txt = cond.text;
  std::int64_t block = 0;
  for (const auto& b : dual_) {
    std::tie(vid, txt) = b(vid, txt, vec, rope);
    check_finite(vid, block, "dual");
    check_finite(txt, block, "dual");
    ++block;
  }
  const auto L = grid.length();
  if (!single_.empty()) {
    const RopeTables joint_rope = concat_rope(rope, identity_rope(txt.dim(1), config_.head_dim));
    Tensor joint = concat({vid, txt}, 1);
    for (const auto& b : single_) {
      joint = b(joint, vec, joint_rope);
      check_finite(joint, block, "single");
      ++block;
    }
    vid = slice(joint, 1, 0, L);
  }
  const auto fm = final_mod_(vec);
  const Tensor out = final_proj_(modulate(vid, fm[0], fm[1]));
  return merge_patches(out, config_.out_channels, grid.t, grid.h, grid.w, config_.patch);
}

Tensor Dit::velocity(const Tensor& x_t, std::span<const double> t, const Captions& captions,
                     std::span<const double> guidance) const {
  return forward(x_t, t, encode_text(captions), guidance);
}

ParamList Dit::parameters() const {
  ParamList p;
  patch_embed_.collect("patch_embed", p);
  time_in_.collect("time.in", p);
  time_out_.collect("time.out", p);
  pooled_in_.collect("pooled.in", p);
  pooled_out_.collect("pooled.out", p);
  if (config_.guidance_embed) {
    guide_in_.collect("guidance.in", p);
    guide_out_.collect("guidance.out", p);
  }
  text_.collect("text", p);
  for (std::size_t i = 0; i < dual_.size(); ++i) dual_[i].collect("dual" + std::to_string(i), p);
  for (std::size_t i = 0; i < single_.size(); ++i) single_[i].collect("single" + std::to_string(i), p);
  final_mod_.collect("final.mod", p);
  final_proj_.collect("final.proj", p);
  return p;
}

void Dit::i2v_adapt() {
  if (config_.i2v) throw ContractError("model is already adapted for image-to-video input");
  const auto C = config_.in_channels;
  const auto P = config_.patch[0] * config_.patch[1] * config_.patch[2];
  const auto dim = config_.dim;
  std::vector<double> w(static_cast<std::size_t>((2 * C + 1) * P * dim), 0.0);
  const auto old = patch_embed_.weight.data();
  std::copy(old.begin(), old.end(), w.begin());
  Tensor weight({(2 * C + 1) * P, dim}, std::move(w));
  weight.set_requires_grad(patch_embed_.weight.requires_grad());
  patch_embed_.weight = weight;
  config_.in_channels = 2 * C + 1;
  config_.i2v = true;
}

Tensor i2v_mask(std::int64_t t, std::int64_t h, std::int64_t w) {
  std::vector<double> d(static_cast<std::size_t>(t * h * w), 0.0);
  std::fill(d.begin(), d.begin() + h * w, 1.0);
  return Tensor({t, 1, h, w}, std::move(d));
}

Tensor i2v_input(const Tensor& x, const Tensor& first) {
  if (x.rank() != 5) throw ShapeError("i2v input: latents must be [B, T', C, H', W']");
  const auto& s = x.shape();
  if (first.shape() != Shape{s[0], s[2], s[3], s[4]}) {
    throw ShapeError("i2v input: first-frame latent " + shape_str(first.shape()) +
                     " does not match " + shape_str(x.shape()));
  }
  const Tensor cond = place(reshape(first, {s[0], 1, s[2], s[3], s[4]}), s, {0, 0, 0, 0, 0});
  std::vector<Tensor> masks(static_cast<std::size_t>(s[0]),
                            reshape(i2v_mask(s[1], s[3], s[4]), {1, s[1], 1, s[3], s[4]}));
  return concat({x, cond, concat(masks, 0)}, 2);
}

}  // namespace tinyvid
