// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Diffusion transformer over video latents. Latents [B, T', C, H', W'] are cut
// into (k_t, k_h, k_w) patches and projected to tokens. Video and caption
// tokens first run through dual-stream blocks, which keep separate weights and
// attend within their own stream, then through single-stream blocks over the
// concatenated sequence (video first, text after). Every block is modulated by
// a global vector: timestep embedding + pooled caption vector (+ guidance
// embedding for distilled students).

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tinyvid/flow.hpp"
#include "tinyvid/nn.hpp"
#include "tinyvid/rng.hpp"
#include "tinyvid/tensor.hpp"

namespace tinyvid {

struct ModelConfig {
  std::int64_t n_dual = 2;
  std::int64_t n_single = 4;
  std::int64_t dim = 128;
  std::int64_t ffn_dim = 512;
  std::int64_t heads = 4;
  std::int64_t head_dim = 32;
  std::array<std::int64_t, 3> rope_split{8, 12, 12};
  std::array<std::int64_t, 3> patch{1, 2, 2};
  double rope_base = 1e4;
  std::int64_t time_embed_dim = 256;

  std::int64_t in_channels = 16;
  std::int64_t out_channels = 16;
  std::int64_t text_vocab = 64;
  bool guidance_embed = false;
  bool i2v = false;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// Layer sizes of the 13B-parameter reference configuration.
ModelConfig reference_config();

/// Tokens with their grid. coords[i] = (t, h, w) in row-major order.
struct TokenGrid {
  Tensor tokens;  // [B, L, dim]
  std::int64_t t = 0, h = 0, w = 0;
  std::vector<std::array<std::int64_t, 3>> coords;

  std::int64_t length() const { return t * h * w; }
};

/// Token count (T'/k_t)(H'/k_h)(W'/k_w); ShapeError when a latent axis is
/// not divisible by its patch extent.
std::int64_t token_count(const Shape& latent, const std::array<std::int64_t, 3>& patch);

/// [B, T', C, H', W'] -> [B, L, C k_t k_h k_w] with features ordered
/// (channel, k_t, k_h, k_w).
Tensor extract_patches(const Tensor& x, const std::array<std::int64_t, 3>& patch);
/// Inverse of extract_patches for `channels` output channels.
Tensor merge_patches(const Tensor& tokens, std::int64_t channels, std::int64_t t, std::int64_t h,
                     std::int64_t w, const std::array<std::int64_t, 3>& patch);

std::vector<std::array<std::int64_t, 3>> grid_coords(std::int64_t t, std::int64_t h,
                                                     std::int64_t w);

/// Rotation tables for rotary(): cos/sin [L, head_dim / 2]. The head
/// channels are split into (d_t, d_h, d_w) segments rotated by the t, h and w
/// coordinate respectively, with frequencies base^(-2j / d_a).
struct RopeTables {
  Tensor cos, sin;
};
RopeTables rope_tables(const std::vector<std::array<std::int64_t, 3>>& coords,
                       const std::array<std::int64_t, 3>& split, double base = 1e4);
/// Tables for `count` positions with zero angle.
RopeTables identity_rope(std::int64_t count, std::int64_t head_dim);
/// Appends b after a along the position axis.
RopeTables concat_rope(const RopeTables& a, const RopeTables& b);

/// Rotates q and k [B, heads, L, head_dim].
std::pair<Tensor, Tensor> rope3d(const Tensor& q, const Tensor& k,
                                 const std::vector<std::array<std::int64_t, 3>>& coords,
                                 const std::array<std::int64_t, 3>& split, double base = 1e4);

/// [cos(v f_i), sin(v f_i)] with v = scale * value and f_i = 10^(-4 i / half),
/// half = width / 2. Output [values.size(), width].
Tensor sinusoidal_embedding(std::span<const double> values, std::int64_t width,
                            double scale = 1000.0);

/// Text tokens and the pooled global vector.
struct ConditioningBundle {
  Tensor text;    // [B, L_txt, dim]
  Tensor pooled;  // [B, dim]
};

/// Position of the last non-padding token, or 0 for an all-padding caption.
std::int64_t last_content_position(const TokenIds& ids);

/// Attention + MLP block without modulation, used to refine caption tokens.
struct RefinerBlock {
  Linear qkv, proj, fc1, fc2;
  std::int64_t heads = 1;

  RefinerBlock() = default;
  RefinerBlock(std::int64_t dim, std::int64_t ffn_dim, std::int64_t heads, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Learned embedding table over caption token ids with one bidirectional
/// refiner block. The pooled vector is the refined last non-padding token.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(std::int64_t vocab, std::int64_t dim, std::int64_t ffn_dim, std::int64_t heads,
              Rng& rng);
  ConditioningBundle operator()(const Captions& captions) const;
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Embedding embed_;
  RefinerBlock refiner_;
};

/// Per-stream adaptive layer norm parameters: shift, scale, gate for the
/// attention branch and for the MLP branch. Zero-initialized.
struct Modulation {
  Linear linear;
  std::int64_t chunks = 6;

  Modulation() = default;
  Modulation(std::int64_t dim, std::int64_t chunks, Rng& rng);
  /// vec [B, dim] -> chunks tensors [B, 1, dim].
  std::vector<Tensor> operator()(const Tensor& vec) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct StreamWeights {
  Modulation mod;
  Linear qkv, proj, fc1, fc2;

  StreamWeights() = default;
  StreamWeights(std::int64_t dim, std::int64_t ffn_dim, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Two streams with separate weights; attention never crosses streams.
struct DualStreamBlock {
  StreamWeights video, text;
  std::int64_t heads = 1;

  DualStreamBlock() = default;
  DualStreamBlock(const ModelConfig& c, Rng& rng);
  /// Video tokens are rotated by `rope`; text tokens are not.
  std::pair<Tensor, Tensor> operator()(const Tensor& video_tokens, const Tensor& text_tokens,
                                       const Tensor& vec, const RopeTables& rope) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// One joint stream: full attention and a parallel MLP branch.
struct SingleStreamBlock {
  Modulation mod;
  Linear qkv_mlp, out;
  std::int64_t heads = 1;
  std::int64_t dim = 0;
  std::int64_t ffn_dim = 0;

  SingleStreamBlock() = default;
  SingleStreamBlock(const ModelConfig& c, Rng& rng);
  /// `rope` covers the whole joint sequence (text entries at zero angle).
  Tensor operator()(const Tensor& joint, const Tensor& vec, const RopeTables& rope) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

class Dit : public VelocityModel {
 public:
  Dit(ModelConfig config, Rng& rng);

  /// Builds a guidance-embedding student holding a copy of `teacher`'s
  /// weights. The guidance branch starts at zero, so the student initially
  /// reproduces the teacher.
  static Dit make_student(const Dit& teacher, Rng& rng);
  /// Deep copy with its own parameter storage.
  Dit clone() const;

  /// Patch embedding of x [B, T', C_in, H', W'].
  TokenGrid patchify(const Tensor& x) const;

  ConditioningBundle encode_text(const Captions& captions) const;

  /// Velocity [B, T', C_out, H', W'] for x [B, T', C_in, H', W']. An empty
  /// guidance span means scale 1 for a student. NumericError carries the
  /// index of the first block whose output is not finite (dual blocks first).
  Tensor forward(const Tensor& x, std::span<const double> t, const ConditioningBundle& cond,
                 std::span<const double> guidance = {}) const;

  Tensor velocity(const Tensor& x_t, std::span<const double> t, const Captions& captions,
                  std::span<const double> guidance = {}) const override;
  ParamList parameters() const override;
  bool accepts_guidance() const override { return config_.guidance_embed; }

  /// Grows the patch embedding to 2C+1 input channels for image-to-video:
  /// [latent, first-frame latent, mask]. Original weights are kept and the
  /// new channels start at zero. ContractError when already adapted.
  void i2v_adapt();

  const ModelConfig& config() const { return config_; }

  /// Test hook: the dual and single blocks in order.
  std::vector<DualStreamBlock>& dual_blocks() { return dual_; }
  std::vector<SingleStreamBlock>& single_blocks() { return single_; }

 private:
  Tensor global_vector(std::span<const double> t, const Tensor& pooled,
                       std::span<const double> guidance, std::int64_t batch) const;

  ModelConfig config_;
  Linear patch_embed_;
  Linear time_in_, time_out_;
  Linear pooled_in_, pooled_out_;
  Linear guide_in_, guide_out_;
  TextEncoder text_;
  std::vector<DualStreamBlock> dual_;
  std::vector<SingleStreamBlock> single_;
  Modulation final_mod_;
  Linear final_proj_;
};

/// Mask [T', 1, H', W'] with ones at the first temporal position.
Tensor i2v_mask(std::int64_t t, std::int64_t h, std::int64_t w);

/// Input for an adapted model: concat over channels of x [B, T', C, H', W'],
/// the first-frame latent first [B, C, H', W'] placed at t = 0 with zeros
/// elsewhere, and the mask.
Tensor i2v_input(const Tensor& x, const Tensor& first);

}  // namespace tinyvid
