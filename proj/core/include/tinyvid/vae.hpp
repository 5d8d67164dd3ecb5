// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Causal 3D VAE. A video of T+1 frames, shape [T+1, 3, H, W], maps to a
// latent of shape [T/c_t + 1, C, H/c_s, W/c_s]. The first frame is encoded on
// its own, so a single image is just a one-frame video.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tinyvid/data.hpp"
#include "tinyvid/nn.hpp"
#include "tinyvid/optim.hpp"
#include "tinyvid/rng.hpp"
#include "tinyvid/tensor.hpp"

namespace tinyvid {

struct LatentSpec {
  std::int64_t c_t = 4;
  std::int64_t c_s = 8;
  std::int64_t channels = 16;

  void validate() const;
  /// Latent shape for a [T+1, 3, H, W] video; ShapeError names the axis.
  Shape latent_shape(const Shape& video_shape) const;
  /// Pixel shape decoded from a [T', C, h, w] latent.
  Shape video_shape(const Shape& latent_shape) const;
};

struct VideoLatent {
  Tensor tensor;  // [T/c_t + 1, C, H/c_s, W/c_s]
  LatentSpec spec;
  Shape source_shape;  // [T+1, 3, H, W]
};

struct VaeConfig {
  LatentSpec latent;
  /// Channel width per resolution level, finest first. Missing levels repeat
  /// the last width.
  std::vector<std::int64_t> widths{16, 32, 32, 32};
  std::int64_t res_blocks = 2;

  /// Number of downsampling steps: max(log2 c_t, log2 c_s).
  std::int64_t levels() const;
  std::int64_t width(std::int64_t level) const;

  std::map<std::string, std::string> to_kv() const;
  static VaeConfig from_kv(const std::map<std::string, std::string>& kv);
};

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

class Vae {
 public:
  Vae(VaeConfig config, Rng& rng);

  /// video [T+1, 3, H, W] with values in [0, 1] -> (mean, logvar).
  std::pair<VideoLatent, VideoLatent> encode(const Tensor& video) const;
  /// latent [T', C, h, w] -> video [c_t (T'-1) + 1, 3, c_s h, c_s w].
  Tensor decode(const Tensor& latent) const;
  Tensor decode(const VideoLatent& z) const;

  const VaeConfig& config() const { return config_; }
  const LatentSpec& spec() const { return config_.latent; }
  ParamList parameters() const;

 private:
  struct ResBlock {
    Conv3d conv1, conv2;
  };
  struct Level {
    std::vector<ResBlock> blocks;
    std::optional<Conv3d> resample;
    bool temporal = false;
    bool spatial = false;
  };

  Tensor run_blocks(const std::vector<ResBlock>& blocks, Tensor x) const;

  VaeConfig config_;
  Conv3d enc_in_, enc_out_;
  std::vector<Level> enc_levels_;
  std::vector<ResBlock> enc_mid_;
  Conv3d dec_in_, dec_out_;
  std::vector<ResBlock> dec_mid_;
  std::vector<Level> dec_levels_;  // coarsest first
};

/// z = mean + exp(logvar / 2) eps with logvar clamped to [-30, 20].
VideoLatent reparameterize(const VideoLatent& mean, const VideoLatent& logvar, Rng& rng);
Tensor reparameterize(const Tensor& mean, const Tensor& logvar, Rng& rng);

// ---------------------------------------------------------------------------
// Loss

struct VaeLossWeights {
  double l1 = 1.0;
  double lpips = 0.1;
  double adv = 0.05;
  double kl = 1e-6;

  void validate() const;
};

/// Auxiliary non-negative loss term over (x, x_hat). Implementations must be
/// differentiable in x_hat.
class LossProvider {
 public:
  virtual ~LossProvider() = default;
  virtual Tensor operator()(const Tensor& x, const Tensor& x_hat) = 0;
  virtual std::string name() const = 0;
};

/// Contributes exactly zero.
class NullLossProvider : public LossProvider {
 public:
  Tensor operator()(const Tensor&, const Tensor&) override { return Tensor::scalar(0.0); }
  std::string name() const override { return "null"; }
};

/// Small per-frame patch discriminator with the non-saturating GAN loss.
/// As a provider it returns the generator term mean softplus(-D(x_hat)).
class PatchDiscriminator : public LossProvider {
 public:
  PatchDiscriminator(std::int64_t width, Rng& rng, double lr = 2e-4);
  Tensor operator()(const Tensor& x, const Tensor& x_hat) override;
  std::string name() const override { return "patch_discriminator"; }

  /// Logit map for a [F, 3, H, W] clip.
  Tensor logits(const Tensor& video) const;
  /// One discriminator update on (real, fake); returns its loss.
  double update(const Tensor& real, const Tensor& fake);
  ParamList parameters() const;

 private:
  Conv3d c1_, c2_, c3_;
  std::unique_ptr<Adam> opt_;
};

struct VaeLoss {
  Tensor total;
  double l1 = 0.0, lpips = 0.0, adv = 0.0, kl = 0.0;
};

/// 1/2 mean(mu^2 + e^logvar - 1 - logvar); non-negative.
Tensor kl_divergence(const Tensor& mean, const Tensor& logvar);

/// w_l1 L1 + w_lpips L_lpips + w_adv L_adv + w_kl L_kl. A negative provider
/// value is a ContractError.
VaeLoss vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mean, const Tensor& logvar,
                 const VaeLossWeights& weights, LossProvider& lpips, LossProvider& adv);

/// Same weighting applied to precomputed component values.
double combine_vae_loss(const VaeLossWeights& w, double l1, double lpips, double adv, double kl);

// ---------------------------------------------------------------------------
// Tiling

struct TileSpec {
  // Extents and overlaps in latent units.
  std::int64_t t = 4, h = 4, w = 4;
  std::int64_t overlap_t = 1, overlap_h = 1, overlap_w = 1;

  void validate() const;
};

/// Start offsets of tiles of `tile` with `overlap` covering [0, n).
std::vector<std::int64_t> tile_starts(std::int64_t n, std::int64_t tile, std::int64_t overlap);

/// Blend weight of every tile along one axis, in output units: weights[i][p]
/// for p in [begin_i, end_i). Weights ramp linearly over overlaps and are
/// normalized to sum to 1 at every position.
struct AxisBlend {
  std::vector<std::int64_t> begin, end;  // output ranges per tile
  std::vector<std::vector<double>> weights;
};
AxisBlend axis_blend(const std::vector<std::int64_t>& begin, const std::vector<std::int64_t>& end,
                     std::int64_t extent);

/// Sum over tiles of the product of per-axis weights, per output element.
/// Equal to 1 everywhere for any legal tiling (tested).
Tensor blend_weight_field(const Shape& latent_shape, const LatentSpec& spec,
                          const TileSpec& tiles);

using DecodeFn = std::function<Tensor(const Tensor&)>;

/// Decodes overlapping latent tiles with `decode` and blends them. Temporal
/// latent tile [a, b) maps to pixel frames [c_t a, c_t (b-1)]; spatial [a, b)
/// maps to [c_s a, c_s b). Differentiable.
Tensor tiled_decode(const Tensor& latent, const LatentSpec& spec, const TileSpec& tiles,
                    const DecodeFn& decode);
Tensor tiled_decode(const Vae& vae, const VideoLatent& z, const TileSpec& tiles);

/// Encodes overlapping pixel tiles and blends their means and log-variances
/// in latent space.
std::pair<VideoLatent, VideoLatent> tiled_encode(const Vae& vae, const Tensor& video,
                                                 const TileSpec& tiles);

// ---------------------------------------------------------------------------
// Training

struct VaeStage {
  std::int64_t resolution = 16;  // square side in pixels
  std::int64_t frames = 9;       // T + 1 for video items
  std::int64_t steps = 100;
};

struct VaeTrainConfig {
  std::vector<VaeStage> stages{{16, 9, 100}};
  /// Video items per image item.
  std::int64_t video_per_image = 4;
  std::int64_t max_interval = 8;
  double lr = 1e-3;
  double clip_norm = 1.0;
  VaeLossWeights weights;
  bool use_discriminator = false;
  std::int64_t discriminator_start = 0;
  /// Steps of the random-tiling phase appended after the stages; tiled
  /// decoding is enabled with probability tiling_probability per step.
  std::int64_t tiling_steps = 0;
  double tiling_probability = 0.5;
  TileSpec tiles;
  /// Fixed interval for every video item (tests); 0 draws from 1..max.
  std::int64_t fixed_interval = 0;
  /// Train on the posterior mean instead of a sample.
  bool deterministic_latent = false;
  std::string checkpoint_path;  // empty: no checkpoints
  std::int64_t checkpoint_every = 0;
  std::string metrics_path;  // empty: no CSV
};

struct VaeStepMetrics {
  std::int64_t step;
  double l1, lpips, adv, kl, total;
  std::int64_t stage;
  std::int64_t resolution;
  std::int64_t frames;
  std::int64_t interval;
  bool image;
  bool tiled;
};

struct VaeTrainReport {
  std::vector<VaeStepMetrics> steps;
};

/// Motions to render clips from at any resolution and sampling interval.
struct VaeDataset {
  std::vector<Motion> motions;
  std::int64_t base_resolution = 16;
  double radius = 3.0;
  /// Renders clip `index` at `resolution` with `frames` frames, `interval`
  /// source frames apart.
  Tensor render(std::size_t index, std::int64_t resolution, std::int64_t frames,
                std::int64_t interval) const;
};

/// Draws a sampling interval uniformly from 1..max.
std::int64_t draw_interval(Rng& rng, std::int64_t max_interval);
/// True when training item `i` is an image under the video:image ratio.
bool is_image_item(std::int64_t i, std::int64_t video_per_image);

VaeTrainReport train_vae(Vae& vae, const VaeDataset& data, const VaeTrainConfig& config, Rng& rng,
                         LossProvider* lpips = nullptr);

void write_vae_metrics_header(std::ostream& out);
void write_vae_metrics_row(std::ostream& out, const VaeStepMetrics& m);

/// 10 log10(1 / mse) for signals in [0, 1].
double psnr(const Tensor& a, const Tensor& b);

}  // namespace tinyvid
