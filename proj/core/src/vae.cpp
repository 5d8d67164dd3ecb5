// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tinyvid/checkpoint.hpp"
#include "tinyvid/error.hpp"

namespace tinyvid {

namespace {

bool power_of_two(std::int64_t v) { return v >= 1 && (v & (v - 1)) == 0; }

std::int64_t log2i(std::int64_t v) {
  std::int64_t n = 0;
  while ((std::int64_t{1} << n) < v) ++n;
  return n;
}

std::int64_t parse_int(const std::map<std::string, std::string>& kv, const std::string& key,
                       std::int64_t dflt) {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  try {
    std::size_t used = 0;
    const auto v = std::stoll(it->second, &used);
    if (used == it->second.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad integer for " + key + ": '" + it->second + "'");
}

// [F, C, H, W] <-> [1, C, F, H, W]
Tensor to_ncthw(const Tensor& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {1, 0, 2, 3}), {1, s[1], s[0], s[2], s[3]});
}

Tensor from_ncthw(const Tensor& x) {
  const auto& s = x.shape();
  return permute(reshape(x, {s[1], s[2], s[3], s[4]}), {1, 0, 2, 3});
}

Tensor upsample(const Tensor& x, bool temporal, bool spatial) {
  Tensor y = x;
  if (temporal) {
    const auto n = y.dim(2);
    std::vector<std::int64_t> idx;
    for (std::int64_t k = 0; k < 2 * n - 1; ++k) idx.push_back((k + 1) / 2);
    y = index_select(y, 2, idx);
  }
  if (spatial) {
    for (std::int64_t axis : {3, 4}) {
      const auto n = y.dim(axis);
      std::vector<std::int64_t> idx;
      for (std::int64_t k = 0; k < 2 * n; ++k) idx.push_back(k / 2);
      y = index_select(y, axis, idx);
    }
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------------------

void LatentSpec::validate() const {
  if (!power_of_two(c_t)) throw ConfigError("c_t must be a power of two, got " + std::to_string(c_t));
  if (!power_of_two(c_s)) throw ConfigError("c_s must be a power of two, got " + std::to_string(c_s));
  if (channels < 1) throw ConfigError("latent channels must be positive");
}

Shape LatentSpec::latent_shape(const Shape& v) const {
  if (v.size() != 4) throw ShapeError("video must be [T+1, 3, H, W], got " + shape_str(v));
  if (v[1] != 3) throw ShapeError("channel axis must have 3 entries, got " + std::to_string(v[1]));
  const auto t = v[0] - 1;
  if (t % c_t != 0) {
    throw ShapeError("time axis: T = " + std::to_string(t) + " must be divisible by c_t = " +
                     std::to_string(c_t));
  }
  if (v[2] % c_s != 0) {
    throw ShapeError("height axis: " + std::to_string(v[2]) + " must be divisible by c_s = " +
                     std::to_string(c_s));
  }
  if (v[3] % c_s != 0) {
    throw ShapeError("width axis: " + std::to_string(v[3]) + " must be divisible by c_s = " +
                     std::to_string(c_s));
  }
  return {t / c_t + 1, channels, v[2] / c_s, v[3] / c_s};
}

Shape LatentSpec::video_shape(const Shape& z) const {
  if (z.size() != 4) throw ShapeError("latent must be [T', C, h, w], got " + shape_str(z));
  if (z[1] != channels) {
    throw ShapeError("channel axis: latent has " + std::to_string(z[1]) + " channels, spec " +
                     std::to_string(channels));
  }
  return {c_t * (z[0] - 1) + 1, 3, c_s * z[2], c_s * z[3]};
}

std::int64_t VaeConfig::levels() const { return std::max(log2i(latent.c_t), log2i(latent.c_s)); }

std::int64_t VaeConfig::width(std::int64_t level) const {
  if (widths.empty()) throw ConfigError("VAE widths must not be empty");
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(level), widths.size() - 1);
  return widths[i];
}

std::map<std::string, std::string> VaeConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["vae.c_t"] = std::to_string(latent.c_t);
  kv["vae.c_s"] = std::to_string(latent.c_s);
  kv["vae.latent_channels"] = std::to_string(latent.channels);
  kv["vae.res_blocks"] = std::to_string(res_blocks);
  std::string w;
  for (std::size_t i = 0; i < widths.size(); ++i) w += (i ? "," : "") + std::to_string(widths[i]);
  kv["vae.widths"] = w;
  return kv;
}

VaeConfig VaeConfig::from_kv(const std::map<std::string, std::string>& kv) {
  VaeConfig c;
  c.latent.c_t = parse_int(kv, "vae.c_t", c.latent.c_t);
  c.latent.c_s = parse_int(kv, "vae.c_s", c.latent.c_s);
  c.latent.channels = parse_int(kv, "vae.latent_channels", c.latent.channels);
  c.res_blocks = parse_int(kv, "vae.res_blocks", c.res_blocks);
  if (auto it = kv.find("vae.widths"); it != kv.end()) {
    c.widths.clear();
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        c.widths.push_back(std::stoll(item));
      } catch (const std::exception&) {
        throw ConfigError("bad vae.widths entry '" + item + "'");
      }
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

Vae::Vae(VaeConfig config, Rng& rng) : config_(std::move(config)) {
  config_.latent.validate();
  if (config_.res_blocks < 0) throw ConfigError("res_blocks must be non-negative");
  for (auto w : config_.widths) {
    if (w < 1) throw ConfigError("VAE widths must be positive");
  }
  const auto L = config_.levels();
  const auto lt = log2i(config_.latent.c_t), ls = log2i(config_.latent.c_s);
  const auto C = config_.latent.channels;
  const auto causal = PaddingMode::causal_temporal;
  const Shape k3{3, 3, 3};
  Rng r = rng.split("vae");

  auto res_block = [&](std::int64_t w) {
    return ResBlock{Conv3d(w, w, k3, {}, causal, r), Conv3d(w, w, k3, {}, causal, r, 0.1)};
  };

  enc_in_ = Conv3d(3, config_.width(0), k3, {}, causal, r);
  for (std::int64_t l = 0; l < L; ++l) {
    Level lv;
    for (std::int64_t b = 0; b < config_.res_blocks; ++b) lv.blocks.push_back(res_block(config_.width(l)));
    lv.temporal = l < lt;
    lv.spatial = l < ls;
    const Stride3 s{lv.temporal ? 2 : 1, lv.spatial ? 2 : 1, lv.spatial ? 2 : 1};
    lv.resample = Conv3d(config_.width(l), config_.width(l + 1), k3, s, causal, r);
    enc_levels_.push_back(std::move(lv));
  }
  for (std::int64_t b = 0; b < config_.res_blocks; ++b) enc_mid_.push_back(res_block(config_.width(L)));
  enc_out_ = Conv3d(config_.width(L), 2 * C, k3, {}, causal, r, 0.5);

  dec_in_ = Conv3d(C, config_.width(L), k3, {}, causal, r);
  for (std::int64_t b = 0; b < config_.res_blocks; ++b) dec_mid_.push_back(res_block(config_.width(L)));
  for (std::int64_t l = L - 1; l >= 0; --l) {
    Level lv;
    lv.temporal = l < lt;
    lv.spatial = l < ls;
    lv.resample = Conv3d(config_.width(l + 1), config_.width(l), k3, {}, causal, r);
    for (std::int64_t b = 0; b < config_.res_blocks; ++b) lv.blocks.push_back(res_block(config_.width(l)));
    dec_levels_.push_back(std::move(lv));
  }
  dec_out_ = Conv3d(config_.width(0), 3, k3, {}, causal, r, 0.5);
}

Tensor Vae::run_blocks(const std::vector<ResBlock>& blocks, Tensor x) const {
  for (const auto& b : blocks) x = x + b.conv2(silu(b.conv1(silu(x))));
  return x;
}

std::pair<VideoLatent, VideoLatent> Vae::encode(const Tensor& video) const {
  const Shape zs = spec().latent_shape(video.shape());
  Tensor h = enc_in_(to_ncthw(scale(video, 2.0) + -1.0));
  for (const auto& lv : enc_levels_) {
    h = run_blocks(lv.blocks, h);
    h = (*lv.resample)(h);
  }
  h = run_blocks(enc_mid_, h);
  h = enc_out_(silu(h));
  const auto C = spec().channels;
  Tensor mean = from_ncthw(slice(h, 1, 0, C));
  Tensor logvar = clamp(from_ncthw(slice(h, 1, C, C)), kLogvarMin, kLogvarMax);
  if (mean.shape() != zs) {
    throw ShapeError("encoder produced " + shape_str(mean.shape()) + ", expected " + shape_str(zs));
  }
  return {VideoLatent{mean, spec(), video.shape()}, VideoLatent{logvar, spec(), video.shape()}};
}

Tensor Vae::decode(const Tensor& latent) const {
  const Shape vs = spec().video_shape(latent.shape());
  Tensor h = dec_in_(to_ncthw(latent));
  h = run_blocks(dec_mid_, h);
  for (const auto& lv : dec_levels_) {
    h = (*lv.resample)(upsample(h, lv.temporal, lv.spatial));
    h = run_blocks(lv.blocks, h);
  }
  h = dec_out_(silu(h));
  Tensor out = scale(from_ncthw(h), 0.5) + 0.5;
  if (out.shape() != vs) {
    throw ShapeError("decoder produced " + shape_str(out.shape()) + ", expected " + shape_str(vs));
  }
  return out;
}

Tensor Vae::decode(const VideoLatent& z) const {
  Tensor out = decode(z.tensor);
  if (!z.source_shape.empty() && out.shape() != z.source_shape) {
    throw ShapeError("latent decodes to " + shape_str(out.shape()) + " but its source was " +
                     shape_str(z.source_shape));
  }
  return out;
}

ParamList Vae::parameters() const {
  ParamList p;
  auto blocks = [&](const std::string& prefix, const std::vector<ResBlock>& bs) {
    for (std::size_t i = 0; i < bs.size(); ++i) {
      bs[i].conv1.collect(prefix + ".block" + std::to_string(i) + ".conv1", p);
      bs[i].conv2.collect(prefix + ".block" + std::to_string(i) + ".conv2", p);
    }
  };
  enc_in_.collect("encoder.conv_in", p);
  for (std::size_t l = 0; l < enc_levels_.size(); ++l) {
    const auto prefix = "encoder.level" + std::to_string(l);
    blocks(prefix, enc_levels_[l].blocks);
    enc_levels_[l].resample->collect(prefix + ".down", p);
  }
  blocks("encoder.mid", enc_mid_);
  enc_out_.collect("encoder.conv_out", p);
  dec_in_.collect("decoder.conv_in", p);
  blocks("decoder.mid", dec_mid_);
  for (std::size_t l = 0; l < dec_levels_.size(); ++l) {
    const auto prefix = "decoder.level" + std::to_string(l);
    dec_levels_[l].resample->collect(prefix + ".up", p);
    blocks(prefix, dec_levels_[l].blocks);
  }
  dec_out_.collect("decoder.conv_out", p);
  return p;
}

Tensor reparameterize(const Tensor& mean, const Tensor& logvar, Rng& rng) {
  if (mean.shape() != logvar.shape()) {
    throw ShapeError("mean " + shape_str(mean.shape()) + " vs logvar " + shape_str(logvar.shape()));
  }
  const Tensor eps = Tensor::randn(mean.shape(), rng);
  return mean + exp(scale(clamp(logvar, kLogvarMin, kLogvarMax), 0.5)) * eps;
}

VideoLatent reparameterize(const VideoLatent& mean, const VideoLatent& logvar, Rng& rng) {
  return {reparameterize(mean.tensor, logvar.tensor, rng), mean.spec, mean.source_shape};
}

// ---------------------------------------------------------------------------

void VaeLossWeights::validate() const {
  if (l1 < 0.0 || lpips < 0.0 || adv < 0.0 || kl < 0.0) {
    throw ConfigError("VAE loss weights must be non-negative");
  }
}

PatchDiscriminator::PatchDiscriminator(std::int64_t width, Rng& rng, double lr) {
  Rng r = rng.split("discriminator");
  const Shape k{1, 3, 3};
  c1_ = Conv3d(3, width, k, {1, 2, 2}, PaddingMode::zero, r);
  c2_ = Conv3d(width, width, k, {1, 2, 2}, PaddingMode::zero, r);
  c3_ = Conv3d(width, 1, k, {}, PaddingMode::zero, r);
  AdamOptions o;
  o.lr = lr;
  o.beta1 = 0.5;
  opt_ = std::make_unique<Adam>(parameters(), o);
}

Tensor PatchDiscriminator::logits(const Tensor& video) const {
  Tensor h = to_ncthw(scale(video, 2.0) + -1.0);
  h = silu(c1_(h));
  h = silu(c2_(h));
  return c3_(h);
}

Tensor PatchDiscriminator::operator()(const Tensor&, const Tensor& x_hat) {
  return mean(softplus(neg(logits(x_hat))));
}

double PatchDiscriminator::update(const Tensor& real, const Tensor& fake) {
  zero_grads(parameters());
  Tensor loss = mean(softplus(neg(logits(real.detach())))) + mean(softplus(logits(fake.detach())));
  loss.backward();
  opt_->step();
  return loss.item();
}

ParamList PatchDiscriminator::parameters() const {
  ParamList p;
  c1_.collect("disc.c1", p);
  c2_.collect("disc.c2", p);
  c3_.collect("disc.c3", p);
  return p;
}

Tensor kl_divergence(const Tensor& mean_, const Tensor& logvar) {
  const Tensor lv = clamp(logvar, kLogvarMin, kLogvarMax);
  return scale(mean(square(mean_) + exp(lv) + -1.0 - lv), 0.5);
}

double combine_vae_loss(const VaeLossWeights& w, double l1, double lpips, double adv, double kl) {
  return w.l1 * l1 + w.lpips * lpips + w.adv * adv + w.kl * kl;
}

VaeLoss vae_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mean_, const Tensor& logvar,
                 const VaeLossWeights& weights, LossProvider& lpips, LossProvider& adv) {
  weights.validate();
  if (x.shape() != x_hat.shape()) {
    throw ShapeError("reconstruction " + shape_str(x_hat.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  const Tensor l1 = mean(abs(x - x_hat));
  const Tensor lp = lpips(x, x_hat);
  const Tensor av = adv(x, x_hat);
  if (lp.item() < 0.0) throw ContractError(lpips.name() + " returned a negative loss");
  if (av.item() < 0.0) throw ContractError(adv.name() + " returned a negative loss");
  const Tensor kl = kl_divergence(mean_, logvar);
  VaeLoss out;
  out.total = scale(l1, weights.l1) + scale(lp, weights.lpips) + scale(av, weights.adv) +
              scale(kl, weights.kl);
  out.l1 = l1.item();
  out.lpips = lp.item();
  out.adv = av.item();
  out.kl = kl.item();
  return out;
}

// ---------------------------------------------------------------------------

void TileSpec::validate() const {
  const std::int64_t ext[3] = {t, h, w};
  const std::int64_t ov[3] = {overlap_t, overlap_h, overlap_w};
  const char* names[3] = {"time", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    if (ext[a] < 1) throw ConfigError(std::string("tile extent on ") + names[a] + " must be >= 1");
    if (ov[a] < 0 || ov[a] >= ext[a]) {
      throw ConfigError(std::string("tile overlap on ") + names[a] +
                        " must satisfy 0 <= overlap < tile");
    }
  }
}

std::vector<std::int64_t> tile_starts(std::int64_t n, std::int64_t tile, std::int64_t overlap) {
  if (tile >= n) return {0};
  const auto stride = tile - overlap;
  std::vector<std::int64_t> s;
  for (std::int64_t a = 0;; a += stride) {
    if (a + tile >= n) {
      s.push_back(n - tile);
      break;
    }
    s.push_back(a);
  }
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

AxisBlend axis_blend(const std::vector<std::int64_t>& begin, const std::vector<std::int64_t>& end,
                     std::int64_t extent) {
  AxisBlend ab{begin, end, {}};
  const auto n = begin.size();
  std::vector<double> total(static_cast<std::size_t>(extent), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = end[i] - begin[i];
    std::vector<double> w(static_cast<std::size_t>(len), 1.0);
    const std::int64_t left = i > 0 ? std::max<std::int64_t>(0, end[i - 1] - begin[i]) : 0;
    const std::int64_t right = i + 1 < n ? std::max<std::int64_t>(0, end[i] - begin[i + 1]) : 0;
    for (std::int64_t k = 0; k < len; ++k) {
      double v = 1.0;
      if (left > 0) v = std::min(v, static_cast<double>(k + 1) / static_cast<double>(left + 1));
      if (right > 0) v = std::min(v, static_cast<double>(len - k) / static_cast<double>(right + 1));
      w[static_cast<std::size_t>(k)] = v;
      total[static_cast<std::size_t>(begin[i] + k)] += v;
    }
    ab.weights.push_back(std::move(w));
  }
  for (std::int64_t p = 0; p < extent; ++p) {
    if (!(total[static_cast<std::size_t>(p)] > 0.0)) {
      throw ConfigError("tiling leaves position " + std::to_string(p) + " uncovered");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < ab.weights[i].size(); ++k) {
      ab.weights[i][k] /= total[static_cast<std::size_t>(begin[i]) + k];
    }
  }
  return ab;
}

namespace {

struct TilePlan {
  // Per axis (time, height, width): latent ranges and output blends.
  std::vector<std::int64_t> lat_begin[3], lat_end[3];
  AxisBlend blend[3];
};

// Latent-to-pixel mapping per axis; `pixel_out` selects decode (pixel) or
// latent-space (encode) output ranges.
TilePlan plan_tiles(const Shape& latent_shape, const LatentSpec& spec, const TileSpec& tiles,
                    bool pixel_out) {
  tiles.validate();
  TilePlan plan;
  const std::int64_t n[3] = {latent_shape[0], latent_shape[2], latent_shape[3]};
  const std::int64_t ext[3] = {tiles.t, tiles.h, tiles.w};
  const std::int64_t ov[3] = {tiles.overlap_t, tiles.overlap_h, tiles.overlap_w};
  for (int a = 0; a < 3; ++a) {
    const auto starts = tile_starts(n[a], ext[a], ov[a]);
    if (a == 0 && starts.size() > 1 && (ov[0] < 1 || ext[0] < 2)) {
      throw ConfigError(
          "temporal tiling needs tile >= 2 and overlap >= 1 latent frames: a causal decoder "
          "emits one frame for the first latent of each tile");
    }
    std::vector<std::int64_t> ob, oe;
    for (auto s : starts) {
      const auto e = std::min(s + ext[a], n[a]);
      plan.lat_begin[a].push_back(s);
      plan.lat_end[a].push_back(e);
      if (!pixel_out) {
        ob.push_back(s);
        oe.push_back(e);
      } else if (a == 0) {
        ob.push_back(spec.c_t * s);
        oe.push_back(spec.c_t * (e - 1) + 1);
      } else {
        ob.push_back(spec.c_s * s);
        oe.push_back(spec.c_s * e);
      }
    }
    const std::int64_t out_extent =
        !pixel_out ? n[a] : (a == 0 ? spec.c_t * (n[a] - 1) + 1 : spec.c_s * n[a]);
    plan.blend[a] = axis_blend(ob, oe, out_extent);
  }
  return plan;
}

Tensor weight_block(const TilePlan& plan, std::size_t i, std::size_t j, std::size_t k) {
  const auto& wt = plan.blend[0].weights[i];
  const auto& wh = plan.blend[1].weights[j];
  const auto& ww = plan.blend[2].weights[k];
  std::vector<double> d;
  d.reserve(wt.size() * wh.size() * ww.size());
  for (double a : wt)
    for (double b : wh)
      for (double c : ww) d.push_back(a * b * c);
  return Tensor({static_cast<std::int64_t>(wt.size()), 1, static_cast<std::int64_t>(wh.size()),
                 static_cast<std::int64_t>(ww.size())},
                std::move(d));
}

// Blends per-tile outputs [F_i, C, H_j, W_k] into `full` using the plan.
Tensor blend(const TilePlan& plan, const Shape& full,
             const std::function<Tensor(std::size_t, std::size_t, std::size_t)>& tile_out) {
  Tensor acc;
  for (std::size_t i = 0; i < plan.lat_begin[0].size(); ++i) {
    for (std::size_t j = 0; j < plan.lat_begin[1].size(); ++j) {
      for (std::size_t k = 0; k < plan.lat_begin[2].size(); ++k) {
        const Tensor out = tile_out(i, j, k);
        const Shape expect{plan.blend[0].end[i] - plan.blend[0].begin[i], full[1],
                           plan.blend[1].end[j] - plan.blend[1].begin[j],
                           plan.blend[2].end[k] - plan.blend[2].begin[k]};
        if (out.shape() != expect) {
          throw ShapeError("tile output " + shape_str(out.shape()) + ", expected " +
                           shape_str(expect));
        }
        const Tensor placed = place(out * weight_block(plan, i, j, k), full,
                                    {plan.blend[0].begin[i], 0, plan.blend[1].begin[j],
                                     plan.blend[2].begin[k]});
        acc = acc.defined() ? acc + placed : placed;
      }
    }
  }
  return acc;
}

bool single_tile(const TilePlan& p) {
  return p.lat_begin[0].size() == 1 && p.lat_begin[1].size() == 1 && p.lat_begin[2].size() == 1;
}

}  // namespace

Tensor blend_weight_field(const Shape& latent_shape, const LatentSpec& spec,
                          const TileSpec& tiles) {
  const TilePlan plan = plan_tiles(latent_shape, spec, tiles, true);
  const Shape full{spec.c_t * (latent_shape[0] - 1) + 1, 1, spec.c_s * latent_shape[2],
                   spec.c_s * latent_shape[3]};
  NoGradGuard no_grad;
  return blend(plan, full, [&](std::size_t i, std::size_t j, std::size_t k) {
    return Tensor::ones({plan.blend[0].end[i] - plan.blend[0].begin[i], 1,
                         plan.blend[1].end[j] - plan.blend[1].begin[j],
                         plan.blend[2].end[k] - plan.blend[2].begin[k]});
  });
}

Tensor tiled_decode(const Tensor& latent, const LatentSpec& spec, const TileSpec& tiles,
                    const DecodeFn& decode) {
  const Shape full = spec.video_shape(latent.shape());
  const TilePlan plan = plan_tiles(latent.shape(), spec, tiles, true);
  if (single_tile(plan)) return decode(latent);
  return blend(plan, full, [&](std::size_t i, std::size_t j, std::size_t k) {
    const Tensor z = crop(latent,
                          {plan.lat_begin[0][i], 0, plan.lat_begin[1][j], plan.lat_begin[2][k]},
                          {plan.lat_end[0][i] - plan.lat_begin[0][i], latent.dim(1),
                           plan.lat_end[1][j] - plan.lat_begin[1][j],
                           plan.lat_end[2][k] - plan.lat_begin[2][k]});
    return decode(z);
  });
}

Tensor tiled_decode(const Vae& vae, const VideoLatent& z, const TileSpec& tiles) {
  return tiled_decode(z.tensor, vae.spec(), tiles, [&](const Tensor& t) { return vae.decode(t); });
}

std::pair<VideoLatent, VideoLatent> tiled_encode(const Vae& vae, const Tensor& video,
                                                 const TileSpec& tiles) {
  const auto& spec = vae.spec();
  const Shape zs = spec.latent_shape(video.shape());
  const TilePlan plan = plan_tiles(zs, spec, tiles, false);
  if (single_tile(plan)) return vae.encode(video);
  std::vector<Tensor> means, logvars;
  std::vector<std::array<std::size_t, 3>> index;
  for (std::size_t i = 0; i < plan.lat_begin[0].size(); ++i) {
    for (std::size_t j = 0; j < plan.lat_begin[1].size(); ++j) {
      for (std::size_t k = 0; k < plan.lat_begin[2].size(); ++k) {
        const auto t0 = spec.c_t * plan.lat_begin[0][i];
        const auto t1 = spec.c_t * (plan.lat_end[0][i] - 1) + 1;
        const auto h0 = spec.c_s * plan.lat_begin[1][j];
        const auto h1 = spec.c_s * plan.lat_end[1][j];
        const auto w0 = spec.c_s * plan.lat_begin[2][k];
        const auto w1 = spec.c_s * plan.lat_end[2][k];
        const auto enc = vae.encode(crop(video, {t0, 0, h0, w0}, {t1 - t0, 3, h1 - h0, w1 - w0}));
        means.push_back(enc.first.tensor);
        logvars.push_back(enc.second.tensor);
      }
    }
  }
  auto gather = [&](const std::vector<Tensor>& parts) {
    std::size_t n = 0;
    return blend(plan, zs, [&](std::size_t, std::size_t, std::size_t) { return parts[n++]; });
  };
  return {VideoLatent{gather(means), spec, video.shape()},
          VideoLatent{gather(logvars), spec, video.shape()}};
}

// ---------------------------------------------------------------------------

Tensor VaeDataset::render(std::size_t index, std::int64_t resolution, std::int64_t frames,
                          std::int64_t interval) const {
  if (index >= motions.size()) throw ContractError("VAE dataset index out of range");
  const double s = static_cast<double>(resolution) / static_cast<double>(base_resolution);
  Motion m = motions[index];
  m.x0 *= s;
  m.y0 *= s;
  const double speed = m.speed * s * static_cast<double>(interval);
  m.omega = s > 0.0 ? m.omega * m.speed * static_cast<double>(interval) / speed : 0.0;
  if (speed == 0.0) m.omega = 0.0;
  m.speed = speed;
  return render_clip(m, frames, resolution, resolution, radius * s);
}

std::int64_t draw_interval(Rng& rng, std::int64_t max_interval) {
  if (max_interval < 1) throw ConfigError("max sampling interval must be >= 1");
  return 1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(max_interval)));
}

bool is_image_item(std::int64_t i, std::int64_t video_per_image) {
  if (video_per_image < 0) throw ConfigError("video_per_image must be non-negative");
  return i % (video_per_image + 1) == video_per_image;
}

void write_vae_metrics_header(std::ostream& out) {
  out << "step,l1,lpips,adv,kl,total,stage,resolution\n";
}

void write_vae_metrics_row(std::ostream& out, const VaeStepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%lld,%lld\n",
                static_cast<long long>(m.step), m.l1, m.lpips, m.adv, m.kl, m.total,
                static_cast<long long>(m.stage), static_cast<long long>(m.resolution));
  out << buf;
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a.detach(), b.detach()).item();
  return 10.0 * std::log10(1.0 / std::max(m, 1e-300));
}

VaeTrainReport train_vae(Vae& vae, const VaeDataset& data, const VaeTrainConfig& config, Rng& rng,
                         LossProvider* lpips) {
  if (data.motions.empty()) throw ConfigError("VAE training needs a non-empty dataset");
  if (config.stages.empty()) throw ConfigError("VAE training needs at least one stage");
  for (std::size_t i = 1; i < config.stages.size(); ++i) {
    if (config.stages[i].resolution < config.stages[i - 1].resolution ||
        config.stages[i].frames < config.stages[i - 1].frames) {
      throw ConfigError("VAE curriculum must not shrink resolution or duration");
    }
  }
  config.weights.validate();
  if (config.tiling_steps > 0) config.tiles.validate();

  AdamOptions ao;
  ao.lr = config.lr;
  ao.clip_norm = config.clip_norm;
  Adam opt(vae.parameters(), ao);
  NullLossProvider null_provider;
  LossProvider& lp = lpips ? *lpips : null_provider;
  Rng disc_rng = rng.split("disc");
  std::unique_ptr<PatchDiscriminator> disc;
  if (config.use_discriminator) disc = std::make_unique<PatchDiscriminator>(8, disc_rng);

  std::ofstream metrics;
  if (!config.metrics_path.empty()) {
    metrics.open(config.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + config.metrics_path);
    write_vae_metrics_header(metrics);
  }

  Rng data_rng = rng.split("data");
  Rng noise_rng = rng.split("noise");
  Rng tile_rng = rng.split("tiling");
  VaeTrainReport report;
  std::int64_t step = 0;

  // Stages, then the random-tiling phase at the last stage's shape.
  std::vector<VaeStage> plan = config.stages;
  if (config.tiling_steps > 0) plan.push_back({plan.back().resolution, plan.back().frames, config.tiling_steps});
  const std::size_t tiling_stage = config.tiling_steps > 0 ? plan.size() - 1 : plan.size();

  for (std::size_t s = 0; s < plan.size(); ++s) {
    const auto& st = plan[s];
    for (std::int64_t i = 0; i < st.steps; ++i, ++step) {
      const bool image = is_image_item(step, config.video_per_image);
      const auto idx = static_cast<std::size_t>(data_rng.uniform_int(data.motions.size()));
      const auto interval =
          config.fixed_interval > 0 ? config.fixed_interval : draw_interval(data_rng, config.max_interval);
      const std::int64_t frames = image ? 1 : st.frames;
      const Tensor x = data.render(idx, st.resolution, frames, interval);

      const auto [mean, logvar] = vae.encode(x);
      const VideoLatent z = config.deterministic_latent ? mean : reparameterize(mean, logvar, noise_rng);
      const bool tiled = s == tiling_stage && tile_rng.uniform() < config.tiling_probability;
      const Tensor x_hat = tiled ? tiled_decode(vae, z, config.tiles) : vae.decode(z);

      const bool adv_on = disc && step >= config.discriminator_start;
      NullLossProvider off;
      LossProvider& adv = adv_on ? static_cast<LossProvider&>(*disc) : off;
      const VaeLoss loss = vae_loss(x, x_hat, mean.tensor, logvar.tensor, config.weights, lp, adv);
      if (!std::isfinite(loss.total.item())) {
        throw NumericError("non-finite VAE loss at step " + std::to_string(step) +
                               (config.checkpoint_path.empty() ? std::string()
                                                               : "; last good checkpoint kept at " +
                                                                     config.checkpoint_path),
                           static_cast<long>(step));
      }
      loss.total.backward();
      opt.step();
      if (adv_on) disc->update(x, x_hat);

      VaeStepMetrics m{step,  loss.l1,         loss.lpips,      loss.adv, loss.kl,
                       loss.total.item(),      static_cast<std::int64_t>(s),
                       st.resolution,          frames,          interval, image, tiled};
      report.steps.push_back(m);
      if (metrics) write_vae_metrics_row(metrics, m);
      if (!config.checkpoint_path.empty() && config.checkpoint_every > 0 &&
          (step + 1) % config.checkpoint_every == 0) {
        save_checkpoint(config.checkpoint_path, make_checkpoint(vae.config().to_kv(), vae.parameters()));
      }
    }
  }
  if (!config.checkpoint_path.empty()) {
    save_checkpoint(config.checkpoint_path, make_checkpoint(vae.config().to_kv(), vae.parameters()));
  }
  return report;
}

}  // namespace tinyvid
