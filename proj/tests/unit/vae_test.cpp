// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tinyvid/checkpoint.hpp"
#include "tinyvid/error.hpp"
#include "tinyvid/vae.hpp"

namespace tinyvid {
namespace {

VaeConfig tiny_config() {
  VaeConfig c;
  c.widths = {4, 8};
  c.res_blocks = 1;
  return c;
}

// Pointwise affine decoder: pixel (f, c, y, x) reads latent
// (ceil(f / c_t), :, y / c_s, x / c_s) and mixes channels.
Tensor affine_decode(const Tensor& z, const LatentSpec& spec) {
  const Shape out = spec.video_shape(z.shape());
  std::vector<double> d(static_cast<std::size_t>(shape_numel(out)));
  const auto C = z.dim(1), h = z.dim(2), w = z.dim(3);
  std::size_t i = 0;
  for (std::int64_t f = 0; f < out[0]; ++f) {
    const auto lf = (f + spec.c_t - 1) / spec.c_t;
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < out[2]; ++y) {
        for (std::int64_t x = 0; x < out[3]; ++x) {
          double v = 0.1 * static_cast<double>(c + 1);
          for (std::int64_t k = 0; k < C; ++k) {
            v += (0.3 + 0.05 * static_cast<double>(c * C + k)) *
                 z.at({lf, k, y / spec.c_s, x / spec.c_s});
          }
          d[i++] = v;
        }
      }
    }
  }
  (void)h;
  (void)w;
  return Tensor(out, std::move(d));
}

TEST(LatentShape, DefaultCompression) {
  LatentSpec spec;
  EXPECT_EQ(spec.latent_shape({17, 3, 64, 64}), (Shape{5, 16, 8, 8}));
  EXPECT_EQ(spec.latent_shape({1, 3, 64, 64}), (Shape{1, 16, 8, 8}));
  EXPECT_EQ(spec.video_shape({5, 16, 8, 8}), (Shape{17, 3, 64, 64}));
}

TEST(LatentShape, ErrorsNameAxisAndDivisor) {
  LatentSpec spec;
  try {
    spec.latent_shape({16, 3, 64, 64});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("time"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("c_t = 4"), std::string::npos);
  }
  try {
    spec.latent_shape({17, 3, 60, 64});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("c_s = 8"), std::string::npos);
  }
  EXPECT_THROW(spec.latent_shape({17, 3, 64, 12}), ShapeError);
  EXPECT_THROW(spec.latent_shape({17, 4, 64, 64}), ShapeError);
}

TEST(LatentShape, SpecValidation) {
  EXPECT_THROW((LatentSpec{3, 8, 16}.validate()), ConfigError);
  EXPECT_THROW((LatentSpec{4, 0, 16}.validate()), ConfigError);
  EXPECT_THROW((LatentSpec{4, 8, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((LatentSpec{1, 1, 1}.validate()));
}

TEST(Vae, EncodeDecodeShapes) {
  Rng rng(3);
  Vae vae(tiny_config(), rng);
  NoGradGuard ng;
  const Tensor video = Tensor::uniform({9, 3, 16, 16}, rng, 0.0, 1.0);
  const auto [mean, logvar] = vae.encode(video);
  EXPECT_EQ(mean.tensor.shape(), (Shape{3, 16, 2, 2}));
  EXPECT_EQ(logvar.tensor.shape(), (Shape{3, 16, 2, 2}));
  EXPECT_EQ(vae.decode(mean).shape(), video.shape());

  const Tensor image = Tensor::uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
  EXPECT_EQ(vae.encode(image).first.tensor.shape(), (Shape{1, 16, 2, 2}));
  EXPECT_EQ(vae.decode(vae.encode(image).first).shape(), image.shape());
}

TEST(Vae, FirstLatentFrameIsCausal) {
  Rng rng(4);
  Vae vae(tiny_config(), rng);
  NoGradGuard ng;
  const Tensor a = Tensor::uniform({9, 3, 16, 16}, rng, 0.0, 1.0);
  const Tensor b = a.detach();
  auto d = b.mutable_data();
  const auto per = b.numel() / 9;
  for (std::int64_t i = 5 * per; i < b.numel(); ++i) d[static_cast<std::size_t>(i)] = 1.0 - d[static_cast<std::size_t>(i)];
  const Tensor za = vae.encode(a).first.tensor;
  const Tensor zb = vae.encode(b).first.tensor;
  const auto frame = za.numel() / za.dim(0);
  // Latent frame i sees input frames 0..4i, so frames 0 and 1 are untouched.
  for (std::int64_t i = 0; i < 2 * frame; ++i) {
    ASSERT_EQ(za.data()[static_cast<std::size_t>(i)], zb.data()[static_cast<std::size_t>(i)]) << i;
  }
  bool changed = false;
  for (std::int64_t i = 2 * frame; i < za.numel(); ++i) {
    changed |= za.data()[static_cast<std::size_t>(i)] != zb.data()[static_cast<std::size_t>(i)];
  }
  EXPECT_TRUE(changed);
}

TEST(Vae, DecodeOfZeroLatentIsDeterministic) {
  Rng r1(1), r2(1);
  Vae vae(tiny_config(), r1);
  NoGradGuard ng;
  const Tensor z = Tensor::zeros({2, 16, 2, 2});
  const Tensor a = vae.decode(z);
  Rng other(99);
  (void)Tensor::randn({10}, other);
  const Tensor b = vae.decode(z);
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
  EXPECT_THROW(vae.decode(Tensor::zeros({2, 8, 2, 2})), ShapeError);
}

TEST(Vae, ConfigRoundTripsThroughKeyValues) {
  VaeConfig c = tiny_config();
  c.latent.c_s = 4;
  const auto back = VaeConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.latent.c_s, 4);
  EXPECT_EQ(back.widths, c.widths);
  EXPECT_EQ(back.res_blocks, 1);
  auto kv = c.to_kv();
  kv["vae.c_t"] = "four";
  EXPECT_THROW(VaeConfig::from_kv(kv), ConfigError);
}

TEST(Reparameterize, ClampedLogvarCollapsesToMean) {
  Rng rng(5);
  const Tensor mean = Tensor::randn({4, 4}, rng);
  const Tensor logvar = Tensor::full({4, 4}, -1e9);
  const Tensor z = reparameterize(mean, logvar, rng);
  for (std::int64_t i = 0; i < z.numel(); ++i) EXPECT_NEAR(z.data()[i], mean.data()[i], 1e-6);
}

TEST(Reparameterize, SeededDrawsRepeat) {
  const Tensor mean = Tensor::zeros({3, 5});
  const Tensor logvar = Tensor::zeros({3, 5});
  Rng a(11), b(11);
  const Tensor za = reparameterize(mean, logvar, a);
  const Tensor zb = reparameterize(mean, logvar, b);
  for (std::int64_t i = 0; i < za.numel(); ++i) ASSERT_EQ(za.data()[i], zb.data()[i]);
  EXPECT_THROW(reparameterize(mean, Tensor::zeros({5, 3}), a), ShapeError);
}

TEST(Reparameterize, MonteCarloMean) {
  Rng rng(12);
  const Tensor z = reparameterize(Tensor::zeros({10000}), Tensor::zeros({10000}), rng);
  double s = 0.0;
  for (double v : z.data()) s += v;
  EXPECT_LT(std::abs(s / 10000.0), 3.0 / std::sqrt(10000.0));
}

TEST(VaeLoss, WeightedComposition) {
  EXPECT_NEAR(combine_vae_loss(VaeLossWeights{}, 1.0, 0.5, 0.2, 100.0), 1.0601, 1e-12);
  const VaeLossWeights w;
  const double base = combine_vae_loss(w, 0.3, 0.2, 0.1, 5.0);
  EXPECT_GT(combine_vae_loss(w, 0.31, 0.2, 0.1, 5.0), base);
  EXPECT_GT(combine_vae_loss(w, 0.3, 0.21, 0.1, 5.0), base);
  EXPECT_GT(combine_vae_loss(w, 0.3, 0.2, 0.11, 5.0), base);
  EXPECT_GT(combine_vae_loss(w, 0.3, 0.2, 0.1, 5.1), base);
  EXPECT_THROW((VaeLossWeights{1.0, -0.1, 0.0, 0.0}.validate()), ConfigError);
}

TEST(VaeLoss, PerfectReconstructionIsZero) {
  Rng rng(6);
  const Tensor x = Tensor::uniform({2, 3, 4, 4}, rng, 0.0, 1.0);
  NullLossProvider null;
  const auto loss = vae_loss(x, x, Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), VaeLossWeights{},
                             null, null);
  EXPECT_EQ(loss.total.item(), 0.0);
  EXPECT_EQ(loss.kl, 0.0);
}

TEST(VaeLoss, KlIsNonNegative) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor m = Tensor::randn({16}, rng, 3.0);
    const Tensor lv = Tensor::uniform({16}, rng, -40.0, 25.0);
    EXPECT_GE(kl_divergence(m, lv).item(), 0.0);
  }
}

class NegativeProvider : public LossProvider {
 public:
  Tensor operator()(const Tensor&, const Tensor&) override { return Tensor::scalar(-0.5); }
  std::string name() const override { return "negative"; }
};

TEST(VaeLoss, NegativeProviderIsContractError) {
  const Tensor x = Tensor::zeros({1, 3, 2, 2});
  NegativeProvider bad;
  NullLossProvider null;
  EXPECT_THROW(vae_loss(x, x, Tensor::zeros({1}), Tensor::zeros({1}), {}, bad, null), ContractError);
  EXPECT_THROW(vae_loss(x, x, Tensor::zeros({1}), Tensor::zeros({1}), {}, null, bad), ContractError);
}

TEST(VaeLoss, DiscriminatorTermIsNonNegativeAndTrains) {
  Rng rng(8);
  PatchDiscriminator disc(4, rng, 1e-2);
  const Tensor real = Tensor::full({1, 3, 8, 8}, 0.8);
  const Tensor fake = Tensor::full({1, 3, 8, 8}, 0.2);
  EXPECT_GE(disc(real, fake).item(), 0.0);
  const double first = disc.update(real, fake);
  double last = first;
  for (int i = 0; i < 50; ++i) last = disc.update(real, fake);
  EXPECT_LT(last, first);
}

TEST(Tiling, StartsCoverTheAxis) {
  EXPECT_EQ(tile_starts(5, 8, 1), (std::vector<std::int64_t>{0}));
  EXPECT_EQ(tile_starts(8, 4, 1), (std::vector<std::int64_t>{0, 3, 4}));
  EXPECT_EQ(tile_starts(7, 3, 1), (std::vector<std::int64_t>{0, 2, 4}));
}

TEST(Tiling, BlendWeightsArePartitionOfUnity) {
  Rng rng(9);
  const LatentSpec spec;
  for (int trial = 0; trial < 40; ++trial) {
    const Shape zs{2 + static_cast<std::int64_t>(rng.uniform_int(6)), 16,
                   1 + static_cast<std::int64_t>(rng.uniform_int(7)),
                   1 + static_cast<std::int64_t>(rng.uniform_int(7))};
    TileSpec t;
    t.t = 2 + static_cast<std::int64_t>(rng.uniform_int(3));
    t.h = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
    t.w = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
    t.overlap_t = 1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(t.t - 1)));
    t.overlap_h = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(t.h)));
    t.overlap_w = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(t.w)));
    const Tensor field = blend_weight_field(zs, spec, t);
    EXPECT_EQ(field.shape(), (Shape{spec.c_t * (zs[0] - 1) + 1, 1, 8 * zs[2], 8 * zs[3]}));
    for (double v : field.data()) ASSERT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(Tiling, InvalidTilesAreConfigErrors) {
  EXPECT_THROW((TileSpec{2, 2, 2, 2, 0, 0}.validate()), ConfigError);
  EXPECT_THROW((TileSpec{0, 2, 2, 0, 0, 0}.validate()), ConfigError);
  const LatentSpec spec;
  const Tensor z = Tensor::zeros({6, 16, 2, 2});
  // Two temporal tiles without overlap cannot reproduce the causal frame layout.
  EXPECT_THROW(tiled_decode(z, spec, TileSpec{3, 2, 2, 0, 0, 0},
                            [&](const Tensor& t) { return affine_decode(t, spec); }),
               ConfigError);
}

TEST(Tiling, AffineDecoderTiledMatchesUntiled) {
  Rng rng(10);
  LatentSpec spec;
  spec.channels = 3;
  const Tensor z = Tensor::randn({6, 3, 5, 4}, rng);
  const Tensor full = affine_decode(z, spec);
  const TileSpec t{3, 2, 3, 1, 1, 2};
  const Tensor tiled =
      tiled_decode(z, spec, t, [&](const Tensor& c) { return affine_decode(c, spec); });
  ASSERT_EQ(tiled.shape(), full.shape());
  double worst = 0.0;
  for (std::int64_t i = 0; i < full.numel(); ++i) {
    worst = std::max(worst, std::abs(full.data()[i] - tiled.data()[i]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Tiling, SingleTileIsTheUntiledPath) {
  Rng rng(11);
  Vae vae(tiny_config(), rng);
  NoGradGuard ng;
  const Tensor video = Tensor::uniform({9, 3, 16, 16}, rng, 0.0, 1.0);
  const auto [mean, logvar] = vae.encode(video);
  const TileSpec big{8, 8, 8, 1, 1, 1};
  const Tensor a = vae.decode(mean);
  const Tensor b = tiled_decode(vae, mean, big);
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
  const auto enc = tiled_encode(vae, video, big);
  for (std::int64_t i = 0; i < mean.tensor.numel(); ++i) {
    ASSERT_EQ(enc.first.tensor.data()[i], mean.tensor.data()[i]);
  }
}

TEST(Tiling, TiledEncodeKeepsShape) {
  Rng rng(12);
  VaeConfig c = tiny_config();
  c.latent.c_s = 4;
  Vae vae(c, rng);
  NoGradGuard ng;
  const Tensor video = Tensor::uniform({9, 3, 16, 16}, rng, 0.0, 1.0);
  const auto [m, lv] = tiled_encode(vae, video, TileSpec{2, 2, 2, 1, 1, 1});
  EXPECT_EQ(m.tensor.shape(), (Shape{3, 16, 4, 4}));
  EXPECT_EQ(lv.tensor.shape(), (Shape{3, 16, 4, 4}));
}

TEST(VaeTraining, IntervalsAreUniform) {
  Rng rng(13);
  std::vector<int> hist(9, 0);
  for (int i = 0; i < 8000; ++i) ++hist[static_cast<std::size_t>(draw_interval(rng, 8))];
  EXPECT_EQ(hist[0], 0);
  const double p = 1.0 / 8.0, sd = std::sqrt(8000.0 * p * (1.0 - p));
  for (int k = 1; k <= 8; ++k) EXPECT_LT(std::abs(hist[static_cast<std::size_t>(k)] - 1000.0), 5.0 * sd) << k;
  EXPECT_THROW(draw_interval(rng, 0), ConfigError);
}

TEST(VaeTraining, FourVideosPerImage) {
  for (std::int64_t start = 0; start < 100; ++start) {
    int images = 0;
    for (std::int64_t i = start; i < start + 5; ++i) images += is_image_item(i, 4);
    EXPECT_EQ(images, 1);
  }
}

TEST(VaeTraining, SmokeRunLogsLadderAndLowersLoss) {
  Rng rng(14);
  VaeConfig c = tiny_config();
  c.latent.c_s = 4;
  Vae vae(c, rng);
  VaeDataset data;
  Rng dr = rng.split("motions");
  for (int i = 0; i < 4; ++i) data.motions.push_back(random_motion(dr, ClipSpec{}));
  VaeTrainConfig tc;
  tc.stages = {{8, 5, 100}, {16, 5, 100}};
  tc.lr = 3e-3;
  tc.max_interval = 2;
  const auto dir = std::filesystem::temp_directory_path() / "tinyvid_vae_smoke";
  std::filesystem::create_directories(dir);
  tc.metrics_path = (dir / "metrics.csv").string();
  tc.checkpoint_path = (dir / "vae.ckpt").string();
  const auto report = train_vae(vae, data, tc, rng);
  ASSERT_EQ(report.steps.size(), 200u);
  for (std::size_t i = 1; i < report.steps.size(); ++i) {
    EXPECT_GE(report.steps[i].resolution, report.steps[i - 1].resolution);
  }
  auto mean_l1 = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 20; ++i) s += report.steps[i].l1;
    return s / 20.0;
  };
  EXPECT_LT(mean_l1(180), mean_l1(100));
  EXPECT_LT(mean_l1(80), mean_l1(0));

  std::ifstream in(tc.metrics_path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,l1,lpips,adv,kl,total,stage,resolution");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 200);

  Rng other(0);
  Vae reloaded(c, other);
  load_params(load_checkpoint(tc.checkpoint_path), reloaded.parameters());
  const auto a = vae.parameters(), b = reloaded.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::int64_t k = 0; k < a[i].tensor.numel(); ++k) {
      ASSERT_EQ(static_cast<float>(a[i].tensor.data()[k]), b[i].tensor.data()[k]);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(VaeTraining, ShrinkingLadderIsRejected) {
  Rng rng(15);
  Vae vae(tiny_config(), rng);
  VaeDataset data;
  data.motions.push_back(random_motion(rng, ClipSpec{}));
  VaeTrainConfig tc;
  tc.stages = {{16, 9, 1}, {8, 9, 1}};
  EXPECT_THROW(train_vae(vae, data, tc, rng), ConfigError);
  tc.stages.clear();
  EXPECT_THROW(train_vae(vae, data, tc, rng), ConfigError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  Rng rng(16);
  Vae vae(tiny_config(), rng);
  const auto bytes = serialize_checkpoint(make_checkpoint(vae.config().to_kv(), vae.parameters()));
  const auto parsed = parse_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(parsed), bytes);
  EXPECT_EQ(parsed.config.at("vae.widths"), "4,8");

  auto corrupt = bytes;
  corrupt[corrupt.size() - 20] ^= 0x01;
  EXPECT_THROW(parse_checkpoint(corrupt), IoError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(parse_checkpoint(truncated), IoError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(magic), IoError);
}

}  // namespace
}  // namespace tinyvid
