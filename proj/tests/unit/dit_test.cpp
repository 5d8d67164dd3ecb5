// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "tinyvid/dit.hpp"
#include "tinyvid/error.hpp"

namespace tinyvid {
namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.n_dual = 1;
  c.n_single = 1;
  c.dim = 8;
  c.ffn_dim = 16;
  c.heads = 2;
  c.head_dim = 4;
  c.rope_split = {0, 2, 2};
  c.patch = {1, 1, 1};
  c.time_embed_dim = 8;
  c.in_channels = 2;
  c.out_channels = 2;
  c.text_vocab = 6;
  return c;
}

void randomize(const ParamList& params, Rng& rng, double stddev = 0.3) {
  for (const auto& p : params) {
    for (auto& v : p.tensor.mutable_data()) v = stddev * rng.normal();
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(ModelConfig, DefaultsAndReferenceValidate) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  const ModelConfig r = reference_config();
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(r.n_dual, 20);
  EXPECT_EQ(r.n_single, 40);
  EXPECT_EQ(r.dim, 3072);
  EXPECT_EQ(r.ffn_dim, 12288);
  EXPECT_EQ(r.heads, 24);
  EXPECT_EQ(r.head_dim, 128);
  EXPECT_EQ(r.rope_split, (std::array<std::int64_t, 3>{16, 56, 56}));
}

TEST(ModelConfig, InvariantsAreEnforced) {
  ModelConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.rope_split = {8, 12, 10};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.rope_split = {7, 13, 12};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.patch = {1, 0, 2};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, KeyValueRoundTrip) {
  ModelConfig c = toy_config();
  c.guidance_embed = true;
  const auto back = ModelConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.to_kv(), c.to_kv());
  auto kv = c.to_kv();
  kv["dit.patch"] = "1,2";
  EXPECT_THROW(ModelConfig::from_kv(kv), ConfigError);
  kv = c.to_kv();
  kv["dit.i2v"] = "maybe";
  EXPECT_THROW(ModelConfig::from_kv(kv), ConfigError);
}

TEST(Patchify, TokenCounts) {
  EXPECT_EQ(token_count({5, 16, 8, 8}, {1, 2, 2}), 80);
  EXPECT_EQ(token_count({5, 16, 8, 8}, {1, 1, 1}), 320);
  EXPECT_EQ(token_count({1, 16, 8, 8}, {1, 2, 2}), 16);
  EXPECT_THROW(token_count({5, 16, 7, 8}, {1, 2, 2}), ShapeError);
  EXPECT_THROW(token_count({5, 16, 8, 8}, {2, 2, 2}), ShapeError);
}

TEST(Patchify, RoundTripAndGrid) {
  Rng rng(1);
  ModelConfig c = toy_config();
  c.patch = {1, 2, 2};
  Dit model(c, rng);
  const Tensor x = Tensor::randn({2, 3, 2, 4, 6}, rng);
  const Tensor patches = extract_patches(x, c.patch);
  EXPECT_EQ(patches.shape(), (Shape{2, 18, 8}));
  const Tensor back = merge_patches(patches, 2, 3, 2, 3, c.patch);
  EXPECT_EQ(max_abs_diff(back, x), 0.0);
  const TokenGrid g = model.patchify(x);
  EXPECT_EQ(g.length(), 18);
  EXPECT_EQ(g.tokens.shape(), (Shape{2, 18, 8}));
  EXPECT_EQ(g.coords[0], (std::array<std::int64_t, 3>{0, 0, 0}));
  EXPECT_EQ(g.coords[1], (std::array<std::int64_t, 3>{0, 0, 1}));
  EXPECT_EQ(g.coords[3], (std::array<std::int64_t, 3>{0, 1, 0}));
  EXPECT_EQ(g.coords[6], (std::array<std::int64_t, 3>{1, 0, 0}));
  EXPECT_THROW(model.patchify(Tensor::zeros({1, 3, 3, 4, 6})), ShapeError);
}

TEST(Rope, ZeroCoordinateIsIdentity) {
  Rng rng(2);
  const Tensor q = Tensor::randn({1, 1, 1, 32}, rng);
  const Tensor k = Tensor::randn({1, 1, 1, 32}, rng);
  const auto [rq, rk] = rope3d(q, k, {{0, 0, 0}}, {8, 12, 12});
  EXPECT_EQ(max_abs_diff(rq, q), 0.0);
  EXPECT_EQ(max_abs_diff(rk, k), 0.0);
}

TEST(Rope, RelativeShiftInvariance) {
  Rng rng(3);
  const std::array<std::int64_t, 3> split{8, 12, 12};
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor q = Tensor::randn({1, 1, 1, 32}, rng);
    const Tensor k = Tensor::randn({1, 1, 1, 32}, rng);
    auto coord = [&] {
      return std::array<std::int64_t, 3>{static_cast<std::int64_t>(rng.uniform_int(20)),
                                         static_cast<std::int64_t>(rng.uniform_int(20)),
                                         static_cast<std::int64_t>(rng.uniform_int(20))};
    };
    const auto p1 = coord(), p2 = coord(), delta = coord();
    auto shifted = [&](std::array<std::int64_t, 3> p) {
      for (int a = 0; a < 3; ++a) p[a] += delta[a];
      return p;
    };
    const double base = dot(rope3d(q, q, {p1}, split).first.data(), rope3d(k, k, {p2}, split).first.data());
    const double moved = dot(rope3d(q, q, {shifted(p1)}, split).first.data(),
                             rope3d(k, k, {shifted(p2)}, split).first.data());
    EXPECT_NEAR(base, moved, 1e-9);
  }
}

TEST(Rope, PreservesNorm) {
  Rng rng(4);
  const Tensor q = Tensor::randn({1, 2, 3, 32}, rng);
  const auto [rq, rk] = rope3d(q, q, {{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}, {8, 12, 12});
  for (int row = 0; row < 6; ++row) {
    const auto a = q.data().subspan(static_cast<std::size_t>(row * 32), 32);
    const auto b = rq.data().subspan(static_cast<std::size_t>(row * 32), 32);
    EXPECT_NEAR(std::sqrt(dot(a, a)), std::sqrt(dot(b, b)), 1e-12);
  }
}

TEST(Rope, OddSegmentIsConfigError) {
  const Tensor q = Tensor::zeros({1, 1, 1, 32});
  EXPECT_THROW(rope3d(q, q, {{0, 0, 0}}, {7, 13, 12}), ConfigError);
}

struct BlockFixture {
  ModelConfig c = toy_config();
  Rng rng{5};
  Tensor video = Tensor::randn({2, 6, 8}, rng);
  Tensor text = Tensor::randn({2, 3, 8}, rng);
  Tensor vec = Tensor::randn({2, 8}, rng);
  RopeTables rope = rope_tables(grid_coords(1, 2, 3), c.rope_split);
};

TEST(DualStreamBlock, ZeroGatesAreIdentity) {
  BlockFixture f;
  DualStreamBlock block(f.c, f.rng);
  const auto [v, t] = block(f.video, f.text, f.vec, f.rope);
  EXPECT_EQ(max_abs_diff(v, f.video), 0.0);
  EXPECT_EQ(max_abs_diff(t, f.text), 0.0);
}

TEST(DualStreamBlock, StreamsAreIsolated) {
  BlockFixture f;
  DualStreamBlock block(f.c, f.rng);
  ParamList params;
  block.collect("b", params);
  randomize(params, f.rng);
  const auto [v1, t1] = block(f.video, f.text, f.vec, f.rope);
  const auto [v2, t2] = block(f.video, Tensor::zeros(f.text.shape()), f.vec, f.rope);
  EXPECT_EQ(v1.shape(), f.video.shape());
  EXPECT_EQ(t1.shape(), f.text.shape());
  EXPECT_EQ(max_abs_diff(v1, v2), 0.0);
  EXPECT_GT(max_abs_diff(t1, t2), 0.0);

  // A loss on the text stream sends no gradient to video-stream weights.
  zero_grads(params);
  sum(square(block(f.video, f.text, f.vec, f.rope).second)).backward();
  for (const auto& p : params) {
    const bool video_param = p.name.rfind("b.video.", 0) == 0;
    double g = 0.0;
    if (p.tensor.has_grad()) {
      for (double x : p.tensor.grad()) g += std::abs(x);
    }
    if (video_param) {
      EXPECT_EQ(g, 0.0) << p.name;
    } else {
      EXPECT_GT(g, 0.0) << p.name;
    }
  }
}

TEST(SingleStreamBlock, ZeroGateIsIdentityAndShapeKept) {
  BlockFixture f;
  SingleStreamBlock block(f.c, f.rng);
  const Tensor joint = concat({f.video, f.text}, 1);
  const RopeTables rope = concat_rope(f.rope, identity_rope(3, f.c.head_dim));
  const Tensor out = block(joint, f.vec, rope);
  EXPECT_EQ(out.shape(), joint.shape());
  EXPECT_EQ(max_abs_diff(out, joint), 0.0);
}

TEST(SingleStreamBlock, TextOrderDoesNotReachVideo) {
  BlockFixture f;
  SingleStreamBlock block(f.c, f.rng);
  ParamList params;
  block.collect("s", params);
  randomize(params, f.rng);
  const RopeTables rope = concat_rope(f.rope, identity_rope(3, f.c.head_dim));
  const Tensor swapped_text = index_select(f.text, 1, {1, 0, 2});
  const Tensor a = block(concat({f.video, f.text}, 1), f.vec, rope);
  const Tensor b = block(concat({f.video, swapped_text}, 1), f.vec, rope);
  EXPECT_LT(max_abs_diff(slice(a, 1, 0, 6), slice(b, 1, 0, 6)), 1e-12);
  EXPECT_LT(max_abs_diff(index_select(slice(a, 1, 6, 3), 1, {1, 0, 2}), slice(b, 1, 6, 3)), 1e-12);
}

TEST(TextEncoder, PooledVectorIsLastContentToken) {
  EXPECT_EQ(last_content_position({3, 5, 0, 0}), 1);
  EXPECT_EQ(last_content_position({3, 5, 2, 1}), 3);
  EXPECT_EQ(last_content_position({0, 0, 0}), 0);
  Rng rng(6);
  Dit model(toy_config(), rng);
  const auto cond = model.encode_text({{1, 2, 0, 0}, {3, 4, 5, 1}});
  EXPECT_EQ(cond.text.shape(), (Shape{2, 4, 8}));
  EXPECT_EQ(cond.pooled.shape(), (Shape{2, 8}));
  for (int j = 0; j < 8; ++j) {
    EXPECT_EQ(cond.pooled.at({0, j}), cond.text.at({0, 1, j}));
    EXPECT_EQ(cond.pooled.at({1, j}), cond.text.at({1, 3, j}));
  }
  EXPECT_THROW(model.encode_text({{1, 9}}), ShapeError);
}

TEST(Dit, OutputShapeForVideoAndImage) {
  Rng rng(7);
  ModelConfig c = toy_config();
  c.patch = {1, 2, 2};
  Dit model(c, rng);
  randomize(model.parameters(), rng, 0.2);
  const std::vector<double> t{0.3, 0.7};
  const Captions caps{{1, 2}, {3, 0}};
  const Tensor video = Tensor::randn({2, 3, 2, 4, 4}, rng);
  EXPECT_EQ(model.velocity(video, t, caps).shape(), video.shape());
  const Tensor image = Tensor::randn({2, 1, 2, 4, 4}, rng);
  const Tensor a = model.velocity(image, t, caps);
  EXPECT_EQ(a.shape(), image.shape());
  EXPECT_EQ(max_abs_diff(a, model.velocity(image, t, caps)), 0.0);
  EXPECT_TRUE(all_finite(a));
}

TEST(Dit, GradientsMatchFiniteDifferences) {
  Rng rng(8);
  ModelConfig c = toy_config();
  c.n_dual = 1;
  c.n_single = 1;
  Dit model(c, rng);
  const auto params = model.parameters();
  randomize(params, rng, 0.3);
  const Tensor x = Tensor::randn({1, 2, 2, 2, 2}, rng);
  const std::vector<double> t{0.4};
  const Captions caps{{1, 3, 0}};
  auto objective = [&] { return mean(square(model.velocity(x, t, caps))); };

  zero_grads(params);
  objective().backward();
  const double h = 1e-6;
  std::int64_t checked = 0;
  for (const auto& p : params) {
    auto d = p.tensor.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      d[i] = saved + h;
      const double up = objective().item();
      d[i] = saved - h;
      const double down = objective().item();
      d[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = p.tensor.has_grad() ? p.tensor.grad()[i] : 0.0;
      const double scale_ = std::max({std::abs(fd), std::abs(an), 1e-3});
      ASSERT_LT(std::abs(fd - an) / scale_, 1e-4) << p.name << "[" << i << "] fd=" << fd << " an=" << an;
      ++checked;
    }
  }
  EXPECT_EQ(checked, count_params(params));
}

TEST(Dit, NonFiniteActivationNamesBlock) {
  Rng rng(9);
  ModelConfig c = toy_config();
  c.n_dual = 2;
  c.n_single = 2;
  Dit model(c, rng);
  randomize(model.parameters(), rng, 0.2);
  const Tensor x = Tensor::randn({1, 1, 2, 2, 2}, rng);
  const std::vector<double> t{0.5};
  const Captions caps{{1, 2}};
  auto poison = [&](const std::string& name) {
    for (const auto& p : model.parameters()) {
      if (p.name == name) p.tensor.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    }
  };
  poison("single1.out.bias");
  try {
    model.velocity(x, t, caps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.where(), 3);
  }
  poison("dual1.video.fc2.bias");
  try {
    model.velocity(x, t, caps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.where(), 1);
  }
}

TEST(Dit, ImageToVideoAdaptation) {
  Rng rng(10);
  ModelConfig c = toy_config();
  c.in_channels = 16;
  c.out_channels = 16;
  c.patch = {1, 2, 2};
  Dit model(c, rng);
  randomize(model.parameters(), rng, 0.1);
  const Tensor before = model.parameters().front().tensor.detach();
  const Tensor x = Tensor::randn({1, 3, 16, 4, 4}, rng);
  const std::vector<double> t{0.25};
  const Captions caps{{2, 1}};
  const Tensor reference = model.velocity(x, t, caps);

  model.i2v_adapt();
  EXPECT_EQ(model.config().in_channels, 33);
  const Tensor after = model.parameters().front().tensor;
  EXPECT_EQ(after.dim(0), 33 * 4);
  for (std::int64_t i = 0; i < before.numel(); ++i) ASSERT_EQ(after.data()[i], before.data()[i]);
  for (std::int64_t i = before.numel(); i < after.numel(); ++i) ASSERT_EQ(after.data()[i], 0.0);

  const Tensor padded = concat({x, Tensor::zeros({1, 3, 17, 4, 4})}, 2);
  EXPECT_LT(max_abs_diff(model.velocity(padded, t, caps), reference), 1e-12);
  EXPECT_THROW(model.i2v_adapt(), ContractError);

  const Tensor m = i2v_mask(3, 4, 4);
  EXPECT_EQ(m.shape(), (Shape{3, 1, 4, 4}));
  for (std::int64_t i = 0; i < m.numel(); ++i) EXPECT_EQ(m.data()[i], i < 16 ? 1.0 : 0.0);
  const Tensor in = i2v_input(x, Tensor::ones({1, 16, 4, 4}));
  EXPECT_EQ(in.shape(), (Shape{1, 3, 33, 4, 4}));
  EXPECT_EQ(in.at({0, 0, 16, 0, 0}), 1.0);
  EXPECT_EQ(in.at({0, 1, 16, 0, 0}), 0.0);
  EXPECT_EQ(in.at({0, 0, 32, 0, 0}), 1.0);
  EXPECT_EQ(in.at({0, 2, 32, 3, 3}), 0.0);
}

TEST(Dit, StudentStartsAsTeacher) {
  Rng rng(11);
  Dit teacher(toy_config(), rng);
  randomize(teacher.parameters(), rng, 0.2);
  Dit student = Dit::make_student(teacher, rng);
  EXPECT_TRUE(student.accepts_guidance());
  EXPECT_FALSE(teacher.accepts_guidance());
  const Tensor x = Tensor::randn({2, 1, 2, 2, 2}, rng);
  const std::vector<double> t{0.2, 0.9}, g{1.0, 6.5};
  const Captions caps{{1, 2}, {3, 4}};
  EXPECT_EQ(max_abs_diff(student.velocity(x, t, caps, g), teacher.velocity(x, t, caps)), 0.0);
  EXPECT_THROW(teacher.velocity(x, t, caps, g), ContractError);
  EXPECT_THROW(Dit::make_student(student, rng), ContractError);
}

TEST(Dit, CloneOwnsItsParameters) {
  Rng rng(12);
  Dit model(toy_config(), rng);
  Dit copy = model.clone();
  copy.parameters().front().tensor.mutable_data()[0] += 1.0;
  EXPECT_NE(copy.parameters().front().tensor.data()[0], model.parameters().front().tensor.data()[0]);
}

}  // namespace
}  // namespace tinyvid
