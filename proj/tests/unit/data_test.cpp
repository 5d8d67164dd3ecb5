// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "support/centroid.hpp"
#include "tinyvid/data.hpp"
#include "tinyvid/error.hpp"

namespace tinyvid {
namespace {

ClipRecord unit_record(std::int64_t id, std::vector<double> e) {
  ClipRecord r;
  r.id = id;
  r.frames = 9;
  r.height = 16;
  r.width = 16;
  double n = 0.0;
  for (double x : e) n += x * x;
  for (auto& x : e) x /= std::sqrt(n);
  r.embedding = std::move(e);
  for (const auto& f : registered_filters()) r.scores[f] = 0.5;
  return r;
}

TEST(Synthetic, ZeroSpeedFramesAreIdentical) {
  Rng rng(1);
  ClipSpec spec;
  Motion m = random_motion(rng, spec);
  m.speed = 0.0;
  spec.motion = m;
  const auto v = generate_synthetic(rng, spec);
  const auto per = v.video.numel() / spec.frames;
  for (std::int64_t f = 1; f < spec.frames; ++f) {
    for (std::int64_t i = 0; i < per; ++i) {
      ASSERT_EQ(v.video.data()[f * per + i], v.video.data()[i]);
    }
  }
}

TEST(Synthetic, SeededClipsAreBitIdenticalAndInRange) {
  Rng a(5), b(5);
  const auto va = generate_synthetic(a, {});
  const auto vb = generate_synthetic(b, {});
  EXPECT_EQ(va.caption, vb.caption);
  for (std::int64_t i = 0; i < va.video.numel(); ++i) {
    ASSERT_EQ(va.video.data()[i], vb.video.data()[i]);
    ASSERT_GE(va.video.data()[i], 0.0);
    ASSERT_LE(va.video.data()[i], 1.0);
  }
}

TEST(Synthetic, CentroidTracksCaptionVelocity) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    ClipSpec spec;
    spec.frames = 9;
    spec.height = 24;
    spec.width = 24;
    const auto v = generate_synthetic(rng, spec);
    const auto est = testing::estimate_velocity(v.video);
    EXPECT_NEAR(est.vx, v.motion.vx(), 1.0) << seed;
    EXPECT_NEAR(est.vy, v.motion.vy(), 1.0) << seed;
    const auto cs = testing::centroids(v.video);
    for (std::size_t f = 1; f < cs.size(); ++f) {
      EXPECT_NEAR(cs[f].x - cs[f - 1].x, v.motion.vx(), 1.0);
      EXPECT_NEAR(cs[f].y - cs[f - 1].y, v.motion.vy(), 1.0);
    }
  }
}

TEST(Synthetic, CaptionRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto m = random_motion(rng, {});
    const auto back = motion_from_caption(caption_tokens(m));
    EXPECT_EQ(back.shape, m.shape);
    EXPECT_EQ(back.color, m.color);
    EXPECT_EQ(back.vx_level, m.vx_level);
    EXPECT_EQ(back.vy_level, m.vy_level);
    for (auto t : caption_tokens(m)) {
      EXPECT_GT(t, kPadToken);
      EXPECT_LT(t, caption_vocab_size());
    }
  }
}

TEST(Dedup, IdenticalOrthogonalAndHandBuilt) {
  std::vector<ClipRecord> same{unit_record(2, {1, 2, 3}), unit_record(1, {1, 2, 3}),
                               unit_record(3, {1, 2, 3})};
  const auto one = dedup(same, 1e-6);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].id, 1);

  std::vector<ClipRecord> ortho{unit_record(0, {1, 0, 0}), unit_record(1, {0, 1, 0}),
                                unit_record(2, {0, 0, 1})};
  EXPECT_EQ(dedup(ortho, 0.5).size(), 3u);

  // Pairwise distances: d(a,b) = 0.1, d(a,c) = d(b,c) = 0.6.
  const double by = std::sqrt(1.0 - 0.81);
  const double cy = (0.4 - 0.4 * 0.9) / by;
  const double cz = std::sqrt(1.0 - 0.16 - cy * cy);
  std::vector<ClipRecord> three{unit_record(0, {1, 0, 0}), unit_record(1, {0.9, by, 0}),
                                unit_record(2, {0.4, cy, cz})};
  EXPECT_NEAR(1.0 - (0.9 * 0.4 + by * cy), 0.6, 1e-12);
  const auto kept = dedup(three, 0.3);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].id, 0);
  EXPECT_EQ(kept[1].id, 2);
}

TEST(Dedup, UnnormalizedIsContractErrorAndIdempotent) {
  auto r = unit_record(0, {1, 0});
  r.embedding = {2.0, 0.0};
  EXPECT_THROW(dedup({r}, 0.1), ContractError);

  Rng rng(4);
  RecordSpec spec;
  spec.count = 400;
  const auto recs = generate_records(rng, spec);
  const auto once = dedup(recs, 0.02);
  EXPECT_LT(once.size(), recs.size());
  EXPECT_EQ(dedup(once, 0.02).size(), once.size());
}

TEST(KMeans, TwoTightPairs) {
  std::vector<ClipRecord> recs{unit_record(0, {1, 0.01}), unit_record(1, {1, -0.01}),
                               unit_record(2, {0.01, 1}), unit_record(3, {-0.01, 1})};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto res = kmeans_balance(recs, 2, 10, rng);
    for (const auto& c : res.centroids) {
      const bool first = c[0] > c[1];
      const auto& a = recs[first ? 0 : 2].embedding;
      const auto& b = recs[first ? 1 : 3].embedding;
      EXPECT_NEAR(c[0], 0.5 * (a[0] + b[0]), 1e-9);
      EXPECT_NEAR(c[1], 0.5 * (a[1] + b[1]), 1e-9);
    }
    EXPECT_NE(res.assignment[0], res.assignment[2]);
    EXPECT_EQ(res.assignment[0], res.assignment[1]);
  }
}

TEST(KMeans, KEqualsNAndInertiaMonotone) {
  Rng rng(6);
  RecordSpec spec;
  spec.count = 12;
  spec.duplicate_rate = 0.0;
  const auto recs = generate_records(rng, spec);
  const auto res = kmeans_balance(recs, 12, 5, rng);
  EXPECT_NEAR(res.inertia.back(), 0.0, 1e-24);

  spec.count = 600;
  const auto many = generate_records(rng, spec);
  const auto r2 = kmeans_balance(many, 16, 20, rng);
  for (std::size_t i = 1; i < r2.inertia.size(); ++i) {
    EXPECT_LE(r2.inertia[i], r2.inertia[i - 1] + 1e-12);
  }
  std::map<std::int64_t, int> per;
  std::set<std::int64_t> ids;
  for (std::size_t i = 0; i < many.size(); ++i) ids.insert(many[i].id);
  for (const auto& r : r2.balanced) {
    ASSERT_TRUE(ids.count(r.id));
    std::size_t idx = static_cast<std::size_t>(r.id);
    ++per[r2.assignment[idx]];
  }
  for (const auto& [c, n] : per) EXPECT_LE(n, 20);
  EXPECT_THROW(kmeans_balance(recs, 13, 5, rng), ConfigError);
}

TEST(Filters, StageRetentionAndReport) {
  std::vector<ClipRecord> recs;
  for (int i = 0; i < 100; ++i) {
    auto r = unit_record(i, {1, 0});
    r.scores["clarity"] = i < 40 ? 0.2 : 0.8;
    recs.push_back(r);
  }
  RetentionReport rep;
  const auto kept = apply_stage(recs, {"s1", {{"clarity", 0.5}}, "256p"}, &rep);
  EXPECT_EQ(kept.size(), 60u);
  EXPECT_EQ(rep.removed["clarity"], 40);
  EXPECT_DOUBLE_EQ(rep.fraction(), 0.6);

  EXPECT_EQ(apply_stage(recs, {"zero", {{"clarity", 0.0}, {"motion", 0.0}}, ""}).size(), 100u);

  Rng rng(7);
  RecordSpec spec;
  spec.count = 300;
  const auto random = generate_records(rng, spec);
  EXPECT_LE(apply_stage(random, {"max", {{"aesthetic", 1.0}}, ""}).size(), 1u);
  EXPECT_THROW(apply_stage(random, {"bad", {{"ocr", 0.1}}, ""}), ConfigError);
}

TEST(Filters, LadderMustNotDecrease) {
  std::vector<FilterStage> ok{{"a", {{"clarity", 0.1}}, "256p"},
                              {"b", {{"clarity", 0.3}, {"motion", 0.2}}, "360p"}};
  EXPECT_NO_THROW(validate_stage_ladder(ok));
  std::vector<FilterStage> bad{{"a", {{"clarity", 0.4}}, "256p"}, {"b", {{"clarity", 0.3}}, "360p"}};
  EXPECT_THROW(validate_stage_ladder(bad), ConfigError);
}

TEST(Buckets, BinRules) {
  EXPECT_EQ(duration_bin(30, {16, 32}), 0u);
  EXPECT_EQ(duration_bin(32, {16, 32}), 1u);
  EXPECT_FALSE(duration_bin(15, {16, 32}).has_value());
  const std::vector<double> ar{1.0, 16.0 / 9.0};
  EXPECT_EQ(aspect_bin(1.7, ar), 1u);
  EXPECT_EQ(aspect_bin(16.0 / 9.0, ar), 1u);
  EXPECT_EQ(aspect_bin(1.0, ar), 0u);
  // Equal log distance to 0.5 and 2: tie goes to the bin nearest 1:1.
  EXPECT_EQ(aspect_bin(1.0, {0.5, 2.0}), 0u);
  EXPECT_EQ(aspect_bin(1.0, {0.25, 1.5, 1.0 / 1.5}), 2u);
}

TEST(Buckets, PartitionAndInverseBatchRule) {
  Rng rng(8);
  RecordSpec spec;
  spec.count = 500;
  const auto recs = generate_records(rng, spec);
  const auto grid = bucketize(recs, {9, 13}, {0.5, 1.0, 1.5}, {});
  EXPECT_EQ(grid.buckets.size(), 6u);
  std::set<std::int64_t> seen;
  for (const auto& b : grid.buckets) {
    EXPECT_GE(b.max_batch, 1);
    for (auto id : b.members) EXPECT_TRUE(seen.insert(id).second);
  }
  for (const auto& r : grid.rejected) EXPECT_TRUE(seen.insert(r.id).second);
  EXPECT_EQ(seen.size(), recs.size());
  for (const auto& rej : grid.rejected) EXPECT_LT(recs[static_cast<std::size_t>(rej.id)].frames, 9);

  BucketRule rule;
  rule.token_budget = 256;
  const auto small = make_bucket(4, 1.0, rule);
  const auto big = make_bucket(16, 1.0, rule);
  EXPECT_EQ(big.tokens, 4 * small.tokens);
  EXPECT_EQ(small.max_batch, 4 * big.max_batch);
}

std::vector<Bucket> two_buckets(std::int64_t n, std::int64_t max_batch) {
  std::vector<Bucket> b(2);
  for (std::int64_t i = 0; i < n; ++i) {
    b[0].members.push_back(i);
    b[1].members.push_back(n + i);
  }
  for (auto& x : b) x.max_batch = max_batch;
  return b;
}

TEST(Prefetch, UniformBucketChoiceAndHomogeneity) {
  const auto buckets = two_buckets(10000, 1);
  const auto batches = prefetch_batches(buckets, Rng(9), 10000);
  ASSERT_EQ(batches.size(), 10000u);
  int first = 0;
  for (const auto& b : batches) first += b.bucket == 0;
  // Binomial(10000, 0.5): sigma = 50.
  EXPECT_LT(std::abs(first - 5000), 250);

  const auto grouped = prefetch_batches(two_buckets(50, 7), Rng(10), 1000);
  std::int64_t total = 0;
  for (const auto& b : grouped) {
    for (auto id : b.ids) EXPECT_EQ(id < 50 ? 0u : 1u, b.bucket);
    total += static_cast<std::int64_t>(b.ids.size());
  }
  EXPECT_EQ(total, 100);
}

TEST(Prefetch, ThreadedSequenceEqualsSerial) {
  const auto buckets = two_buckets(40, 3);
  PrefetchOptions threaded{true, 2, true};
  PrefetchOptions serial{false, 2, true};
  const auto a = prefetch_batches(buckets, Rng(11), 300, threaded);
  const auto b = prefetch_batches(buckets, Rng(11), 300, serial);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].bucket, b[i].bucket);
    EXPECT_EQ(a[i].ids, b[i].ids);
  }
  std::vector<Bucket> empty(3);
  BatchStream s(empty, Rng(1), threaded);
  EXPECT_FALSE(s.next().has_value());
  EXPECT_FALSE(s.next().has_value());
}

TEST(Manifest, RoundTrip) {
  Rng rng(12);
  RecordSpec spec;
  spec.count = 30;
  const auto recs = generate_records(rng, spec);
  std::stringstream ss;
  write_manifest(ss, recs);
  const auto back = read_manifest(ss);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].id, recs[i].id);
    EXPECT_EQ(back[i].embedding, recs[i].embedding);
    EXPECT_EQ(back[i].scores, recs[i].scores);
    EXPECT_EQ(back[i].motion.x0, recs[i].motion.x0);
    EXPECT_EQ(back[i].motion.vx_level, recs[i].motion.vx_level);
  }
}

}  // namespace
}  // namespace tinyvid
