// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic clips, curation (dedup, concept balancing, threshold filters) and
// duration x aspect bucketing with a prefetching batch stream.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tinyvid/flow.hpp"
#include "tinyvid/rng.hpp"
#include "tinyvid/tensor.hpp"

namespace tinyvid {

// ---------------------------------------------------------------------------
// Synthetic clips

enum class ShapeKind { square, disk, diamond };

inline constexpr int kShapeKinds = 3;
inline constexpr int kColors = 6;

/// Per-frame velocity levels, in pixels per frame. Captions carry the level
/// index, not the value.
inline const std::vector<double>& velocity_levels() {
  static const std::vector<double> levels{-1.0, -0.5, 0.0, 0.5, 1.0};
  return levels;
}

struct Motion {
  ShapeKind shape = ShapeKind::square;
  int color = 0;
  int vx_level = 2;
  int vy_level = 2;
  double omega = 0.0;  // radians per frame
  double x0 = 0.0;     // first-frame center, pixels
  double y0 = 0.0;
  /// Speed multiplier applied to both levels; 0 freezes the clip.
  double speed = 1.0;

  double vx() const { return speed * velocity_levels().at(static_cast<std::size_t>(vx_level)); }
  double vy() const { return speed * velocity_levels().at(static_cast<std::size_t>(vy_level)); }
};

struct ClipSpec {
  std::int64_t frames = 9;  // T + 1
  std::int64_t height = 16;
  std::int64_t width = 16;
  double radius = 3.0;
  /// Fixed motion; drawn from the stream when absent.
  std::optional<Motion> motion;
};

struct SyntheticVideo {
  Tensor video;  // [T+1, 3, H, W], values in [0, 1]
  TokenIds caption;
  Motion motion;
};

/// Caption vocabulary: 0 pad, then shapes, colors, x levels, y levels.
std::int64_t caption_vocab_size();
inline constexpr std::size_t kCaptionLength = 4;
TokenIds caption_tokens(const Motion& motion);
/// Inverse of caption_tokens for shape, color and velocity levels.
Motion motion_from_caption(const TokenIds& caption);

/// Random motion whose path stays inside the frame for the whole clip.
Motion random_motion(Rng& rng, const ClipSpec& spec);
SyntheticVideo generate_synthetic(Rng& rng, const ClipSpec& spec);
/// Renders a known motion; no randomness.
Tensor render_clip(const Motion& motion, std::int64_t frames, std::int64_t height,
                   std::int64_t width, double radius);

// ---------------------------------------------------------------------------
// Records and manifests

/// Score names that filters may reference.
const std::vector<std::string>& registered_filters();

struct ClipRecord {
  std::int64_t id = 0;
  std::int64_t frames = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  Motion motion;
  std::map<std::string, double> scores;
  std::vector<double> embedding;  // unit vector

  double aspect() const { return static_cast<double>(width) / static_cast<double>(height); }
  /// Throws ContractError on a broken invariant.
  void validate() const;
};

struct RecordSpec {
  std::int64_t count = 1000;
  std::int64_t embedding_dim = 16;
  std::int64_t concepts = 24;
  double concept_noise = 0.35;
  double duplicate_rate = 0.1;
  double duplicate_noise = 0.01;
  std::vector<std::int64_t> frame_choices{5, 9, 13, 17};
  std::vector<std::pair<std::int64_t, std::int64_t>> size_choices{
      {16, 16}, {16, 24}, {24, 16}, {16, 32}, {32, 32}};
};

/// Random records with clustered embeddings and near-duplicates.
std::vector<ClipRecord> generate_records(Rng& rng, const RecordSpec& spec);

/// Tab-separated: id, frames, height, width, scores (name=value;...),
/// embedding (comma-joined), motion (name=value;...).
void write_manifest(std::ostream& out, const std::vector<ClipRecord>& records);
std::vector<ClipRecord> read_manifest(std::istream& in);

// ---------------------------------------------------------------------------
// Curation

/// Greedy in ascending id: dropped iff 1 - dot < threshold against an earlier
/// survivor.
std::vector<ClipRecord> dedup(std::vector<ClipRecord> records, double threshold);

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::int64_t> assignment;  // per input record
  std::vector<double> inertia;           // after each assignment pass
  int iterations = 0;
  std::vector<ClipRecord> balanced;      // ascending id
};

/// Lloyd iterations until no assignment changes (at most 100), then each
/// cluster is uniformly downsampled to `resample_cap` members.
KMeansResult kmeans_balance(const std::vector<ClipRecord>& records, std::int64_t k,
                            std::int64_t resample_cap, Rng& rng);

struct FilterStage {
  std::string name;
  std::map<std::string, double> thresholds;
  std::string resolution;
};

/// Thresholds must not decrease from one stage to the next.
void validate_stage_ladder(const std::vector<FilterStage>& stages);

struct RetentionReport {
  std::string stage;
  std::int64_t input = 0;
  std::int64_t retained = 0;
  /// Records removed, attributed to the first failing filter in name order.
  std::map<std::string, std::int64_t> removed;
  double fraction() const { return input ? static_cast<double>(retained) / input : 0.0; }
};

std::vector<ClipRecord> apply_stage(const std::vector<ClipRecord>& records,
                                    const FilterStage& stage, RetentionReport* report = nullptr);

void write_retention_csv(std::ostream& out, const std::vector<RetentionReport>& reports);

// ---------------------------------------------------------------------------
// Buckets

struct BucketRule {
  /// Pixel area of every bucket is close to base_side^2.
  std::int64_t base_side = 16;
  /// Bucket heights and widths are multiples of this.
  std::int64_t align = 8;
  /// Pixels (frames x height x width) per transformer token.
  std::int64_t voxels_per_token = 64;
  /// Tokens per batch; max_batch = max(1, token_budget / tokens).
  std::int64_t token_budget = 4096;
};

struct Bucket {
  std::int64_t duration = 0;  // frames
  double aspect = 1.0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t tokens = 0;
  std::int64_t max_batch = 1;
  std::vector<std::int64_t> members;  // record ids, ascending
};

struct Rejection {
  std::int64_t id;
  std::string reason;
};

struct BucketGrid {
  std::vector<std::int64_t> duration_bins;
  std::vector<double> aspect_bins;
  std::vector<Bucket> buckets;  // duration-major: index = d * |aspect| + a
  std::vector<Rejection> rejected;

  const Bucket& at(std::size_t d, std::size_t a) const {
    return buckets[d * aspect_bins.size() + a];
  }
};

/// Largest duration bin <= frames; nullopt if shorter than every bin.
std::optional<std::size_t> duration_bin(std::int64_t frames, const std::vector<std::int64_t>& bins);
/// Nearest bin in |log ratio|; ties go to the bin closest to 1:1.
std::size_t aspect_bin(double aspect, const std::vector<double>& bins);
/// Bucket pixel shape for a duration and aspect under the rule.
Bucket make_bucket(std::int64_t duration, double aspect, const BucketRule& rule);

BucketGrid bucketize(const std::vector<ClipRecord>& records,
                     const std::vector<std::int64_t>& duration_bins,
                     const std::vector<double>& aspect_bins, const BucketRule& rule);

struct Batch {
  std::size_t bucket = 0;
  std::vector<std::int64_t> ids;
};

struct PrefetchOptions {
  /// Run the producer on a worker thread with a bounded queue.
  bool threaded = false;
  std::size_t capacity = 4;
  /// Refill drained buckets and start another epoch instead of ending.
  bool repeat = false;
};

/// Batches drawn by picking a non-empty bucket uniformly, then taking up to
/// max_batch of its remaining (shuffled) members. The sequence depends only
/// on the buckets and the stream, never on threading.
class BatchStream {
 public:
  BatchStream(std::vector<Bucket> buckets, Rng rng, PrefetchOptions options = {});
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  /// nullopt at end of stream.
  std::optional<Batch> next();
  /// Number of batches handed out so far.
  std::int64_t consumed() const { return consumed_; }

 private:
  std::optional<Batch> produce();
  void refill();
  void worker();

  std::vector<Bucket> buckets_;
  std::vector<std::vector<std::int64_t>> remaining_;
  Rng rng_;
  PrefetchOptions options_;
  std::int64_t epoch_ = 0;
  std::int64_t consumed_ = 0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::optional<Batch>> queue_;
  bool stop_ = false;
  std::thread thread_;
};

/// Convenience: the first `count` batches of a non-threaded stream.
std::vector<Batch> prefetch_batches(const std::vector<Bucket>& buckets, Rng rng,
                                    std::int64_t count, PrefetchOptions options = {});

}  // namespace tinyvid
