// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

// Staged joint image/video training of the transformer on precomputed VAE
// latents, with bit-exact resume.
//
// Every random draw of step k comes from seed.split("step").split(k), and
// the batch order is a pure function of the seed and the bucket contents, so
// a run restored from a TrainState continues exactly as the uninterrupted
// run would have.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tinyvid/data.hpp"
#include "tinyvid/dit.hpp"
#include "tinyvid/flow.hpp"
#include "tinyvid/optim.hpp"
#include "tinyvid/rng.hpp"
#include "tinyvid/vae.hpp"

namespace tinyvid {

struct TrainStage {
  std::string name;
  std::int64_t resolution = 16;  // base side in pixels
  std::int64_t max_frames = 9;
  /// Fraction of steps that train on image batches.
  double image_ratio = 0.0;
  std::int64_t steps = 100;
};

struct StagePlan {
  std::vector<TrainStage> stages;

  /// ConfigError unless resolutions are non-decreasing and ratios in [0, 1].
  void validate() const;
  std::int64_t total_steps() const;
};

/// True when step `i` of a stage (0-based) trains on images. Exactly
/// floor(n r) of the first n steps are image steps.
bool is_image_step(std::int64_t i, double ratio);

/// Constant learning rate after a linear warmup over `warmup` steps.
double warmup_lr(double base, std::int64_t step, std::int64_t warmup);
/// warmup_lr, then a cosine decay reaching base * final_ratio at step
/// `total`. final_ratio = 1 is the constant schedule.
double scheduled_lr(double base, std::int64_t step, std::int64_t warmup, std::int64_t total,
                    double final_ratio);

/// One precomputed training example.
struct LatentItem {
  std::int64_t id = 0;
  Tensor latent;  // [T', C, h, w], scaled
  TokenIds caption;
};

/// Latents of one bucket; every item has the same latent shape.
struct LatentBucket {
  Bucket bucket;
  bool image = false;
  std::vector<LatentItem> items;  // same order as bucket.members
};

struct LatentCache {
  std::vector<LatentBucket> buckets;
  /// Multiplier applied to every encoded latent.
  double latent_scale = 1.0;

  const LatentItem& item(std::size_t bucket, std::int64_t id) const;
};

struct CacheOptions {
  std::vector<std::int64_t> duration_bins{1, 5, 9, 17};
  std::vector<double> aspect_bins{0.5, 1.0, 2.0};
  BucketRule rule;
  double latent_scale = 1.0;
  double radius = 3.0;  // shape radius at 16 px
};

/// Renders a record's motion at the given pixel shape; coordinates scale
/// with the frame size.
Tensor render_record(const ClipRecord& record, std::int64_t frames, std::int64_t height,
                     std::int64_t width, double radius16 = 3.0);

/// Buckets `records` for one stage (durations capped at stage.max_frames,
/// pixel area near stage.resolution^2) and encodes every member with the VAE
/// posterior mean. Image buckets hold the first frame of each clip.
LatentCache precompute_latents(const Vae& vae, const std::vector<ClipRecord>& records,
                               const TrainStage& stage, const CacheOptions& options);

/// Reciprocal standard deviation of all latent entries in the cache.
double suggest_latent_scale(const LatentCache& cache);

struct TrainConfig {
  double lr = 1e-3;
  std::int64_t warmup = 100;
  /// Learning rate at the last planned step relative to lr, in (0, 1].
  double final_lr_ratio = 1.0;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  /// Micro-batches per optimizer step.
  std::int64_t grad_accum = 1;
  /// Cap on items per micro-batch (0: bucket max_batch).
  std::int64_t batch_size = 0;
  FlowLossOptions flow;
  /// Probability of training a step item on the all-padding caption.
  double caption_dropout = 0.0;
  CacheOptions cache;
  std::string metrics_path;
  std::string checkpoint_path;
  std::int64_t checkpoint_every = 0;
  /// Extra key-values stored in checkpoint headers.
  std::map<std::string, std::string> metadata;
};

struct TrainMetrics {
  std::int64_t step = 0;
  std::int64_t stage = 0;
  double loss = 0.0;
  double lr = 0.0;
  double image_fraction = 0.0;  // realized fraction so far in the stage
  std::int64_t bucket_id = 0;
};

struct TrainState {
  std::int64_t step = 0;         // global steps completed
  std::int64_t stage = 0;        // current stage index
  std::int64_t stage_step = 0;   // steps completed within the stage
  std::int64_t image_steps = 0;  // image steps within the stage
  std::uint64_t seed = 0;
  ParamList params;
  std::vector<std::vector<double>> adam_m, adam_v;
  std::int64_t adam_t = 0;
};

/// "HYTS" v1: counters, seed, then named f64 parameter and moment arrays.
std::vector<std::uint8_t> serialize_train_state(const TrainState& state);
/// Restores counters and copies values into `params` (names and shapes must
/// match). Moments are returned in the state.
TrainState parse_train_state(const std::vector<std::uint8_t>& bytes, const ParamList& params);

struct TrainReport {
  std::vector<TrainMetrics> metrics;
  std::vector<std::string> warnings;
  TrainState state;
};

/// Flow-matching loss of `items` with one (t, noise) draw per item taken from
/// `rng` in item order, weighted by `weight`; gradients accumulate into the
/// model parameters. With caption_dropout > 0 each caption is replaced by
/// all padding with that probability (one extra draw per item). Returns the
/// unweighted mean loss.
double accumulate_fm_gradients(const VelocityModel& model, const std::vector<const LatentItem*>& items,
                               Rng& rng, const FlowLossOptions& flow, double weight,
                               double caption_dropout = 0.0);

class Trainer {
 public:
  Trainer(Dit& model, const Vae& vae, std::vector<ClipRecord> records, StagePlan plan,
          TrainConfig config, std::uint64_t seed);

  /// Runs up to `max_steps` more steps (all remaining when negative).
  TrainReport run(std::int64_t max_steps = -1);

  TrainState state() const;
  void restore(const TrainState& state);
  void save_state(const std::string& path) const;
  void load_state(const std::string& path);

  /// Latents of the current stage (built on demand).
  const LatentCache& cache();

 private:
  void enter_stage(std::int64_t stage);
  void write_checkpoint() const;

  Dit& model_;
  const Vae& vae_;
  std::vector<ClipRecord> records_;
  StagePlan plan_;
  TrainConfig config_;
  std::uint64_t seed_;
  Adam opt_;

  std::int64_t step_ = 0;
  std::int64_t stage_ = 0;
  std::int64_t stage_step_ = 0;
  std::int64_t image_steps_ = 0;

  std::int64_t cache_stage_ = -1;
  LatentCache cache_;
  std::unique_ptr<BatchStream> video_stream_, image_stream_;
  std::vector<std::size_t> video_index_, image_index_;  // stream bucket -> cache bucket
  std::int64_t video_used_ = 0, image_used_ = 0;
  std::vector<std::string> warnings_;
  bool metrics_open_ = false;
};

/// Convenience wrapper: trains all stages and writes the final checkpoint.
TrainReport run_pretrain(const StagePlan& plan, const std::vector<ClipRecord>& records, Dit& model,
                         const Vae& vae, const TrainConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Mix-scale image training

/// Items per micro-batch for each anchor: max(1, token_budget / tokens_i).
std::vector<std::int64_t> mix_scale_batch_sizes(const std::vector<std::int64_t>& tokens,
                                                std::int64_t token_budget);

struct MixScaleConfig {
  std::vector<std::int64_t> anchors{16, 32};  // image sides in pixels
  std::int64_t token_budget = 64;
  std::int64_t steps = 100;
  double lr = 1e-3;
  std::int64_t warmup = 100;
  double clip_norm = 1.0;
  FlowLossOptions flow;
  double latent_scale = 1.0;
  std::string metrics_path;
};

struct MixScaleStep {
  std::int64_t step = 0;
  double loss = 0.0;
  std::vector<std::int64_t> scales;  // anchors present in this global batch
  std::vector<std::int64_t> micro_sizes;
};

struct MixScaleReport {
  std::vector<MixScaleStep> steps;
  std::vector<std::string> warnings;
};

/// Image-only training where every global batch holds one micro-batch per
/// anchor scale that has data, sized by the inverse token-count rule.
MixScaleReport run_mix_scale_image_stage(Dit& model, const Vae& vae,
                                         const std::vector<ClipRecord>& records,
                                         const MixScaleConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Finetuning

/// Records passing every stage of the ladder in order.
std::vector<ClipRecord> curated_subset(const std::vector<ClipRecord>& records,
                                       const std::vector<FilterStage>& ladder);

/// Pretraining mechanics on the curated subset. The checkpoint header records
/// the subset provenance; ConfigError when the subset is empty.
TrainReport finetune(Dit& model, const Vae& vae, const std::vector<ClipRecord>& records,
                     const std::vector<FilterStage>& ladder, const StagePlan& plan,
                     TrainConfig config, std::uint64_t seed);

/// FNV-1a over the sorted "dit.*" key-values.
std::uint64_t model_config_hash(const ModelConfig& config);

void write_train_metrics_header(std::ostream& out);
void write_train_metrics_row(std::ostream& out, const TrainMetrics& m);

}  // namespace tinyvid
