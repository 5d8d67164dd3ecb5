// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "tinyvid/checkpoint.hpp"
#include "tinyvid/error.hpp"

namespace tinyvid {

// ---------------------------------------------------------------------------
// Plan

void StagePlan::validate() const {
  if (stages.empty()) throw ConfigError("stage plan is empty");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (!(s.image_ratio >= 0.0 && s.image_ratio <= 1.0)) {
      throw ConfigError("stage '" + s.name + "': image_ratio must lie in [0, 1]");
    }
    if (s.resolution < 1 || s.max_frames < 1 || s.steps < 0) {
      throw ConfigError("stage '" + s.name + "': resolution, max_frames must be positive and steps >= 0");
    }
    if (i > 0 && s.resolution < stages[i - 1].resolution) {
      throw ConfigError("stage '" + s.name + "': resolution decreases from " +
                        std::to_string(stages[i - 1].resolution) + " to " + std::to_string(s.resolution));
    }
  }
}

std::int64_t StagePlan::total_steps() const {
  std::int64_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

bool is_image_step(std::int64_t i, double ratio) {
  const auto before = static_cast<std::int64_t>(std::floor(static_cast<double>(i) * ratio + 1e-9));
  const auto after = static_cast<std::int64_t>(std::floor(static_cast<double>(i + 1) * ratio + 1e-9));
  return after > before;
}

double warmup_lr(double base, std::int64_t step, std::int64_t warmup) {
  if (warmup <= 0 || step >= warmup) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

double scheduled_lr(double base, std::int64_t step, std::int64_t warmup, std::int64_t total,
                    double final_ratio) {
  if (!(final_ratio > 0.0 && final_ratio <= 1.0)) {
    throw ConfigError("final learning-rate ratio must be in (0, 1], got " + std::to_string(final_ratio));
  }
  const auto start = std::max<std::int64_t>(warmup, 0);
  if (final_ratio == 1.0 || step < start || total <= start) return warmup_lr(base, step, warmup);
  const double p = std::min(1.0, static_cast<double>(step - start) / static_cast<double>(total - start));
  return base * (final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * p)));
}

// ---------------------------------------------------------------------------
// Latent cache

const LatentItem& LatentCache::item(std::size_t bucket, std::int64_t id) const {
  const auto& b = buckets.at(bucket);
  for (const auto& it : b.items) {
    if (it.id == id) return it;
  }
  throw ContractError("record " + std::to_string(id) + " is not in bucket " + std::to_string(bucket));
}

Tensor render_record(const ClipRecord& record, std::int64_t frames, std::int64_t height,
                     std::int64_t width, double radius16) {
  const double sx = static_cast<double>(width) / static_cast<double>(record.width);
  const double sy = static_cast<double>(height) / static_cast<double>(record.height);
  const double s = std::sqrt(sx * sy);
  Motion m = record.motion;
  m.x0 *= sx;
  m.y0 *= sy;
  m.speed *= s;
  if (s > 0.0) m.omega /= s;
  const double radius = radius16 * std::sqrt(static_cast<double>(height * width)) / 16.0;
  return render_clip(m, frames, height, width, radius);
}

namespace {

std::int64_t lcm64(std::int64_t a, std::int64_t b) { return a / std::gcd(a, b) * b; }

LatentBucket encode_bucket(const Vae& vae, const std::vector<ClipRecord>& records,
                           const Bucket& bucket, bool image, double latent_scale, double radius) {
  LatentBucket out;
  out.bucket = bucket;
  out.image = image;
  NoGradGuard no_grad;
  for (auto id : bucket.members) {
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const ClipRecord& r) { return r.id == id; });
    const Tensor video = render_record(*it, bucket.duration, bucket.height, bucket.width, radius);
    const Tensor mean = vae.encode(video).first.tensor;
    out.items.push_back({id, scale(mean, latent_scale), caption_tokens(it->motion)});
  }
  return out;
}

}  // namespace

LatentCache precompute_latents(const Vae& vae, const std::vector<ClipRecord>& records,
                               const TrainStage& stage, const CacheOptions& options) {
  const auto& spec = vae.spec();
  BucketRule rule = options.rule;
  rule.base_side = stage.resolution;
  rule.align = lcm64(rule.align, 2 * spec.c_s);

  std::vector<std::int64_t> bins;
  for (auto d : options.duration_bins) {
    if (d > 1 && d <= stage.max_frames && (d - 1) % spec.c_t == 0) bins.push_back(d);
  }
  std::vector<ClipRecord> videos = records;
  for (auto& r : videos) r.frames = std::min(r.frames, stage.max_frames);
  std::vector<ClipRecord> images = records;
  for (auto& r : images) r.frames = 1;

  LatentCache cache;
  cache.latent_scale = options.latent_scale;
  if (!bins.empty()) {
    const BucketGrid grid = bucketize(videos, bins, options.aspect_bins, rule);
    for (const auto& b : grid.buckets) {
      if (!b.members.empty()) {
        cache.buckets.push_back(encode_bucket(vae, records, b, false, options.latent_scale, options.radius));
      }
    }
  }
  const BucketGrid igrid = bucketize(images, {1}, options.aspect_bins, rule);
  for (const auto& b : igrid.buckets) {
    if (!b.members.empty()) {
      cache.buckets.push_back(encode_bucket(vae, records, b, true, options.latent_scale, options.radius));
    }
  }
  return cache;
}

double suggest_latent_scale(const LatentCache& cache) {
  double s = 0.0, s2 = 0.0;
  double n = 0.0;
  for (const auto& b : cache.buckets) {
    for (const auto& it : b.items) {
      for (double v : it.latent.data()) {
        s += v;
        s2 += v * v;
        n += 1.0;
      }
    }
  }
  if (n < 2.0) return 1.0;
  const double var = s2 / n - (s / n) * (s / n);
  return var > 0.0 ? cache.latent_scale / std::sqrt(var) : 1.0;
}

// ---------------------------------------------------------------------------
// Loss

double accumulate_fm_gradients(const VelocityModel& model, const std::vector<const LatentItem*>& items,
                               Rng& rng, const FlowLossOptions& flow, double weight,
                               double caption_dropout) {
  if (items.empty()) throw ContractError("empty micro-batch");
  const Shape& shape = items.front()->latent.shape();
  std::vector<Tensor> x1s, x0s;
  std::vector<double> ts;
  Captions captions;
  for (const auto* it : items) {
    if (it->latent.shape() != shape) throw ShapeError("micro-batch mixes latent shapes");
    Shape one{1};
    one.insert(one.end(), shape.begin(), shape.end());
    ts.push_back(sample_t_logit_normal(rng, flow.logit_mean, flow.logit_std));
    x0s.push_back(Tensor::randn(one, rng));
    x1s.push_back(reshape(it->latent, one));
    const bool drop = caption_dropout > 0.0 && rng.uniform() < caption_dropout;
    captions.push_back(drop ? TokenIds(it->caption.size(), 0) : it->caption);
  }
  const Tensor loss = fm_loss_at(model, concat(x0s, 0), concat(x1s, 0), ts, captions);
  scale(loss, weight).backward();
  return loss.item();
}

// ---------------------------------------------------------------------------
// Train state

namespace {

constexpr std::uint32_t kStateVersion = 1;

struct ByteWriter {
  std::vector<std::uint8_t> out;
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <class T>
  void put(T v) {
    raw(&v, sizeof v);
  }
  void str(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) {
    put(static_cast<std::uint64_t>(v.size()));
    raw(v.data(), v.size() * sizeof(double));
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (in.size() - pos < n) throw IoError("train state truncated");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
    pos += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), in.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> serialize_train_state(const TrainState& s) {
  ByteWriter w;
  w.raw("HYTS", 4);
  w.put(kStateVersion);
  w.put(s.step);
  w.put(s.stage);
  w.put(s.stage_step);
  w.put(s.image_steps);
  w.put(s.seed);
  w.put(s.adam_t);
  w.put(static_cast<std::uint32_t>(s.params.size()));
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    const auto& p = s.params[i];
    w.str(p.name);
    w.put(static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (auto d : p.tensor.shape()) w.put(d);
    const auto d = p.tensor.data();
    w.doubles(std::vector<double>(d.begin(), d.end()));
    w.doubles(i < s.adam_m.size() ? s.adam_m[i] : std::vector<double>{});
    w.doubles(i < s.adam_v.size() ? s.adam_v[i] : std::vector<double>{});
  }
  const auto sum = fnv1a64(w.out.data(), w.out.size());
  w.put(sum);
  return std::move(w.out);
}

TrainState parse_train_state(const std::vector<std::uint8_t>& bytes, const ParamList& params) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "HYTS", 4) != 0) {
    throw IoError("not a train state (bad magic)");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a64(bytes.data(), bytes.size() - 8)) throw IoError("train state checksum mismatch");
  ByteReader r{bytes, 4};
  if (r.get<std::uint32_t>() != kStateVersion) throw IoError("unsupported train state version");
  TrainState s;
  s.step = r.get<std::int64_t>();
  s.stage = r.get<std::int64_t>();
  s.stage_step = r.get<std::int64_t>();
  s.image_steps = r.get<std::int64_t>();
  s.seed = r.get<std::uint64_t>();
  s.adam_t = r.get<std::int64_t>();
  const auto n = r.get<std::uint32_t>();
  if (n != params.size()) throw IoError("train state has " + std::to_string(n) + " parameters, model " + std::to_string(params.size()));
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto name = r.str();
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(r.get<std::int64_t>());
    const auto& p = params[i];
    if (name != p.name || shape != p.tensor.shape()) {
      throw IoError("train state parameter '" + name + "' does not match model parameter '" + p.name + "'");
    }
    const auto values = r.doubles();
    if (static_cast<std::int64_t>(values.size()) != p.tensor.numel()) throw IoError("train state size mismatch");
    auto d = p.tensor.mutable_data();
    std::copy(values.begin(), values.end(), d.begin());
    s.adam_m.push_back(r.doubles());
    s.adam_v.push_back(r.doubles());
  }
  if (r.pos + 8 != bytes.size()) throw IoError("trailing bytes after train state");
  s.params = params;
  return s;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

AdamOptions adam_options(const TrainConfig& c) {
  AdamOptions o;
  o.lr = c.lr;
  o.clip_norm = c.clip_norm;
  o.weight_decay = c.weight_decay;
  return o;
}

}  // namespace

void write_train_metrics_header(std::ostream& out) {
  out << "step,stage,loss,lr,image_fraction,bucket_id\n";
}

void write_train_metrics_row(std::ostream& out, const TrainMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g,%.17g,%.17g,%lld\n", static_cast<long long>(m.step),
                static_cast<long long>(m.stage), m.loss, m.lr, m.image_fraction,
                static_cast<long long>(m.bucket_id));
  out << buf;
}

Trainer::Trainer(Dit& model, const Vae& vae, std::vector<ClipRecord> records, StagePlan plan,
                 TrainConfig config, std::uint64_t seed)
    : model_(model),
      vae_(vae),
      records_(std::move(records)),
      plan_(std::move(plan)),
      config_(std::move(config)),
      seed_(seed),
      opt_(model.parameters(), adam_options(config_)) {
  plan_.validate();
  if (records_.empty()) throw ConfigError("training needs at least one record");
  if (config_.grad_accum < 1) throw ConfigError("grad_accum must be >= 1");
  if (config_.batch_size < 0) throw ConfigError("batch_size must be >= 0");
  scheduled_lr(config_.lr, 0, 0, 1, config_.final_lr_ratio);  // validates the ratio
  if (model.config().in_channels != vae.spec().channels) {
    throw ConfigError("model input channels (" + std::to_string(model.config().in_channels) +
                      ") differ from VAE latent channels (" + std::to_string(vae.spec().channels) + ")");
  }
}

const LatentCache& Trainer::cache() {
  if (cache_stage_ != stage_) enter_stage(stage_);
  return cache_;
}

void Trainer::enter_stage(std::int64_t stage) {
  const auto& st = plan_.stages[static_cast<std::size_t>(stage)];
  cache_ = precompute_latents(vae_, records_, st, config_.cache);
  cache_stage_ = stage;
  std::vector<Bucket> vids, imgs;
  video_index_.clear();
  image_index_.clear();
  for (std::size_t i = 0; i < cache_.buckets.size(); ++i) {
    Bucket b = cache_.buckets[i].bucket;
    if (config_.batch_size > 0) b.max_batch = std::min(b.max_batch, config_.batch_size);
    if (cache_.buckets[i].image) {
      imgs.push_back(b);
      image_index_.push_back(i);
    } else {
      vids.push_back(b);
      video_index_.push_back(i);
    }
  }
  if (vids.empty() && st.image_ratio < 1.0 && st.steps > 0) {
    throw ConfigError("stage '" + st.name + "' has no video data");
  }
  const Rng base = Rng(seed_).split("batches").split(static_cast<std::uint64_t>(stage));
  PrefetchOptions po;
  po.repeat = true;
  video_stream_ = vids.empty() ? nullptr : std::make_unique<BatchStream>(vids, base.split("video"), po);
  image_stream_ = imgs.empty() ? nullptr : std::make_unique<BatchStream>(imgs, base.split("image"), po);
  // Replay the batches already consumed in this stage.
  video_used_ = (stage_step_ - image_steps_) * config_.grad_accum;
  image_used_ = image_steps_ * config_.grad_accum;
  for (std::int64_t i = 0; i < video_used_; ++i) video_stream_->next();
  for (std::int64_t i = 0; i < image_used_; ++i) image_stream_->next();
}

TrainState Trainer::state() const {
  TrainState s;
  s.step = step_;
  s.stage = stage_;
  s.stage_step = stage_step_;
  s.image_steps = image_steps_;
  s.seed = seed_;
  s.params = model_.parameters();
  auto& opt = const_cast<Adam&>(opt_);
  s.adam_m = opt.first_moments();
  s.adam_v = opt.second_moments();
  s.adam_t = opt.steps_taken();
  return s;
}

void Trainer::restore(const TrainState& s) {
  if (s.seed != seed_) throw ConfigError("train state was written with a different seed");
  const auto params = model_.parameters();
  if (s.params.size() != params.size()) throw ContractError("train state parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (s.params[i].tensor.node() != params[i].tensor.node()) {
      const auto src = s.params[i].tensor.data();
      auto dst = params[i].tensor.mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  opt_.first_moments() = s.adam_m;
  opt_.second_moments() = s.adam_v;
  opt_.set_steps_taken(s.adam_t);
  step_ = s.step;
  stage_ = s.stage;
  stage_step_ = s.stage_step;
  image_steps_ = s.image_steps;
  cache_stage_ = -1;
}

void Trainer::save_state(const std::string& path) const {
  write_file_atomic(path, serialize_train_state(state()));
}

void Trainer::load_state(const std::string& path) {
  restore(parse_train_state(read_file(path), model_.parameters()));
}

void Trainer::write_checkpoint() const {
  auto kv = model_.config().to_kv();
  for (const auto& [k, v] : vae_.config().to_kv()) kv[k] = v;
  for (const auto& [k, v] : config_.metadata) kv[k] = v;
  kv["train.step"] = std::to_string(step_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", cache_.latent_scale);
  kv["train.latent_scale"] = buf;
  kv["train.model_config_hash"] = std::to_string(model_config_hash(model_.config()));
  save_checkpoint(config_.checkpoint_path, make_checkpoint(kv, model_.parameters()));
}

TrainReport Trainer::run(std::int64_t max_steps) {
  TrainReport report;
  std::ofstream metrics;
  if (!config_.metrics_path.empty()) {
    const bool append = step_ > 0 || metrics_open_;
    metrics.open(config_.metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + config_.metrics_path);
    if (!append) write_train_metrics_header(metrics);
    metrics_open_ = true;
  }
  std::int64_t done = 0;
  while (stage_ < static_cast<std::int64_t>(plan_.stages.size()) && (max_steps < 0 || done < max_steps)) {
    const auto& st = plan_.stages[static_cast<std::size_t>(stage_)];
    if (st.steps == 0) {
      warnings_.push_back("stage '" + st.name + "' has a zero step budget and was skipped");
      ++stage_;
      stage_step_ = image_steps_ = 0;
      continue;
    }
    if (cache_stage_ != stage_) enter_stage(stage_);

    const bool image = is_image_step(stage_step_, st.image_ratio);
    BatchStream* stream = image ? image_stream_.get() : video_stream_.get();
    const auto& index = image ? image_index_ : video_index_;
    if (!stream) throw ConfigError("stage '" + st.name + "' has no " + (image ? "image" : "video") + " data");

    std::vector<std::vector<const LatentItem*>> micro;
    std::size_t bucket_id = 0;
    double total = 0.0;
    for (std::int64_t a = 0; a < config_.grad_accum; ++a) {
      const auto batch = stream->next();
      if (!batch) throw ContractError("batch stream ended unexpectedly");
      bucket_id = index[batch->bucket];
      std::vector<const LatentItem*> items;
      for (auto id : batch->ids) items.push_back(&cache_.item(bucket_id, id));
      total += static_cast<double>(items.size());
      micro.push_back(std::move(items));
    }
    (image ? image_used_ : video_used_) += config_.grad_accum;

    Rng step_rng = Rng(seed_).split("step").split(static_cast<std::uint64_t>(step_));
    double loss = 0.0;
    for (const auto& items : micro) {
      const double w = static_cast<double>(items.size()) / total;
      loss += w * accumulate_fm_gradients(model_, items, step_rng, config_.flow, w, config_.caption_dropout);
    }
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) +
                             (config_.checkpoint_path.empty() ? std::string()
                                                              : "; last checkpoint kept at " + config_.checkpoint_path),
                         static_cast<long>(step_));
    }
    const double lr = scheduled_lr(config_.lr, step_, config_.warmup, plan_.total_steps(), config_.final_lr_ratio);
    opt_.step(lr);

    if (image) ++image_steps_;
    ++stage_step_;
    TrainMetrics m;
    m.step = step_;
    m.stage = stage_;
    m.loss = loss;
    m.lr = lr;
    m.image_fraction = static_cast<double>(image_steps_) / static_cast<double>(stage_step_);
    m.bucket_id = static_cast<std::int64_t>(bucket_id);
    report.metrics.push_back(m);
    if (metrics) write_train_metrics_row(metrics, m);
    ++step_;
    ++done;
    if (!config_.checkpoint_path.empty() && config_.checkpoint_every > 0 &&
        step_ % config_.checkpoint_every == 0) {
      write_checkpoint();
    }
    if (stage_step_ == st.steps) {
      ++stage_;
      stage_step_ = image_steps_ = 0;
    }
  }
  if (stage_ >= static_cast<std::int64_t>(plan_.stages.size()) && !config_.checkpoint_path.empty() &&
      cache_stage_ >= 0) {
    write_checkpoint();
  }
  report.warnings = warnings_;
  report.state = state();
  return report;
}

TrainReport run_pretrain(const StagePlan& plan, const std::vector<ClipRecord>& records, Dit& model,
                         const Vae& vae, const TrainConfig& config, std::uint64_t seed) {
  Trainer trainer(model, vae, records, plan, config, seed);
  return trainer.run();
}

// ---------------------------------------------------------------------------
// Mix-scale

std::vector<std::int64_t> mix_scale_batch_sizes(const std::vector<std::int64_t>& tokens,
                                                std::int64_t token_budget) {
  std::vector<std::int64_t> out;
  for (auto t : tokens) {
    if (t < 1) throw ConfigError("token counts must be positive");
    out.push_back(std::max<std::int64_t>(1, token_budget / t));
  }
  return out;
}

MixScaleReport run_mix_scale_image_stage(Dit& model, const Vae& vae,
                                         const std::vector<ClipRecord>& records,
                                         const MixScaleConfig& config, std::uint64_t seed) {
  if (config.anchors.empty()) throw ConfigError("mix-scale training needs at least one anchor");
  MixScaleReport report;
  if (config.anchors.size() < 2) {
    report.warnings.push_back("single anchor scale: mix-scale training degenerates to plain image training");
  }
  const auto& spec = vae.spec();
  const auto align = 2 * spec.c_s;
  struct Scale {
    std::int64_t side;
    std::vector<LatentItem> items;
    std::int64_t micro = 1;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  std::vector<Scale> scales;
  std::vector<std::int64_t> tokens;
  {
    NoGradGuard ng;
    for (auto side : config.anchors) {
      if (side % align != 0) {
        throw ConfigError("anchor " + std::to_string(side) + " is not a multiple of " + std::to_string(align));
      }
      Scale s{side, {}, 1, {}, 0};
      for (const auto& r : records) {
        if (std::min(r.height, r.width) < side) continue;
        const Tensor img = render_record(r, 1, side, side);
        s.items.push_back({r.id, scale(vae.encode(img).first.tensor, config.latent_scale), caption_tokens(r.motion)});
      }
      if (s.items.empty()) {
        report.warnings.push_back("anchor " + std::to_string(side) + " has no data");
        continue;
      }
      tokens.push_back(token_count(s.items.front().latent.shape(), model.config().patch));
      scales.push_back(std::move(s));
    }
  }
  if (scales.empty()) throw ConfigError("no anchor scale has data");
  if (scales.size() == 1 && config.anchors.size() > 1) {
    report.warnings.push_back("only one anchor scale has data: plain image training");
  }
  const auto sizes = mix_scale_batch_sizes(tokens, config.token_budget);
  for (std::size_t i = 0; i < scales.size(); ++i) scales[i].micro = sizes[i];

  AdamOptions ao;
  ao.lr = config.lr;
  ao.clip_norm = config.clip_norm;
  Adam opt(model.parameters(), ao);
  const Rng base(seed);
  std::ofstream metrics;
  if (!config.metrics_path.empty()) {
    metrics.open(config.metrics_path, std::ios::trunc);
    metrics << "step,loss,scales,micro_sizes\n";
  }
  std::int64_t epoch = 0;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    MixScaleStep rec;
    rec.step = step;
    std::vector<std::vector<const LatentItem*>> micro;
    double total = 0.0;
    for (std::size_t si = 0; si < scales.size(); ++si) {
      auto& s = scales[si];
      std::vector<const LatentItem*> items;
      for (std::int64_t k = 0; k < s.micro; ++k) {
        if (s.cursor == s.order.size()) {
          s.order.resize(s.items.size());
          std::iota(s.order.begin(), s.order.end(), std::size_t{0});
          Rng shuffle = base.split("shuffle").split(si).split(static_cast<std::uint64_t>(epoch++));
          for (std::size_t i = s.order.size(); i > 1; --i) {
            std::swap(s.order[i - 1], s.order[shuffle.uniform_int(i)]);
          }
          s.cursor = 0;
        }
        items.push_back(&s.items[s.order[s.cursor++]]);
      }
      total += static_cast<double>(items.size());
      rec.scales.push_back(s.side);
      rec.micro_sizes.push_back(static_cast<std::int64_t>(items.size()));
      micro.push_back(std::move(items));
    }
    Rng step_rng = base.split("step").split(static_cast<std::uint64_t>(step));
    for (const auto& items : micro) {
      const double w = static_cast<double>(items.size()) / total;
      rec.loss += w * accumulate_fm_gradients(model, items, step_rng, config.flow, w);
    }
    if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss at step " + std::to_string(step), static_cast<long>(step));
    opt.step(warmup_lr(config.lr, step, config.warmup));
    if (metrics) {
      metrics << step << ',' << rec.loss << ',';
      for (std::size_t i = 0; i < rec.scales.size(); ++i) metrics << (i ? ";" : "") << rec.scales[i];
      metrics << ',';
      for (std::size_t i = 0; i < rec.micro_sizes.size(); ++i) metrics << (i ? ";" : "") << rec.micro_sizes[i];
      metrics << '\n';
    }
    report.steps.push_back(std::move(rec));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Finetune

std::vector<ClipRecord> curated_subset(const std::vector<ClipRecord>& records,
                                       const std::vector<FilterStage>& ladder) {
  if (ladder.empty()) throw ConfigError("finetuning needs at least one filter stage");
  validate_stage_ladder(ladder);
  std::vector<ClipRecord> kept = records;
  for (const auto& stage : ladder) kept = apply_stage(kept, stage);
  return kept;
}

std::uint64_t model_config_hash(const ModelConfig& config) {
  std::string s;
  for (const auto& [k, v] : config.to_kv()) s += k + "=" + v + "\n";
  return fnv1a64(s.data(), s.size());
}

TrainReport finetune(Dit& model, const Vae& vae, const std::vector<ClipRecord>& records,
                     const std::vector<FilterStage>& ladder, const StagePlan& plan,
                     TrainConfig config, std::uint64_t seed) {
  const auto subset = curated_subset(records, ladder);
  if (subset.empty()) {
    throw ConfigError("curated subset after stage '" + ladder.back().name + "' is empty");
  }
  std::string ids;
  for (const auto& r : subset) ids += std::to_string(r.id) + ",";
  config.metadata["finetune.subset_stage"] = ladder.back().name;
  config.metadata["finetune.subset_size"] = std::to_string(subset.size());
  config.metadata["finetune.subset_hash"] = std::to_string(fnv1a64(ids.data(), ids.size()));
  Trainer trainer(model, vae, subset, plan, std::move(config), seed);
  return trainer.run();
}

}  // namespace tinyvid
