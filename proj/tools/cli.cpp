// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "tinyvid/checkpoint.hpp"
#include "tinyvid/config.hpp"
#include "tinyvid/data.hpp"
#include "tinyvid/dit.hpp"
#include "tinyvid/error.hpp"
#include "tinyvid/flow.hpp"
#include "tinyvid/nn.hpp"
#include "tinyvid/ops.hpp"
#include "tinyvid/scaling.hpp"
#include "tinyvid/trainer.hpp"
#include "tinyvid/vae.hpp"

namespace tinyvid::cli {
namespace fs = std::filesystem;

void write_p6(const std::string& path, const Tensor& clip, long f) {
  const auto& s = clip.shape();
  if (s.size() != 4 || s[1] != 3) throw ShapeError("P6 output needs a [F, 3, H, W] clip");
  const auto h = s[2], w = s[3];
  const auto d = clip.data();
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = d[static_cast<std::size_t>(((f * 3 + c) * h + i) * w + j)];
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
      }
    }
  }
  write_file_atomic(path, {bytes.begin(), bytes.end()});
}

namespace {

struct Run {
  Config config;
  fs::path out;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;

  std::string path(const std::string& name) const { return (out / name).string(); }
  const std::string& required(const std::string& key) const {
    const auto& v = config.get(key);
    if (v.empty()) throw ConfigError(key + " must be set");
    return v;
  }
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

/// "name:resolution:frames:image_ratio:steps" entries separated by ';'.
StagePlan parse_stage_plan(const std::string& text) {
  StagePlan plan;
  for (const auto& entry : split(text, ';')) {
    const auto f = split(entry, ':');
    if (f.size() != 5) throw ConfigError("train.stages: '" + entry + "' is not name:resolution:frames:ratio:steps");
    TrainStage s;
    s.name = f[0];
    s.resolution = static_cast<std::int64_t>(parse_number(f[1], "train.stages"));
    s.max_frames = static_cast<std::int64_t>(parse_number(f[2], "train.stages"));
    s.image_ratio = parse_number(f[3], "train.stages");
    s.steps = static_cast<std::int64_t>(parse_number(f[4], "train.stages"));
    plan.stages.push_back(s);
  }
  plan.validate();
  return plan;
}

/// "name:filter=threshold,filter=threshold" entries separated by ';'.
std::vector<FilterStage> parse_filter_ladder(const std::string& text) {
  std::vector<FilterStage> ladder;
  for (const auto& entry : split(text, ';')) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos) throw ConfigError("curate.stages: '" + entry + "' is not name:filter=value,...");
    FilterStage stage;
    stage.name = entry.substr(0, colon);
    for (const auto& kv : split(entry.substr(colon + 1), ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("curate.stages: '" + kv + "' is not filter=value");
      stage.thresholds[kv.substr(0, eq)] = parse_number(kv.substr(eq + 1), "curate.stages");
    }
    ladder.push_back(stage);
  }
  if (ladder.empty()) throw ConfigError("curate.stages is empty");
  validate_stage_ladder(ladder);
  return ladder;
}

std::vector<ClipRecord> read_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path);
  return read_manifest(in);
}

void write_manifest_file(const std::string& path, const std::vector<ClipRecord>& records) {
  std::ostringstream out;
  write_manifest(out, records);
  const auto s = out.str();
  write_file_atomic(path, {s.begin(), s.end()});
}

void write_text_file(const std::string& path, const std::string& text) {
  write_file_atomic(path, {text.begin(), text.end()});
}

std::unique_ptr<Vae> load_vae(const std::string& path) {
  const auto ckpt = load_checkpoint(path);
  Rng rng(0);
  auto vae = std::make_unique<Vae>(VaeConfig::from_kv(ckpt.config), rng);
  load_params(ckpt, vae->parameters());
  return vae;
}

std::unique_ptr<Dit> load_dit(const Checkpoint& ckpt) {
  ModelConfig mc = ModelConfig::from_kv(ckpt.config);
  Rng rng(0);
  auto model = std::make_unique<Dit>(mc, rng);
  load_params(ckpt, model->parameters());
  return model;
}

double checkpoint_latent_scale(const Checkpoint& ckpt) {
  auto it = ckpt.config.find("train.latent_scale");
  return it == ckpt.config.end() ? 1.0 : parse_number(it->second, "train.latent_scale");
}

FlowLossOptions flow_options(const Config& c) {
  FlowLossOptions f;
  f.logit_mean = c.get_double("flow.logit_mean");
  f.logit_std = c.get_double("flow.logit_std");
  return f;
}

ScheduleSpec schedule_spec(const Config& c) {
  ScheduleSpec s;
  s.kind = parse_schedule_kind(c.get("flow.schedule"));
  s.steps = static_cast<int>(c.get_int("flow.steps"));
  s.shift = c.get_double("flow.shift");
  s.lq_linear_fraction = c.get_double("flow.lq_linear_fraction");
  s.lq_threshold = c.get_double("flow.lq_threshold");
  return s;
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_gen_data(const Run& run) {
  const auto& c = run.config;
  RecordSpec spec;
  spec.count = c.get_int("data.count");
  spec.embedding_dim = c.get_int("data.embedding_dim");
  spec.concepts = c.get_int("data.concepts");
  spec.duplicate_rate = c.get_double("data.duplicate_rate");
  spec.frame_choices = c.get_ints("data.frame_choices");
  if (spec.count < 1) throw ConfigError("data.count must be positive");
  Rng rng = Rng(run.seed).split("gen-data");
  const auto records = generate_records(rng, spec);
  write_manifest_file(run.path("manifest.tsv"), records);

  std::ostringstream curves;
  write_curves_csv(curves, synthetic_curves(SyntheticCurveSpec{}));
  write_text_file(run.path("curves.csv"), curves.str());
  *run.log << "wrote " << records.size() << " records and synthetic loss curves\n";
}

void cmd_curate(const Run& run) {
  const auto& c = run.config;
  const auto ladder = parse_filter_ladder(c.get("curate.stages"));
  auto records = read_manifest_file(run.required("curate.manifest"));
  const auto input = records.size();
  records = dedup(std::move(records), c.get_double("curate.dedup_threshold"));
  const auto after_dedup = records.size();

  Rng rng = Rng(run.seed).split("curate");
  const auto k = std::min<std::int64_t>(c.get_int("curate.kmeans_k"), static_cast<std::int64_t>(records.size()));
  if (k >= 1) {
    records = kmeans_balance(records, k, c.get_int("curate.resample_cap"), rng).balanced;
  }
  const auto after_balance = records.size();

  std::vector<RetentionReport> reports;
  for (const auto& stage : ladder) {
    RetentionReport rep;
    records = apply_stage(records, stage, &rep);
    reports.push_back(rep);
    write_manifest_file(run.path("stage_" + stage.name + ".tsv"), records);
  }
  write_manifest_file(run.path("curated.tsv"), records);
  std::ostringstream retention;
  write_retention_csv(retention, reports);
  write_text_file(run.path("retention.csv"), retention.str());
  *run.log << "curate: " << input << " records, " << after_dedup << " after dedup, " << after_balance
           << " after balancing, " << records.size() << " after stage '" << ladder.back().name << "'\n";
}

void cmd_train_vae(const Run& run) {
  const auto& c = run.config;
  VaeConfig vc = VaeConfig::from_kv(c.section("vae"));
  const auto resolution = c.get_int("vae_train.resolution");
  const auto frames = c.get_int("vae_train.frames");
  VaeDataset data;
  data.base_resolution = resolution;
  Rng rng = Rng(run.seed).split("train-vae");
  Rng clips = rng.split("clips");
  ClipSpec spec;
  spec.frames = frames;
  spec.height = spec.width = resolution;
  for (std::int64_t i = 0; i < c.get_int("vae_train.clips"); ++i) data.motions.push_back(random_motion(clips, spec));
  if (data.motions.empty()) throw ConfigError("vae_train.clips must be positive");

  VaeTrainConfig tc;
  tc.stages = {{resolution, frames, c.get_int("vae_train.steps")}};
  tc.lr = c.get_double("vae_train.lr");
  tc.video_per_image = c.get_int("vae_train.video_per_image");
  tc.max_interval = c.get_int("vae_train.max_interval");
  tc.deterministic_latent = c.get_bool("vae_train.deterministic_latent");
  tc.tiling_steps = c.get_int("vae_train.tiling_steps");
  tc.tiling_probability = c.get_double("vae_train.tiling_probability");
  tc.checkpoint_every = c.get_int("vae_train.checkpoint_every");
  tc.checkpoint_path = run.path("vae.ckpt");
  tc.metrics_path = run.path("vae_metrics.csv");

  Rng init = rng.split("init");
  Vae vae(vc, init);
  Rng train = rng.split("train");
  train_vae(vae, data, tc, train);

  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < data.motions.size(); ++i) {
    const Tensor clip = data.render(i, resolution, frames, 1);
    total += psnr(vae.decode(vae.encode(clip).first.tensor), clip);
  }
  *run.log << "train-vae: mean reconstruction PSNR " << total / static_cast<double>(data.motions.size())
           << " dB over " << data.motions.size() << " clips\n";
}

void cmd_train_dit(const Run& run) {
  const auto& c = run.config;
  const auto records = read_manifest_file(run.required("train.manifest"));
  const auto vae = load_vae(run.required("train.vae_checkpoint"));
  const StagePlan plan = parse_stage_plan(c.get("train.stages"));

  ModelConfig mc = ModelConfig::from_kv(c.section("dit"));
  mc.validate();
  Rng rng = Rng(run.seed).split("train-dit");
  Rng init = rng.split("init");
  Dit model(mc, init);
  const auto& init_path = c.get("train.init_checkpoint");
  std::map<std::string, std::string> metadata;
  if (!init_path.empty()) {
    const auto ckpt = load_checkpoint(init_path);
    if (ModelConfig::from_kv(ckpt.config).to_kv() != mc.to_kv()) {
      throw ConfigError("train.init_checkpoint model config differs from the dit.* settings");
    }
    load_params(ckpt, model.parameters());
    metadata["train.init_checkpoint"] = init_path;
  }
  metadata["run.seed"] = std::to_string(run.seed);
  metadata["train.stages"] = c.get("train.stages");

  TrainConfig tc;
  tc.lr = c.get_double("train.lr");
  tc.warmup = c.get_int("train.warmup");
  tc.final_lr_ratio = c.get_double("train.final_lr_ratio");
  tc.clip_norm = c.get_double("train.clip_norm");
  tc.weight_decay = c.get_double("train.weight_decay");
  tc.grad_accum = c.get_int("train.grad_accum");
  tc.batch_size = c.get_int("train.batch_size");
  tc.caption_dropout = c.get_double("train.caption_dropout");
  tc.flow = flow_options(c);
  tc.metrics_path = run.path("metrics.csv");
  tc.checkpoint_path = run.path("dit.ckpt");
  tc.checkpoint_every = c.get_int("train.checkpoint_every");
  tc.metadata = metadata;
  double latent_scale = c.get_double("train.latent_scale");
  if (latent_scale <= 0.0) {
    latent_scale = suggest_latent_scale(precompute_latents(*vae, records, plan.stages.front(), tc.cache));
  }
  tc.cache.latent_scale = latent_scale;

  const auto anchors = c.get_ints("train.mix_scale_anchors");
  const auto mix_steps = c.get_int("train.mix_scale_steps");
  if (!anchors.empty() && mix_steps > 0) {
    MixScaleConfig mx;
    mx.anchors = anchors;
    mx.token_budget = c.get_int("train.mix_scale_token_budget");
    mx.steps = mix_steps;
    mx.lr = tc.lr;
    mx.warmup = tc.warmup;
    mx.clip_norm = tc.clip_norm;
    mx.flow = tc.flow;
    mx.latent_scale = latent_scale;
    mx.metrics_path = run.path("mix_scale.csv");
    const auto report = run_mix_scale_image_stage(model, *vae, records, mx, rng.split("mix-scale").key());
    for (const auto& w : report.warnings) *run.log << "warning: " << w << '\n';
  }

  Trainer trainer(model, *vae, records, plan, tc, run.seed);
  const auto& resume = c.get("train.resume");
  if (!resume.empty()) trainer.load_state(resume);
  const auto report = trainer.run();
  trainer.save_state(run.path("train.state"));
  for (const auto& w : report.warnings) *run.log << "warning: " << w << '\n';
  *run.log << "train-dit: " << report.state.step << " steps";
  if (!report.metrics.empty()) *run.log << ", final loss " << report.metrics.back().loss;
  *run.log << ", latent scale " << latent_scale << '\n';
}

void cmd_distill(const Run& run) {
  const auto& c = run.config;
  const auto teacher_ckpt = load_checkpoint(run.required("distill.teacher"));
  auto teacher = load_dit(teacher_ckpt);
  const auto vae = load_vae(run.required("distill.vae_checkpoint"));
  const auto records = read_manifest_file(run.required("distill.manifest"));
  const StagePlan plan = parse_stage_plan(c.get("train.stages"));

  CacheOptions co;
  co.latent_scale = checkpoint_latent_scale(teacher_ckpt);
  const LatentCache cache = precompute_latents(*vae, records, plan.stages.front(), co);
  std::vector<const LatentBucket*> buckets;
  for (const auto& b : cache.buckets) {
    if (!b.items.empty()) buckets.push_back(&b);
  }
  if (buckets.empty()) throw ConfigError("distill.manifest yields no latents");
  const auto batch = std::max<std::int64_t>(1, c.get_int("distill.batch_size"));
  DistillBatchSource source = [&](Rng& r) {
    const auto* b = buckets[r.uniform_int(buckets.size())];
    std::vector<Tensor> xs;
    Captions caps;
    for (std::int64_t i = 0; i < batch; ++i) {
      const auto& it = b->items[r.uniform_int(b->items.size())];
      Shape one{1};
      one.insert(one.end(), it.latent.shape().begin(), it.latent.shape().end());
      xs.push_back(reshape(it.latent, one));
      caps.push_back(it.caption);
    }
    return std::make_pair(concat(xs, 0), caps);
  };

  Rng rng = Rng(run.seed).split("distill");
  Rng init = rng.split("init");
  Dit student = Dit::make_student(*teacher, init);
  set_requires_grad(teacher->parameters(), false);
  DistillOptions opt;
  opt.steps = static_cast<int>(c.get_int("distill.steps"));
  opt.lr = c.get_double("distill.lr");
  opt.scale_min = c.get_double("distill.scale_min");
  opt.scale_max = c.get_double("distill.scale_max");
  opt.time = flow_options(c);
  Rng train = rng.split("train");
  const auto report = distill_guidance(*teacher, student, source, opt, train);

  std::ostringstream metrics;
  metrics << "step,loss\n";
  for (std::size_t i = 0; i < report.losses.size(); ++i) metrics << i << ',' << fmt_double(report.losses[i]) << '\n';
  write_text_file(run.path("distill_metrics.csv"), metrics.str());
  auto kv = teacher_ckpt.config;
  for (const auto& [k, v] : student.config().to_kv()) kv[k] = v;
  kv["distill.teacher"] = c.get("distill.teacher");
  save_checkpoint(run.path("student.ckpt"), make_checkpoint(kv, student.parameters()));
  *run.log << "distill: " << report.losses.size() << " steps";
  if (!report.losses.empty()) *run.log << ", final loss " << report.losses.back();
  *run.log << '\n';
}

Captions sample_captions(const Config& c, std::int64_t count, Rng& rng) {
  Captions caps;
  for (const auto& entry : split(c.get("sample.captions"), ';')) {
    TokenIds ids;
    for (const auto& tok : split(entry, ',')) ids.push_back(static_cast<std::int64_t>(parse_number(tok, "sample.captions")));
    caps.push_back(ids);
  }
  if (!caps.empty()) return caps;
  ClipSpec spec;
  for (std::int64_t i = 0; i < count; ++i) caps.push_back(caption_tokens(random_motion(rng, spec)));
  return caps;
}

void cmd_sample(const Run& run) {
  const auto& c = run.config;
  const auto ckpt = load_checkpoint(run.required("sample.checkpoint"));
  const auto model = load_dit(ckpt);
  const auto vae = load_vae(run.required("sample.vae_checkpoint"));
  const double latent_scale = checkpoint_latent_scale(ckpt);

  Rng rng = Rng(run.seed).split("sample");
  Rng caption_rng = rng.split("captions");
  const Captions caps = sample_captions(c, c.get_int("sample.count"), caption_rng);
  const auto n = static_cast<std::int64_t>(caps.size());
  if (n < 1) throw ConfigError("sample.count must be positive");
  const Shape latent = vae->spec().latent_shape({c.get_int("sample.frames"), 3, c.get_int("sample.height"), c.get_int("sample.width")});
  Shape shape{n};
  shape.insert(shape.end(), latent.begin(), latent.end());

  GuidanceSpec guidance;
  guidance.scale = c.get_double("flow.guidance");
  guidance.mode = model->accepts_guidance() ? GuidanceMode::distilled_one_pass : GuidanceMode::cfg_two_pass;
  const auto sigmas = make_schedule(schedule_spec(c));
  NoGradGuard no_grad;
  Rng noise = rng.split("noise");
  const auto result = euler_sample(*model, sigmas, caps, guidance, shape, noise);

  std::ostringstream manifest;
  manifest << "index\tcaption\tshape\tframes\tvalues\n";
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor z = reshape(slice(result.x, 0, i, 1), latent);
    const Tensor clip = vae->decode(scale(z, 1.0 / latent_scale));
    const auto frames = clip.shape()[0];
    for (std::int64_t f = 0; f < frames; ++f) {
      char name[64];
      std::snprintf(name, sizeof name, "sample_%03lld_frame_%03lld.ppm", static_cast<long long>(i), static_cast<long long>(f));
      write_p6(run.path(name), clip, static_cast<long>(f));
    }
    manifest << i << '\t';
    for (std::size_t k = 0; k < caps[static_cast<std::size_t>(i)].size(); ++k) manifest << (k ? "," : "") << caps[static_cast<std::size_t>(i)][k];
    manifest << '\t';
    for (std::size_t k = 0; k < latent.size(); ++k) manifest << (k ? "x" : "") << latent[k];
    manifest << '\t' << frames << '\t';
    const auto d = z.data();
    for (std::size_t k = 0; k < d.size(); ++k) manifest << (k ? "," : "") << fmt_double(d[k]);
    manifest << '\n';
  }
  write_text_file(run.path("latents.tsv"), manifest.str());
  *run.log << "sample: " << n << " clips, " << result.model_evaluations << " model evaluations, "
           << sigmas.size() - 1 << " steps\n";
}

void cmd_fit_scaling(const Run& run) {
  const auto& c = run.config;
  std::vector<LossCurve> curves;
  const auto& path = c.get("scaling.curves");
  if (path.empty()) {
    curves = synthetic_curves(SyntheticCurveSpec{});
  } else {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read curves " + path);
    curves = read_curves_csv(in);
  }
  const auto grid = covering_grid(curves, static_cast<int>(c.get_int("scaling.grid_points")));
  const ScalingFit fit = fit_scaling(curves, grid);
  std::ostringstream text;
  write_fit(text, fit);
  write_text_file(run.path("fit.txt"), text.str());
  std::ostringstream env;
  write_envelope_csv(env, extract_envelope(curves, grid));
  write_text_file(run.path("envelope.csv"), env.str());

  const double compute = c.get_double("scaling.plan_compute");
  const Budget b = plan_budget(fit, compute);
  const Budget img = plan_budget(image_scaling_constants(), compute);
  const Budget vid = plan_budget(video_scaling_constants(), compute);
  std::ostringstream plan;
  plan << "compute_pflops=" << fmt_double(compute) << '\n'
       << "fit.model_size_billions=" << fmt_double(b.model_size) << '\n'
       << "fit.tokens_billions=" << fmt_double(b.tokens) << '\n'
       << "image.model_size_billions=" << fmt_double(img.model_size) << '\n'
       << "image.tokens_billions=" << fmt_double(img.tokens) << '\n'
       << "video.model_size_billions=" << fmt_double(vid.model_size) << '\n'
       << "video.tokens_billions=" << fmt_double(vid.tokens) << '\n'
       << "video.compute_for_13b_pflops=" << fmt_double(compute_for_model_size(video_scaling_constants(), 13.0)) << '\n';
  write_text_file(run.path("plan.txt"), plan.str());
  for (const auto& w : fit.warnings) *run.log << "warning: " << w << '\n';
  *run.log << "fit-scaling: N_opt = " << fit.a1 << " C^" << fit.b1 << ", D_opt = " << fit.a2 << " C^" << fit.b2 << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tinyvid: desk-scale video generation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir = "out";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "Config file of key = value lines");
  app.add_option("--set", overrides, "Override one key: --set module.key=value (repeatable)");
  app.add_option("--seed", seed, "Seed for every random stream (overrides run.seed)");
  app.add_option("--out", out_dir, "Output directory");

  using Command = std::function<void(const Run&)>;
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"train-vae", "Train the causal video autoencoder on synthetic clips", cmd_train_vae},
      {"train-dit", "Train the transformer on VAE latents of a manifest", cmd_train_dit},
      {"distill", "Distill two-pass guidance into a one-pass student", cmd_distill},
      {"sample", "Sample clips from a checkpoint", cmd_sample},
      {"fit-scaling", "Fit compute-optimal power laws to loss curves", cmd_fit_scaling},
      {"curate", "Dedup, balance and filter a manifest", cmd_curate},
      {"gen-data", "Write a synthetic manifest and loss curves", cmd_gen_data},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    Run run;
    run.config = Config::defaults();
    if (!config_path.empty()) run.config.load_file(config_path);
    for (const auto& o : overrides) run.config.apply_override(o);
    if (seed) run.config.set("run.seed", std::to_string(*seed));
    run.seed = static_cast<std::uint64_t>(run.config.get_int("run.seed"));
    run.out = out_dir;
    run.log = &out;
    std::error_code ec;
    fs::create_directories(run.out, ec);
    if (ec || !fs::is_directory(run.out)) throw ConfigError("cannot create output directory " + out_dir);
    std::ostringstream resolved;
    run.config.write(resolved);
    write_text_file(run.path("config.resolved"), resolved.str());

    for (const auto& [name, help, fn] : commands) {
      if (app.got_subcommand(name)) {
        fn(run);
        break;
      }
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace tinyvid::cli
