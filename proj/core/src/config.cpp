// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "tinyvid/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "tinyvid/data.hpp"
#include "tinyvid/dit.hpp"
#include "tinyvid/error.hpp"
#include "tinyvid/vae.hpp"

namespace tinyvid {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(trim(part));
  return out;
}

}  // namespace

Config Config::defaults() {
  Config c;
  auto& v = c.values_;
  v["run.seed"] = "0";

  VaeConfig vae;
  vae.latent = {4, 4, 8};
  vae.widths = {16, 32};
  vae.res_blocks = 1;
  for (const auto& [k, val] : vae.to_kv()) v[k] = val;

  ModelConfig dit;
  dit.in_channels = 8;
  dit.out_channels = 8;
  dit.text_vocab = caption_vocab_size();
  for (const auto& [k, val] : dit.to_kv()) v[k] = val;

  // Synthetic data and curation.
  v["data.count"] = "1000";
  v["data.embedding_dim"] = "16";
  v["data.concepts"] = "24";
  v["data.duplicate_rate"] = "0.1";
  v["data.frame_choices"] = "5,9,13,17";
  v["curate.manifest"] = "";
  v["curate.dedup_threshold"] = "0.02";
  v["curate.kmeans_k"] = "16";
  v["curate.resample_cap"] = "1000000";
  v["curate.stages"] = "base:aesthetic=0.2,clarity=0.2;strict:aesthetic=0.4,clarity=0.4,motion=0.2";

  // VAE training.
  v["vae_train.clips"] = "8";
  v["vae_train.resolution"] = "16";
  v["vae_train.frames"] = "9";
  v["vae_train.steps"] = "600";
  v["vae_train.lr"] = "0.003";
  v["vae_train.video_per_image"] = "4";
  v["vae_train.max_interval"] = "1";
  v["vae_train.deterministic_latent"] = "true";
  v["vae_train.tiling_steps"] = "0";
  v["vae_train.tiling_probability"] = "0.5";
  v["vae_train.checkpoint_every"] = "0";

  // Transformer training.
  v["train.manifest"] = "";
  v["train.vae_checkpoint"] = "";
  v["train.init_checkpoint"] = "";
  v["train.resume"] = "";
  v["train.stages"] = "base:16:9:0.2:200";
  v["train.lr"] = "0.001";
  v["train.warmup"] = "100";
  v["train.final_lr_ratio"] = "1";
  v["train.clip_norm"] = "1.0";
  v["train.weight_decay"] = "0";
  v["train.grad_accum"] = "1";
  v["train.batch_size"] = "8";
  v["train.latent_scale"] = "0";
  v["train.caption_dropout"] = "0.1";
  v["train.checkpoint_every"] = "0";
  v["train.mix_scale_anchors"] = "";
  v["train.mix_scale_steps"] = "0";
  v["train.mix_scale_token_budget"] = "64";

  // Flow matching and sampling.
  v["flow.logit_mean"] = "0";
  v["flow.logit_std"] = "1";
  v["flow.schedule"] = "shifted";
  v["flow.steps"] = "50";
  v["flow.shift"] = "7";
  v["flow.lq_linear_fraction"] = "0.5";
  v["flow.lq_threshold"] = "0.025";
  v["flow.guidance"] = "1";

  v["sample.checkpoint"] = "";
  v["sample.vae_checkpoint"] = "";
  v["sample.count"] = "4";
  v["sample.captions"] = "";
  v["sample.frames"] = "9";
  v["sample.height"] = "16";
  v["sample.width"] = "16";

  v["distill.teacher"] = "";
  v["distill.manifest"] = "";
  v["distill.vae_checkpoint"] = "";
  v["distill.steps"] = "200";
  v["distill.lr"] = "0.001";
  v["distill.batch_size"] = "4";
  v["distill.scale_min"] = "1";
  v["distill.scale_max"] = "8";

  v["scaling.curves"] = "";
  v["scaling.grid_points"] = "400";
  v["scaling.plan_compute"] = "100000";
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_text(std::istream& in, const std::string& source) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (!has(key)) throw ConfigError(where + ": unknown config key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  load_text(in, path);
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  const auto& s = get(key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ConfigError(key + ": '" + s + "' is not a number");
  return v;
}

std::int64_t Config::get_int(const std::string& key) const {
  const auto& s = get(key);
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw ConfigError(key + ": '" + s + "' is not an integer");
  return v;
}

bool Config::get_bool(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": '" + s + "' is not true or false");
}

std::vector<std::int64_t> Config::get_ints(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& part : split_commas(get(key))) {
    char* end = nullptr;
    const long long v = std::strtoll(part.c_str(), &end, 10);
    if (part.empty() || *end != '\0') throw ConfigError(key + ": '" + part + "' is not an integer");
    out.push_back(v);
  }
  return out;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_commas(get(key))) {
    char* end = nullptr;
    const double v = std::strtod(part.c_str(), &end);
    if (part.empty() || *end != '\0') throw ConfigError(key + ": '" + part + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::map<std::string, std::string> Config::section(const std::string& prefix) const {
  std::map<std::string, std::string> out;
  const auto p = prefix + ".";
  for (auto it = values_.lower_bound(p); it != values_.end() && it->first.compare(0, p.size(), p) == 0; ++it) {
    out.insert(*it);
  }
  return out;
}

void Config::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

}  // namespace tinyvid
