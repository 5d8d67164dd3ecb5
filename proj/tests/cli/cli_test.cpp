// Copyright 2026 The tinyvid Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "tinyvid/checkpoint.hpp"
#include "tinyvid/config.hpp"
#include "tinyvid/dit.hpp"
#include "tinyvid/scaling.hpp"
#include "tinyvid/vae.hpp"

namespace tinyvid {
namespace {
namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tinyvid_cli_" + name);
  fs::remove_all(p);
  return p;
}

/// Writes VAE and transformer checkpoints matching the default config.
void write_toy_checkpoints(const fs::path& dir, bool nan_weight = false) {
  fs::create_directories(dir);
  const auto c = Config::defaults();
  Rng rng(1);
  Vae vae(VaeConfig::from_kv(c.section("vae")), rng);
  save_checkpoint((dir / "vae.ckpt").string(), make_checkpoint(vae.config().to_kv(), vae.parameters()));
  ModelConfig mc = ModelConfig::from_kv(c.section("dit"));
  mc.dim = 32;
  mc.heads = 1;
  mc.ffn_dim = 64;
  Dit model(mc, rng);
  if (nan_weight) model.parameters().front().tensor.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  save_checkpoint((dir / "dit.ckpt").string(), make_checkpoint(mc.to_kv(), model.parameters()));
}

TEST(Cli, OverrideReflectedInResolvedConfig) {
  const auto out = fresh_dir("override");
  const auto r = run_cli({"fit-scaling", "--out", out.string(), "--set", "flow.shift=1", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto resolved = slurp(out / "config.resolved");
  EXPECT_NE(resolved.find("flow.shift = 1\n"), std::string::npos);
  EXPECT_NE(resolved.find("run.seed = 9\n"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto out = fresh_dir("errors");
  EXPECT_EQ(run_cli({"sample", "--out", out.string(), "--set", "flow.shfit=1"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"curate", "--out", out.string()}).code, cli::kExitConfig);  // no manifest
  EXPECT_EQ(run_cli({}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"no-such-command"}).code, cli::kExitConfig);
  fs::create_directories(out);
  std::ofstream(out / "bad.cfg") << "flow.steps = 10\nmystery = 1\n";
  const auto r = run_cli({"sample", "--out", out.string(), "--config", (out / "bad.cfg").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("bad.cfg:2"), std::string::npos) << r.err;
}

TEST(Cli, FitScalingRecoversBundledCurves) {
  const auto out = fresh_dir("fit");
  const auto r = run_cli({"fit-scaling", "--out", out.string(), "--set",
                          std::string("scaling.curves=") + TINYVID_DATA_DIR + "/synthetic_curves.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(out / "fit.txt");
  const auto fit = read_fit(in);
  const SyntheticCurveSpec truth;
  EXPECT_NEAR(fit.b1, truth.b, 1e-10);
  EXPECT_NEAR(fit.a1 / truth.a, 1.0, 1e-9);
  EXPECT_NEAR(fit.b2, 1.0 - truth.b, 1e-10);
  EXPECT_TRUE(fs::exists(out / "envelope.csv"));
  EXPECT_TRUE(fs::exists(out / "plan.txt"));
}

TEST(Cli, SampleWritesP6FramesAndLatentManifest) {
  const auto ck = fresh_dir("sample_ckpt");
  write_toy_checkpoints(ck);
  std::vector<std::string> args{"sample",
                                "--set", "sample.checkpoint=" + (ck / "dit.ckpt").string(),
                                "--set", "sample.vae_checkpoint=" + (ck / "vae.ckpt").string(),
                                "--set", "sample.count=2",
                                "--set", "flow.schedule=shifted",
                                "--set", "flow.shift=7",
                                "--set", "flow.steps=50",
                                "--seed", "4"};
  const auto a = fresh_dir("sample_a"), b = fresh_dir("sample_b");
  auto args_a = args, args_b = args;
  args_a.insert(args_a.end(), {"--out", a.string()});
  args_b.insert(args_b.end(), {"--out", b.string()});
  const auto ra = run_cli(args_a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(run_cli(args_b).code, 0);

  for (int i = 0; i < 2; ++i) {
    for (int f = 0; f < 9; ++f) {
      char name[64];
      std::snprintf(name, sizeof name, "sample_%03d_frame_%03d.ppm", i, f);
      const auto bytes = slurp(a / name);
      const std::string header = "P6\n16 16\n255\n";
      ASSERT_EQ(bytes.size(), header.size() + 16 * 16 * 3) << name;
      EXPECT_EQ(bytes.substr(0, header.size()), header);
      EXPECT_EQ(bytes, slurp(b / name));
    }
  }
  const auto manifest = slurp(a / "latents.tsv");
  EXPECT_EQ(manifest.rfind("index\tcaption\tshape\tframes\tvalues\n", 0), 0u);
  EXPECT_NE(manifest.find("\t3x8x4x4\t9\t"), std::string::npos);
  EXPECT_EQ(manifest, slurp(b / "latents.tsv"));
  EXPECT_NE(ra.out.find("50 steps"), std::string::npos);
}

TEST(Cli, NumericAbortExitsThree) {
  const auto dir = fresh_dir("nan");
  write_toy_checkpoints(dir / "ck", true);
  ASSERT_EQ(run_cli({"gen-data", "--out", (dir / "data").string(), "--set", "data.count=20"}).code, 0);
  const auto r = run_cli({"train-dit", "--out", (dir / "run").string(),
                          "--set", "train.manifest=" + (dir / "data" / "manifest.tsv").string(),
                          "--set", "train.vae_checkpoint=" + (dir / "ck" / "vae.ckpt").string(),
                          "--set", "train.init_checkpoint=" + (dir / "ck" / "dit.ckpt").string(),
                          "--set", "train.latent_scale=1",
                          "--set", "train.stages=a:16:9:0:3",
                          "--set", "dit.dim=32", "--set", "dit.heads=1", "--set", "dit.ffn_dim=64"});
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.err;
}

TEST(Cli, GenDataAndCurateAreDeterministic) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  for (const auto& d : {a, b}) {
    ASSERT_EQ(run_cli({"gen-data", "--out", (d / "data").string(), "--set", "data.count=200", "--seed", "5"}).code, 0);
    ASSERT_EQ(run_cli({"curate", "--out", (d / "cur").string(), "--seed", "5", "--set",
                       "curate.manifest=" + (d / "data" / "manifest.tsv").string()})
                  .code,
              0);
  }
  EXPECT_EQ(slurp(a / "data" / "manifest.tsv"), slurp(b / "data" / "manifest.tsv"));
  EXPECT_EQ(slurp(a / "cur" / "curated.tsv"), slurp(b / "cur" / "curated.tsv"));
  EXPECT_EQ(slurp(a / "cur" / "retention.csv"), slurp(b / "cur" / "retention.csv"));
  EXPECT_FALSE(slurp(a / "cur" / "curated.tsv").empty());
}

}  // namespace
}  // namespace tinyvid
