// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aftk/cli.hpp"

using namespace aftk;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run aftk_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aftk_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Tiny corpus so every command runs in seconds.
fs::path tiny_config(const fs::path& dir, json extra = json::object()) {
  json j = {{"corpus", {{"train_videos", 2}, {"eval_videos", 1}, {"same_color_videos", 1}, {"scene", {{"frames", 6}}}}},
            {"color", {{"epochs", 1}}},
            {"train", {{"warmup_epochs", 1}, {"joint_epochs", 1}, {"pairs_per_video", 2}}}};
  j.merge_patch(extra);
  fs::create_directories(dir);
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST_CASE("run config round trip") {
  RunConfig c = profile_config("smoke");
  c.seed = 42;
  c.train.weights.orthogonal_feature = 0.25;
  c.propagate.propagation.mode = PropagationMode::track;
  c.corpus.scene.same_color = true;
  const json j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(to_json(run_config_from_json(json::object(), c)) == j);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(run_config_from_json(json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"warmup_epoch", 1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"warmup_epochs", -1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"lr_joint", "fast"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"propagate", {{"mode", "local"}}}}), ConfigError);
  CHECK_THROWS_AS(profile_config("huge"), ConfigError);
  RunConfig c;
  c.propagate.kind = "depth";
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("argument and config failures exit with 2") {
  const fs::path dir = fresh_dir("cfg");
  CHECK(aftk_run({}).code == kExitConfig);
  CHECK(aftk_run({"fly"}).code == kExitConfig);
  CHECK(aftk_run({"gen", "--profile", "huge"}).code == kExitConfig);
  const fs::path bad = tiny_config(dir, {{"corpus", {{"scene", {{"height", 100}}}}}});
  const Run r = aftk_run({"gen", "--config", bad.string(), "--out", dir.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("multiple of 8") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "corpus"));
  CHECK(aftk_run({"--help"}).code == kExitOk);
}

TEST_CASE("gen is idempotent and echoes its config") {
  const fs::path dir = fresh_dir("gen");
  const fs::path cfg = tiny_config(dir);
  REQUIRE(aftk_run({"gen", "--config", cfg.string(), "--out", dir.string(), "--seed", "3"}).code == kExitOk);
  const fs::path video = video_dir(dir, "train", 1);
  const std::string frame = slurp(video / "frame_005.png"), manifest = slurp(video / "manifest.json");
  CHECK(fs::exists(video_dir(dir, "same_color", 0) / "mask_000.png"));
  REQUIRE(aftk_run({"gen", "--config", cfg.string(), "--out", dir.string(), "--seed", "3"}).code == kExitOk);
  CHECK(slurp(video / "frame_005.png") == frame);
  CHECK(slurp(video / "manifest.json") == manifest);

  // The echoed config reproduces the run on its own.
  const json echoed = json::parse(slurp(dir / "gen.config.json"));
  CHECK(echoed["seed"] == 3);
  const fs::path other = fresh_dir("gen_echo");
  REQUIRE(aftk_run({"gen", "--config", (dir / "gen.config.json").string(), "--out", other.string()}).code == kExitOk);
  CHECK(slurp(video_dir(other, "train", 1) / "frame_005.png") == frame);

  const json same = json::parse(slurp(video_dir(dir, "same_color", 0) / "manifest.json"));
  CHECK(same["num_objects"] == 2);
  CHECK(same["spec"]["same_color"] == true);
}

TEST_CASE("missing dependencies exit with 3") {
  const fs::path dir = fresh_dir("missing");
  const fs::path cfg = tiny_config(dir);
  Run r = aftk_run({"pretrain-color", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitMissing);
  CHECK(r.err.find("aftk gen") != std::string::npos);
  REQUIRE(aftk_run({"gen", "--config", cfg.string(), "--out", dir.string()}).code == kExitOk);
  r = aftk_run({"train", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitMissing);
  CHECK(r.err.find("aftk pretrain-color") != std::string::npos);
  r = aftk_run({"propagate", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitMissing);
  CHECK(r.err.find("aftk train") != std::string::npos);
  CHECK(aftk_run({"evaluate", "--out", dir.string()}).code == kExitMissing);
}

TEST_CASE("full pipeline on a tiny corpus") {
  const fs::path dir = fresh_dir("pipeline");
  const fs::path cfg = tiny_config(dir);
  const std::vector<std::string> common{"--config", cfg.string(), "--out", dir.string()};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return aftk_run(a);
  };
  REQUIRE(with({"gen"}).code == kExitOk);
  REQUIRE(with({"pretrain-color"}).code == kExitOk);
  CHECK(fs::exists(dir / "color" / "color_ae.ckpt"));
  const Run t = with({"train"});
  REQUIRE(t.code == kExitOk);
  CHECK(t.out.find("effective config (train)") != std::string::npos);
  CHECK(fs::exists(dir / "train" / "encoder.ckpt"));
  CHECK(read_training_log(dir / "train" / "train_log.jsonl").size() == 2);

  REQUIRE(with({"propagate"}).code == kExitOk);
  const json m = json::parse(slurp(dir / "propagate" / "eval_encoder_global_mask" / "metrics.json"));
  CHECK(m["videos"].size() == 1);
  CHECK(m["mean"]["j_mean"].get<double>() >= 0.0);
  CHECK(fs::exists(dir / "propagate" / "eval_encoder_global_mask" / "video_000" / "pred_005.png"));

  REQUIRE(with({"propagate", "--features", "oracle", "--split", "same_color", "--mode", "track"}).code == kExitOk);
  const json o = json::parse(slurp(dir / "propagate" / "same_color_oracle_track_mask" / "metrics.json"));
  CHECK(o["mean"]["j_mean"].get<double>() > 0.95);

  REQUIRE(with({"propagate", "--features", "oracle", "--kind", "texture"}).code == kExitOk);
  const fs::path tex = dir / "propagate" / "eval_oracle_global_texture";
  CHECK(fs::exists(tex / "video_000" / "pred_005.png"));
  CHECK(json::parse(slurp(tex / "metrics.json"))["mean"]["rgb_mae"].get<double>() < 0.05);

  REQUIRE(with({"propagate", "--features", "oracle", "--kind", "keypoint"}).code == kExitOk);
  CHECK(fs::exists(dir / "propagate" / "eval_oracle_global_keypoint" / "video_000" / "keypoints.txt"));

  const Run e = with({"evaluate"});
  REQUIRE(e.code == kExitOk);
  const json ev = json::parse(slurp(dir / "evaluation.json"));
  CHECK(ev["eval_encoder_global_mask"]["j_mean"].get<double>() ==
        Catch::Approx(m["mean"]["j_mean"].get<double>()).margin(1e-12));
  CHECK(ev["same_color_oracle_track_mask"]["j_mean"].get<double>() ==
        Catch::Approx(o["mean"]["j_mean"].get<double>()).margin(1e-12));
  CHECK_FALSE(ev.contains("eval_oracle_global_texture"));
}

TEST_CASE("gradcheck command") {
  const fs::path dir = fresh_dir("grad");
  const Run ok = aftk_run({"gradcheck", "--points", "2", "--out", dir.string()});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("roi_crop") != std::string::npos);
  CHECK(ok.out.find("max_rel_error") != std::string::npos);
  const json report = json::parse(slurp(dir / "gradcheck.json"));
  CHECK(report.size() > 40);

  const Run bad = aftk_run({"gradcheck", "--points", "2", "--inject-faulty", "--out", dir.string()});
  CHECK(bad.code == kExitNumeric);
  CHECK(bad.err.find("faulty_square") != std::string::npos);
}
