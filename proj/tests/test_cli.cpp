// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs of the `lord` binary on a tiny dataset.

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "lord_cli_test";

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const fs::path log = kRoot / "last_output.txt";
  const std::string cmd = std::string(LORD_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::ostringstream os;
  os << in.rdbuf();
  r.output = os.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* kTinyData =
    "--set k_classes=4 --set grid_x=3 --set grid_y=3 --set grid_rot=2 --set image_size=16 "
    "--set holdout_fraction=0.2";

std::string tiny_config_path() {
  const fs::path p = kRoot / "tiny.cfg";
  std::ofstream(p) << "d_class = 6\nd_content = 4\ngen_fc_hidden = 16\ngen_seed_channels = 4\n"
                      "gen_widths = [4, 4, 4, 3, 3]\nenc_widths = [2, 3, 3, 3, 3]\nenc_fc_hidden = 8\n"
                      "batch_size = 16\nepochs = 2\nstage2_epochs = 1\nlr_gen = 0.001\nlr_latent = 0.01\n"
                      "probe_every = 1\n";
  return p.string();
}

struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "bad input exits with code 2 and a one-line reason") {
  auto r = run("train1 --data " + (kRoot / "missing.lords").string() + " --out " + (kRoot / "r").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("dataset not found") != std::string::npos);
  CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);

  CHECK(run("gen-data --out " + (kRoot / "d.lords").string() + " --set nonsense").code == 2);
  CHECK(run("gen-data --out " + (kRoot / "d.lords").string() + " --set no_such_key=1").code == 2);
  CHECK(run("no-such-command").code == 2);
  CHECK(run("eval --run " + (kRoot / "nothing").string()).code == 2);
}

TEST_CASE_FIXTURE(Fixture, "full pipeline on a tiny dataset") {
  const std::string data = (kRoot / "tiny.lords").string();
  const std::string cfg = tiny_config_path();
  REQUIRE(run("gen-data --out " + data + " " + kTinyData).code == 0);

  const fs::path a = kRoot / "a", b = kRoot / "b";
  REQUIRE(run("train1 --data " + data + " --config " + cfg + " --out " + a.string()).code == 0);
  REQUIRE(run("train1 --data " + data + " --config " + cfg + " --out " + b.string()).code == 0);
  const std::string log_a = slurp(a / "log.jsonl");
  CHECK(log_a == slurp(b / "log.jsonl"));
  CHECK(std::count(log_a.begin(), log_a.end(), '\n') == 3);  // epochs 0..2
  CHECK(log_a.find("wall_time") == std::string::npos);
  CHECK(fs::exists(a / "timing.jsonl"));
  CHECK(fs::exists(a / "config.txt"));
  CHECK(slurp(a / "stage1.ckpt") == slurp(b / "stage1.ckpt"));

  // Resuming a finished run is a no-op; a changed config is refused.
  REQUIRE(run("train1 --data " + data + " --config " + cfg + " --out " + a.string() + " --resume").code == 0);
  CHECK(slurp(a / "log.jsonl") == log_a);
  CHECK(run("train1 --data " + data + " --config " + cfg + " --set seed=3 --out " + a.string() + " --resume").code ==
        2);

  CHECK(run("diagnose-kl --run " + a.string()).code == 2);
  CHECK(run("eval --run " + a.string()).code == 2);  // no stage 2 yet

  REQUIRE(run("train2 --run " + a.string()).code == 0);
  CHECK(fs::exists(a / "stage2.ckpt"));
  REQUIRE(run("eval --run " + a.string()).code == 0);
  const auto metrics = nlohmann::json::parse(slurp(a / "metrics.json"));
  CHECK(metrics["transfer"]["model"]["pairs"].get<int>() > 0);
  CHECK(metrics["transfer"]["no_skill"]["perceptual"].get<double>() > 0.0);
  CHECK(metrics["probes"]["class_from_content"]["chance"].get<double>() == doctest::Approx(0.25));
  CHECK(metrics["probes"]["class_from_content"]["protocol"].get<std::string>().find("adam") != std::string::npos);
  CHECK(metrics.contains("regression_content_from_class"));

  const fs::path grid = kRoot / "grid.png";
  REQUIRE(run("grid --run " + a.string() + " --rows 2 --cols 3 --out " + grid.string()).code == 0);
  CHECK(slurp(grid).substr(1, 3) == "PNG");

  REQUIRE(run("curve --run " + a.string()).code == 0);
  CHECK(slurp(a / "curve.csv").rfind("epoch,latent", 0) == 0);
}

TEST_CASE_FIXTURE(Fixture, "amortized runs: stage 2 refused, KL diagnosis available") {
  const std::string data = (kRoot / "tiny.lords").string();
  REQUIRE(run("gen-data --out " + data + " " + kTinyData).code == 0);
  const fs::path r = kRoot / "kl";
  REQUIRE(run("train1 --data " + data + " --config " + tiny_config_path() +
              " --mode amortized --regularizer kl --out " + r.string())
              .code == 0);
  CHECK(run("train2 --run " + r.string()).code == 2);
  const auto kl = run("diagnose-kl --run " + r.string());
  REQUIRE(kl.code == 0);
  CHECK(slurp(r / "kl_stats.csv").rfind("dim,mean_mu,mean_sigma", 0) == 0);
  CHECK(run("eval --run " + r.string()).code == 0);

  // An untrained model has no skill: its transfer error is no better than
  // answering with a random dataset image.
  const fs::path u = kRoot / "untrained";
  REQUIRE(run("train1 --data " + data + " --config " + tiny_config_path() +
              " --mode amortized --set epochs=0 --out " + u.string())
              .code == 0);
  REQUIRE(run("eval --run " + u.string()).code == 0);
  const auto m = nlohmann::json::parse(slurp(u / "metrics.json"));
  CHECK(m["transfer"]["model"]["perceptual"].get<double>() >= m["transfer"]["no_skill"]["perceptual"].get<double>());
}

TEST_CASE_FIXTURE(Fixture, "cluster writes assignments, sheets and a relabeled dataset") {
  const std::string data = (kRoot / "styles.lords").string();
  REQUIRE(run("gen-data --out " + data + " " + kTinyData + " --set style_variants=2").code == 0);
  const fs::path csv = kRoot / "assign.csv", sheets = kRoot / "sheets", relabeled = kRoot / "joint.lords";
  REQUIRE(run("cluster --data " + data + " --l 2 --out " + csv.string() + " --sheets " + sheets.string() +
              " --relabeled " + relabeled.string())
              .code == 0);
  CHECK(slurp(csv).rfind("index,class,style,joint_label\n", 0) == 0);
  CHECK(fs::exists(sheets / "class_000.png"));
  CHECK(fs::exists(relabeled));
}
