// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lord/eval.hpp"
#include "lord/perceptual.hpp"
#include "lord/train.hpp"

using namespace lord;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.image_size = 16;
  cfg.d_class = 6;
  cfg.d_content = 4;
  cfg.gen_fc_hidden = 16;
  cfg.gen_seed_channels = 4;
  cfg.gen_widths = {4, 4, 4, 3, 3};
  cfg.enc_widths = {2, 3, 3, 3, 3};
  cfg.enc_fc_hidden = 8;
  return cfg;
}

FactorSpec tiny_spec() {
  FactorSpec s;
  s.k_classes = 4;
  s.grid_x = 3;
  s.grid_y = 3;
  s.grid_rot = 2;
  s.image_size = 16;
  return s;
}

}  // namespace

TEST_CASE("probe calibration: shuffled labels sit at chance") {
  std::mt19937_64 rng(1);
  const std::size_t n = 2000;
  Tensor codes = Tensor::randn({n, 16}, 1.0, rng);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % 16;
  std::shuffle(labels.begin(), labels.end(), rng);
  ProbeOptions opt;
  opt.folds = 5;
  auto r = probe_classifier(codes, labels, opt);
  CHECK(r.chance == doctest::Approx(1.0 / 16));
  CHECK(r.num_tested == n);
  CHECK(std::abs(r.accuracy - r.chance) <= 0.03);
  CHECK(r.protocol.find("hidden=128") != std::string::npos);
}

TEST_CASE("probe on one-hot codes is perfect") {
  const std::size_t n = 400, k = 8;
  std::vector<double> v(n * k, 0.0);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = (i * 7) % k;
    v[i * k + labels[i]] = 1.0;
  }
  auto r = probe_classifier(Tensor({n, k}, v), labels, ProbeOptions{});
  CHECK(r.accuracy >= 0.99);
  CHECK(r.num_labels == k);
}

TEST_CASE("probe rejects a single label") {
  std::vector<std::size_t> labels(50, 3);
  CHECK_THROWS(probe_classifier(Tensor({50, 4}, 1.0), labels, ProbeOptions{}));
}

TEST_CASE("ridge regression") {
  std::mt19937_64 rng(2);
  const std::size_t n = 600;
  Tensor factors = Tensor::uniform({n, 3}, 0.0, 1.0, rng);
  auto same = ridge_regression(factors, factors, 1e-3, 0.8, 0);
  CHECK(same.rmse < 1e-2);

  // Codes that are one shared row per class carry nothing about the factors.
  Tensor table = Tensor::randn({8, 5}, 1.0, rng);
  std::vector<double> codes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 8;
    codes.insert(codes.end(), table.data().begin() + y * 5, table.data().begin() + (y + 1) * 5);
  }
  auto shared = ridge_regression(Tensor({n, 5}, codes), factors, 1e-3, 0.8, 0);
  CHECK(shared.rmse == doctest::Approx(shared.target_std).epsilon(0.05));
}

TEST_CASE("identity pairs score the reconstruction") {
  auto ds = build_dataset(tiny_spec());
  RunConfig cfg = tiny_config();
  std::mt19937_64 rng(3);
  Generator gen(cfg, rng);
  Encoder ey(cfg, cfg.d_class, false, rng), ec(cfg, cfg.d_content, false, rng);
  const auto pool = ds.indices(Split::kTrain);
  const std::vector<std::size_t> few(pool.begin(), pool.begin() + 10);
  auto t = transfer_error(gen, ey, ec, ds, identity_pairs(few));
  Tensor x = ds.batch(few);
  Tensor recon = gen.forward(encode_codes(ey, x), encode_codes(ec, x));
  auto r = score_images(recon, x);
  CHECK(t.perceptual == doctest::Approx(r.perceptual).epsilon(1e-12));
  CHECK(t.pixel_l1 == doctest::Approx(r.pixel_l1).epsilon(1e-12));
  CHECK(t.pairs == 10);
}

TEST_CASE("transfer error is order-invariant and seed-deterministic") {
  auto ds = build_dataset(tiny_spec());
  RunConfig cfg = tiny_config();
  std::mt19937_64 rng(4);
  Generator gen(cfg, rng);
  Encoder ey(cfg, cfg.d_class, false, rng), ec(cfg, cfg.d_content, false, rng);
  const auto pool = ds.indices(Split::kTrain);
  auto pairs = sample_pairs(pool, 40, 9);
  CHECK(pairs == sample_pairs(pool, 40, 9));
  for (auto [i, j] : pairs) CHECK(i != j);
  auto a = transfer_error(gen, ey, ec, ds, pairs);
  std::reverse(pairs.begin(), pairs.end());
  auto b = transfer_error(gen, ey, ec, ds, pairs);
  CHECK(a.perceptual == doctest::Approx(b.perceptual).epsilon(1e-12));
  CHECK_THROWS(transfer_error(gen, ey, ec, ds, std::vector<IndexPair>{}));
}

TEST_CASE("a no-skill predictor scores at the baseline") {
  FactorSpec spec;
  auto ds = build_dataset(spec);
  const auto pool = ds.indices(Split::kTrain);
  auto pairs = sample_pairs(pool, 400, 1);
  auto base = no_skill_baseline(ds, pairs);
  // Predict an unrelated dataset image for every pair.
  auto other = sample_pairs(pool, 400, 2);
  std::vector<std::size_t> guesses;
  for (auto [i, j] : other) guesses.push_back(j);
  auto guess = score_images(ds.batch(guesses), transfer_targets(ds, pairs));
  CHECK(guess.perceptual == doctest::Approx(base.perceptual).epsilon(0.05));
  CHECK(guess.pixel_l1 == doctest::Approx(base.pixel_l1).epsilon(0.05));
}

TEST_CASE("KL collapse statistics") {
  auto ds = build_dataset(tiny_spec());
  RunConfig cfg = tiny_config();
  std::mt19937_64 rng(5);
  Encoder var(cfg, cfg.d_content, true, rng);
  auto s = kl_collapse_stats(var, ds, ds.indices(Split::kTrain));
  CHECK(s.mean_mu.size() == cfg.d_content);
  CHECK(s.collapsed == cfg.d_content);
  CHECK(s.collapse_fraction == 1.0);
  for (double sg : s.mean_sigma) CHECK(sg == doctest::Approx(1.0));
  CHECK(kl_stats_csv(s).rfind("dim,mean_mu,mean_sigma", 0) == 0);

  Encoder plain(cfg, cfg.d_content, false, rng);
  CHECK_THROWS(kl_collapse_stats(plain, ds, ds.indices(Split::kTrain)));
}

TEST_CASE("probe curves from a run log") {
  const auto dir = std::filesystem::temp_directory_path() / "lord_test_curve";
  std::filesystem::create_directories(dir);
  {
    std::ofstream log(dir / "log.jsonl");
    TrainRecord r;
    r.epoch = 0;
    r.probe_acc_class_from_content = 0.06;
    log << r.to_json() << "\n";
    r.epoch = 1;
    r.probe_acc_class_from_content.reset();
    log << r.to_json() << "\n";
    r.epoch = 2;
    r.probe_acc_class_from_content = 0.08;
    log << r.to_json() << "\n";
  }
  auto curve = read_probe_curve(dir.string());
  REQUIRE(curve.size() == 2);
  CHECK(curve[1].first == 2);
  CHECK(curve[1].second == 0.08);
  auto csv = curves_csv({{"latent", curve}});
  CHECK(csv.find("latent") != std::string::npos);

  {
    std::ofstream log(dir / "log.jsonl");
    TrainRecord r;
    log << r.to_json() << "\n";
  }
  CHECK_THROWS(read_probe_curve(dir.string()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("transfer grid layout") {
  auto ds = build_dataset(tiny_spec());
  RunConfig cfg = tiny_config();
  std::mt19937_64 rng(6);
  Generator gen(cfg, rng);
  Encoder ey(cfg, cfg.d_class, false, rng), ec(cfg, cfg.d_content, false, rng);
  Tensor rows = ds.batch(std::vector<std::size_t>{0, 1, 2});
  Tensor cols = ds.batch(std::vector<std::size_t>{3, 4, 5, 6, 7});
  RasterImage g = transfer_grid(gen, ey, ec, rows, cols);
  CHECK(g.height == 4 * 16);
  CHECK(g.width == 6 * 16);
  // Top row holds the content sources, left column the class sources.
  RasterImage src = to_raster(ds.image(3));
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(g.pixels[(y * g.width + 16 + x) * 3 + c] == src.pixels[(y * 16 + x) * 3 + c]);
}
