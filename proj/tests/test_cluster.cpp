// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "lord/cluster.hpp"
#include "support/partition.hpp"

using namespace lord;
using lord::testing::same_partition;

namespace {

FactorSpec two_style_spec() {
  FactorSpec s;
  s.k_classes = 6;
  s.grid_x = 3;
  s.grid_y = 3;
  s.grid_rot = 2;
  s.style_variants = 2;
  return s;
}

}  // namespace

TEST_CASE("feature dimension and determinism") {
  std::mt19937_64 rng(1);
  Tensor imgs = Tensor::uniform({2, 3, 16, 16}, 0.0, 1.0, rng);
  Tensor f = extract_style_features(imgs);
  CHECK(f.shape() == Shape{2, 8 * 8 + 24});
  CHECK(style_feature_dim(3) == 88);
  Tensor again = extract_style_features(imgs);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(f.at(i) == again.at(i));
  CHECK_THROWS_AS(extract_style_features(Tensor({3, 16, 16})), ShapeError);
}

TEST_CASE("hue shift moves the histogram block and keeps the Gram ordering") {
  // Three geometries (disc, bar, ring) painted with one foreground color on a
  // gray background; the same masks are then repainted with a hue-shifted
  // foreground.
  const std::size_t s = 32, hw = s * s;
  std::vector<std::vector<double>> masks(3, std::vector<double>(hw, 0.0));
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double r = std::hypot(x - 15.5, y - 15.5);
      masks[0][y * s + x] = r < 9.0;
      masks[1][y * s + x] = x >= 6 && x < 26 && y >= 13 && y < 19;
      masks[2][y * s + x] = r >= 6.0 && r < 10.0;
    }
  auto paint = [&](const double (&fg)[3]) {
    std::vector<double> px;
    for (const auto& m : masks)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < hw; ++p) px.push_back(0.2 + m[p] * (fg[c] - 0.2));
    return extract_style_features(Tensor({3, 3, s, s}, px));
  };
  const double warm[3] = {0.9, 0.3, 0.1}, cool[3] = {0.1, 0.9, 0.3};
  Tensor fw = paint(warm), fc = paint(cool);
  const std::size_t d = fw.dim(1), gram = 64;
  auto dist = [&](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j, std::size_t lo, std::size_t hi) {
    double acc = 0.0;
    for (std::size_t k = lo; k < hi; ++k) acc += (a.at(i * d + k) - b.at(j * d + k)) * (a.at(i * d + k) - b.at(j * d + k));
    return acc;
  };
  for (std::size_t i = 0; i < 3; ++i) CHECK(dist(fw, i, fc, i, gram, d) > 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t j = (i + 1) % 3, k = (i + 2) % 3;
    CHECK((dist(fw, i, fw, j, 0, gram) < dist(fw, i, fw, k, 0, gram)) ==
          (dist(fc, i, fc, j, 0, gram) < dist(fc, i, fc, k, 0, gram)));
  }
}

TEST_CASE("kmeans trivial cases") {
  const std::vector<double> pts = {0, 0, 2, 0, 4, 3, 6, 1};
  auto one = kmeans(pts, 4, 2, 1, 0);
  CHECK(one.centroids[0] == doctest::Approx(3.0));
  CHECK(one.centroids[1] == doctest::Approx(1.0));
  auto all = kmeans(pts, 4, 2, 4, 0);
  CHECK(all.inertia == 0.0);
  CHECK_THROWS_AS(kmeans(pts, 4, 2, 5, 0), std::invalid_argument);
}

TEST_CASE("kmeans matches the exhaustive 3-partition oracle") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0.0, 0.4);
  for (int trial = 0; trial < 5; ++trial) {
    const double centers[3][2] = {{0, 0}, {5, 1}, {2, 6}};
    std::vector<double> pts;
    for (int i = 0; i < 12; ++i) {
      pts.push_back(centers[i % 3][0] + noise(rng));
      pts.push_back(centers[i % 3][1] + noise(rng));
    }
    const auto oracle = lord::testing::exhaustive_partition(pts, 12, 2, 3);
    auto km = kmeans(pts, 12, 2, 3, trial);
    CHECK(same_partition(km.assignments, oracle.assign));
    CHECK(km.inertia == doctest::Approx(oracle.sse).epsilon(1e-12));
  }
}

TEST_CASE("kmeans inertia is non-increasing and reseeds empty clusters") {
  std::mt19937_64 rng(8);
  std::vector<double> pts(200 * 3);
  for (double& v : pts) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  auto km = kmeans(pts, 200, 3, 7, 2);
  for (std::size_t i = 1; i < km.inertia_history.size(); ++i)
    CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] + 1e-12);

  // Duplicated points: k-means++ must still produce l non-empty clusters.
  std::vector<double> dup = {0, 0, 0, 0, 0, 0, 1, 1};
  auto d = kmeans(dup, 4, 2, 2, 0);
  CHECK(d.inertia == 0.0);
}

TEST_CASE("style_cluster recovers ground-truth styles") {
  auto ds = build_dataset(two_style_spec());
  auto a = style_cluster(ds, 2, 0);
  CHECK(cluster_purity(a, ds.styles) >= 0.95);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(a.classes[i] == ds.labels[i]);
    CHECK(a.styles[i] < 2);
    CHECK(a.joint[i] == a.classes[i] * 2 + a.styles[i]);
  }
  for (const auto& trace : a.inertia_history)
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-9);
  auto again = style_cluster(ds, 2, 0);
  CHECK(again.joint == a.joint);
}

TEST_CASE("style_cluster with l = 1 keeps the labels") {
  auto ds = build_dataset(two_style_spec());
  auto a = style_cluster(ds, 1, 0);
  CHECK(a.joint == ds.labels);
  CHECK(a.warnings.empty());
}

TEST_CASE("small classes reduce l with a warning") {
  FactorSpec spec = two_style_spec();
  spec.grid_x = 1;
  spec.grid_y = 1;
  spec.grid_rot = 1;
  spec.style_variants = 1;
  spec.k_classes = 2;
  auto ds = build_dataset(spec);  // one sample per class
  auto a = style_cluster(ds, 3, 0);
  CHECK(a.warnings.size() == 2);
  for (auto t : a.styles) CHECK(t == 0);
}

TEST_CASE("assignments csv") {
  auto ds = build_dataset(two_style_spec());
  auto a = style_cluster(ds, 2, 1);
  std::istringstream in(assignments_csv(a));
  std::string line;
  std::getline(in, line);
  CHECK(line == "index,class,style,joint_label");
  std::getline(in, line);
  CHECK(line == "0," + std::to_string(a.classes[0]) + "," + std::to_string(a.styles[0]) + "," +
                     std::to_string(a.joint[0]));
  auto sheet = cluster_sheet(ds, a, 0, 5);
  CHECK(sheet.width == 5 * ds.spec.image_size);
  CHECK(sheet.height == 2 * ds.spec.image_size);
}
