// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "lord/data.hpp"
#include "lord/png.hpp"

using namespace lord;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

FactorSpec small_spec() {
  FactorSpec s;
  s.k_classes = 4;
  s.grid_x = 3;
  s.grid_y = 2;
  s.grid_rot = 2;
  s.image_size = 16;
  return s;
}

}  // namespace

TEST_CASE("render is deterministic and class-specific") {
  FactorSpec spec;
  ContentFactors g{2, 3, 1};
  CHECK(max_abs_diff(render(3, g, 0, spec), render(3, g, 0, spec)) == 0.0);
  CHECK(max_abs_diff(render(3, g, 0, spec), render(4, g, 0, spec)) > 0.0);
  Tensor img = render(0, g, 0, spec);
  CHECK(img.shape() == Shape{3, 32, 32});
  for (double v : img.data()) {
    const double q = v * 255.0;
    CHECK(std::abs(q - std::round(q)) < 1e-9);
  }
  CHECK_THROWS(render(16, g, 0, spec));
  CHECK_THROWS(render(0, ContentFactors{6, 0, 0}, 0, spec));
  CHECK_THROWS(render(0, g, 1, spec));
}

TEST_CASE("x-shift equals a pixel translation within the crop") {
  FactorSpec spec;
  const std::size_t s = spec.image_size, d = spec.shift_px;
  for (std::size_t cls : {0u, 5u, 11u}) {
    for (std::size_t fx = 0; fx + 1 < spec.grid_x; ++fx) {
      Tensor a = render(cls, {fx, 2, 1}, 0, spec);
      Tensor b = render(cls, {fx + 1, 2, 1}, 0, spec);
      double err = 0.0;
      for (std::size_t c = 0; c < spec.channels; ++c)
        for (std::size_t y = 0; y < s; ++y)
          for (std::size_t x = 0; x + d < s; ++x)
            err = std::max(err, std::abs(b.at((c * s + y) * s + x + d) - a.at((c * s + y) * s + x)));
      CHECK(err == 0.0);
    }
  }
}

TEST_CASE("sizes and splits") {
  FactorSpec spec;
  spec.grid_rot = 1;
  auto ds = build_dataset(spec);
  CHECK(ds.size() == 576);

  FactorSpec held = small_spec();
  held.k_classes = 16;
  held.holdout_classes = 4;
  auto hs = build_dataset(held);
  std::set<std::size_t> train, test;
  for (auto i : hs.indices(Split::kTrain)) train.insert(hs.labels[i]);
  for (auto i : hs.indices(Split::kHeldOutClass)) test.insert(hs.labels[i]);
  for (auto i : hs.indices(Split::kHeldOutSample)) CHECK(train.count(hs.labels[i]) == 1);
  CHECK(train.size() == 12);
  CHECK(test.size() == 4);
  for (auto y : test) CHECK(train.count(y) == 0);
  const std::size_t remaining = 12 * held.grid_size();
  CHECK(hs.indices(Split::kHeldOutSample).size() == static_cast<std::size_t>(std::llround(0.1 * remaining)));
}

TEST_CASE("dataset images equal their renders") {
  auto ds = build_dataset(small_spec());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(max_abs_diff(ds.image(i), render(ds.classes[i], ds.content[i], ds.styles[i], ds.spec)) == 0.0);
  }
  CHECK(build_dataset(small_spec()) == ds);
}

TEST_CASE("save and load round trip") {
  auto spec = small_spec();
  spec.style_variants = 2;
  spec.holdout_classes = 1;
  auto ds = build_dataset(spec);
  const auto path = (std::filesystem::temp_directory_path() / "lord_test_data.lords").string();
  save_dataset(path, ds);
  CHECK(load_dataset(path) == ds);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  CHECK_THROWS(load_dataset(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_dataset(path));
}

TEST_CASE("transfer targets") {
  FactorSpec spec;
  ContentFactors gi{1, 2, 0}, gj{4, 0, 3};
  CHECK(max_abs_diff(transfer_target(2, gi, 0, spec), render(2, gi, 0, spec)) == 0.0);
  CHECK(max_abs_diff(transfer_target(2, gj, 0, spec), transfer_target(7, gi, 0, spec)) > 0.0);
  CHECK(max_abs_diff(transfer_target(2, gj, 0, spec), render(2, gj, 0, spec)) == 0.0);
}

TEST_CASE("pixel-space 1-NN recovers the class") {
  FactorSpec spec;
  spec.holdout_fraction = 0.1;
  auto ds = build_dataset(spec);
  const auto train = ds.indices(Split::kTrain);
  const auto test = ds.indices(Split::kHeldOutSample);
  REQUIRE(!test.empty());
  const std::size_t per = ds.image_numel();
  std::size_t correct = 0;
  for (auto t : test) {
    const double* q = ds.pixels.data() + t * per;
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (auto r : train) {
      const double* p = ds.pixels.data() + r * per;
      double d = 0.0;
      for (std::size_t j = 0; j < per; ++j) d += (p[j] - q[j]) * (p[j] - q[j]);
      if (d < best) {
        best = d;
        label = ds.labels[r];
      }
    }
    correct += label == ds.labels[t];
  }
  CHECK(static_cast<double>(correct) / test.size() >= 0.99);
}

TEST_CASE("relabel keeps images") {
  auto ds = build_dataset(small_spec());
  std::vector<std::size_t> joint(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) joint[i] = ds.labels[i] / 2;
  auto merged = relabel(ds, joint);
  CHECK(merged.pixels == ds.pixels);
  CHECK(merged.num_labels() == 2);
  CHECK(merged.classes == ds.classes);
}

TEST_CASE("png export writes a manifest") {
  auto spec = small_spec();
  spec.k_classes = 2;
  auto ds = build_dataset(spec);
  const auto dir = std::filesystem::temp_directory_path() / "lord_test_png";
  std::filesystem::remove_all(dir);
  export_png_folder(ds, dir.string());
  std::ifstream manifest(dir / "manifest.csv");
  std::string header;
  std::getline(manifest, header);
  CHECK(header == "filename,class,style,fx,fy,rot");
  std::size_t rows = 0;
  for (std::string line; std::getline(manifest, line);) ++rows;
  CHECK(rows == ds.size());
  RasterImage img = read_png((dir / "000003.png").string());
  CHECK(img.width == spec.image_size);
  CHECK(to_raster(ds.image(3)).pixels == img.pixels);
  std::filesystem::remove_all(dir);
}

TEST_CASE("spec parsing") {
  auto spec = FactorSpec::from_key_values(parse_key_values("k_classes = 5\nrot_step_deg = 12.5\n"));
  CHECK(spec.k_classes == 5);
  CHECK(spec.rot_step_deg == 12.5);
  CHECK(FactorSpec::from_key_values(parse_key_values(spec.to_text())).to_text() == spec.to_text());
  CHECK_THROWS(FactorSpec::from_key_values(parse_key_values("colour = 3\n")));
}
