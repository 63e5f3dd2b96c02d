// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural factor dataset. Each class is a random polygon glyph with its own
// hue; content is a (dx, dy, rotation) placement of the glyph; style variants
// change the palette. Every image is a pure function of its factors and the
// spec, so exact transfer targets can be rendered on demand.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lord/config.hpp"
#include "lord/tensor.hpp"

namespace lord {

struct FactorSpec {
  std::size_t k_classes = 16;
  std::size_t grid_x = 6;
  std::size_t grid_y = 6;
  std::size_t grid_rot = 4;
  std::size_t style_variants = 1;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t shift_px = 2;       // pixels per x/y grid step
  double rot_step_deg = 20.0;     // degrees per rotation step
  double glyph_radius = 0.35;     // fraction of the image size
  std::size_t holdout_classes = 0;
  double holdout_fraction = 0.1;  // of the samples of the remaining classes
  std::uint64_t seed = 0;

  std::size_t grid_size() const { return grid_x * grid_y * grid_rot; }
  std::size_t num_samples() const { return k_classes * grid_size() * style_variants; }
  void validate() const;
  std::string to_text() const;
  static FactorSpec from_key_values(const KeyValues& kv);
  bool operator==(const FactorSpec&) const = default;
};

struct ContentFactors {
  std::size_t fx = 0, fy = 0, rot = 0;
  bool operator==(const ContentFactors&) const = default;
};

enum class Split : std::uint8_t { kTrain = 0, kHeldOutSample = 1, kHeldOutClass = 2 };

// [C x H x W] image with values on the k/255 lattice.
Tensor render(std::size_t class_id, const ContentFactors& content, std::size_t style_id,
              const FactorSpec& spec);

struct FactorDataset {
  FactorSpec spec;
  std::vector<double> pixels;  // n x C x H x W
  std::vector<std::size_t> classes;  // glyph class the image was rendered with
  std::vector<std::size_t> labels;   // training label; equals classes unless relabeled
  std::vector<std::size_t> styles;
  std::vector<ContentFactors> content;
  std::vector<Split> split;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return spec.channels * spec.image_size * spec.image_size; }
  Shape image_shape() const { return {spec.channels, spec.image_size, spec.image_size}; }
  Tensor image(std::size_t i) const;
  // Stacked [N x C x H x W] batch.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> indices(Split s) const;
  // Discrete content cell in [0, grid_size()).
  std::size_t content_cell(std::size_t i) const;
  // Content factors scaled to [0, 1].
  std::array<double, 3> content_real(std::size_t i) const;
  std::size_t num_labels() const;

  bool operator==(const FactorDataset&) const = default;
};

FactorDataset build_dataset(const FactorSpec& spec);

// Ground-truth image with the class and style of sample i and the content of
// sample j.
Tensor transfer_target(std::size_t class_i, const ContentFactors& content_j, std::size_t style_i,
                       const FactorSpec& spec);

// Returns a copy with labels replaced (e.g. joint class/style labels).
FactorDataset relabel(const FactorDataset& ds, const std::vector<std::size_t>& labels);

// Binary `.lords` container: magic "LRDS", u32 version, spec text, factor
// table (class, label, style, fx, fy, rot, split), u8 pixel payload, trailing
// CRC32.
void save_dataset(const std::string& path, const FactorDataset& ds);
FactorDataset load_dataset(const std::string& path);

// One PNG per sample plus manifest.csv (filename,class,style,fx,fy,rot).
void export_png_folder(const FactorDataset& ds, const std::string& dir);

}  // namespace lord
