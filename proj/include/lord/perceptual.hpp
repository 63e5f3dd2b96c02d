// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-contained stand-in for a pretrained perceptual loss: L1 over a 3-level
// average-pool pyramid plus squared differences of features from a fixed,
// seed-pinned random 3-layer conv net. The same net supplies the style
// features used for clustering.

#pragma once

#include <vector>

#include "lord/config.hpp"
#include "lord/model.hpp"
#include "lord/tensor.hpp"

namespace lord {

class FeatureNet {
 public:
  static constexpr std::uint64_t kSeed = 0x5eedf00dULL;
  static constexpr std::size_t kFirstLayerChannels = 8;

  explicit FeatureNet(std::size_t image_channels);

  // Activations of all three layers (post-ReLU).
  std::vector<Tensor> features(const Tensor& images) const;
  Tensor first_layer(const Tensor& images) const;

 private:
  std::vector<Conv> layers_;
};

// Shared instance per channel count; weights depend only on kSeed.
const FeatureNet& feature_net(std::size_t image_channels);

// Batch mean of the per-image reconstruction loss (a sum over the image).
Tensor recon_loss(const Tensor& pred, const Tensor& target, ReconLoss kind);

// Per-image distances without recording; same definition as recon_loss but
// divided by the number of image values so results are per-pixel scaled.
std::vector<double> perceptual_distance(const Tensor& a, const Tensor& b);
std::vector<double> pixel_l1_distance(const Tensor& a, const Tensor& b);

}  // namespace lord
