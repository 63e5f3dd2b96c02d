// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/perceptual.hpp"

#include <map>
#include <mutex>

namespace lord {

namespace {

constexpr std::size_t kPyramidLevels = 3;

double level_weight(std::size_t level) { return static_cast<double>(std::size_t{1} << (2 * level)); }

}  // namespace

FeatureNet::FeatureNet(std::size_t image_channels) {
  std::mt19937_64 rng(kSeed);
  layers_.push_back(Conv::kaiming(image_channels, kFirstLayerChannels, 3, 1, rng));
  layers_.push_back(Conv::kaiming(kFirstLayerChannels, 16, 3, 2, rng));
  layers_.push_back(Conv::kaiming(16, 16, 3, 2, rng));
}

std::vector<Tensor> FeatureNet::features(const Tensor& images) const {
  std::vector<Tensor> out;
  Tensor h = images;
  for (const auto& layer : layers_) {
    h = relu(layer(h));
    out.push_back(h);
  }
  return out;
}

Tensor FeatureNet::first_layer(const Tensor& images) const { return relu(layers_.front()(images)); }

const FeatureNet& feature_net(std::size_t image_channels) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<FeatureNet>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[image_channels];
  if (!slot) slot = std::make_unique<FeatureNet>(image_channels);
  return *slot;
}

Tensor recon_loss(const Tensor& pred, const Tensor& target, ReconLoss kind) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("recon_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const double inv_n = 1.0 / static_cast<double>(pred.dim(0));
  if (kind == ReconLoss::kPixelL1) return sum(abs(pred - target)) * inv_n;

  Tensor total = sum(abs(pred - target));
  Tensor a = pred, b = target;
  for (std::size_t level = 1; level < kPyramidLevels; ++level) {
    a = avg_pool2d(a, 2);
    b = avg_pool2d(b, 2);
    total = total + sum(abs(a - b)) * level_weight(level);
  }
  const auto& net = feature_net(pred.dim(1));
  auto fa = net.features(pred);
  auto fb = net.features(target);
  for (std::size_t j = 0; j < fa.size(); ++j) total = total + sum(square(fa[j] - fb[j]));
  return total * inv_n;
}

namespace {

// Per-sample sums of a [N x ...] tensor.
std::vector<double> per_sample_sums(const Tensor& t, double weight, std::vector<double> acc) {
  const std::size_t n = t.dim(0), per = t.numel() / n;
  auto d = t.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += d[i * per + j];
    acc[i] += weight * s;
  }
  return acc;
}

}  // namespace

std::vector<double> perceptual_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("perceptual_distance: shape mismatch");
  const std::size_t n = a.dim(0);
  const double scale = 1.0 / static_cast<double>(a.numel() / n);
  std::vector<double> acc(n, 0.0);
  acc = per_sample_sums(abs(a - b), 1.0, std::move(acc));
  Tensor pa = a, pb = b;
  for (std::size_t level = 1; level < kPyramidLevels; ++level) {
    pa = avg_pool2d(pa, 2);
    pb = avg_pool2d(pb, 2);
    acc = per_sample_sums(abs(pa - pb), level_weight(level), std::move(acc));
  }
  const auto& net = feature_net(a.dim(1));
  auto fa = net.features(a);
  auto fb = net.features(b);
  for (std::size_t j = 0; j < fa.size(); ++j) acc = per_sample_sums(square(fa[j] - fb[j]), 1.0, std::move(acc));
  for (double& v : acc) v *= scale;
  return acc;
}

std::vector<double> pixel_l1_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("pixel_l1_distance: shape mismatch");
  const std::size_t n = a.dim(0);
  std::vector<double> acc = per_sample_sums(abs(a - b), 1.0, std::vector<double>(n, 0.0));
  const double scale = 1.0 / static_cast<double>(a.numel() / n);
  for (double& v : acc) v *= scale;
  return acc;
}

}  // namespace lord
