// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-class style clustering: k-means over style features within every class,
// yielding joint (class, style) labels that can replace the class labels for
// training.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lord/data.hpp"
#include "lord/png.hpp"
#include "lord/tensor.hpp"

namespace lord {

// Flattened Gram matrix of the fixed feature net's first layer followed by an
// 8-bin histogram per image channel. Returns [N x (C1^2 + 8 * channels)].
Tensor extract_style_features(const Tensor& images);
std::size_t style_feature_dim(std::size_t image_channels);

struct KMeansResult {
  std::vector<double> centroids;        // l x d
  std::vector<std::size_t> assignments;  // per point
  double inertia = 0.0;
  std::size_t iterations = 0;
  // Inertia after each assignment step of the winning restart.
  std::vector<double> inertia_history;
};

// k-means++ seeding, then Lloyd iterations until the assignment stops
// changing or `max_iter` is reached. Empty clusters are moved to the point
// farthest from its centroid. The best of `restarts` runs (lowest inertia) is
// returned. points: n x d row-major.
KMeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t d, std::size_t l,
                    std::uint64_t seed, std::size_t max_iter = 100, std::size_t restarts = 5);

struct StyleAssignment {
  std::size_t l = 1;
  std::vector<std::size_t> classes;  // y_i
  std::vector<std::size_t> styles;   // t_i < l
  std::vector<std::size_t> joint;    // y_i * l + t_i
  std::vector<std::string> warnings;
  // Per class, the inertia trace of its clustering.
  std::vector<std::vector<double>> inertia_history;
};

StyleAssignment style_cluster(const FactorDataset& ds, std::size_t l, std::uint64_t seed);

// Mean over classes of the fraction of images whose cluster agrees with the
// majority true style of that cluster.
double cluster_purity(const StyleAssignment& a, const std::vector<std::size_t>& true_styles);

// index,class,style,joint_label
std::string assignments_csv(const StyleAssignment& a);

// One row per style cluster of class `y`, up to `per_row` images each.
RasterImage cluster_sheet(const FactorDataset& ds, const StyleAssignment& a, std::size_t y, std::size_t per_row);

}  // namespace lord
