// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Measurements on trained models: content-transfer error against exact
// rendered targets, posterior-collapse statistics, probe curves and transfer
// grids.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lord/data.hpp"
#include "lord/model.hpp"
#include "lord/png.hpp"
#include "lord/probe.hpp"
#include "lord/tensor.hpp"

namespace lord {

using IndexPair = std::pair<std::size_t, std::size_t>;

// Both distances are per-image means normalized by the number of image values.
struct TransferScore {
  double perceptual = 0.0;
  double pixel_l1 = 0.0;
  std::size_t pairs = 0;
};

// `count` ordered pairs (i, j), i != j, drawn uniformly from `pool`.
std::vector<IndexPair> sample_pairs(std::span<const std::size_t> pool, std::size_t count, std::uint64_t seed);
std::vector<IndexPair> identity_pairs(std::span<const std::size_t> pool);

// Mean distances between two equally shaped image batches.
TransferScore score_images(const Tensor& predicted, const Tensor& target);

// Ground-truth targets: class and style of i, content of j.
Tensor transfer_targets(const FactorDataset& ds, std::span<const IndexPair> pairs);

// Mean d(G(E_y(x_i), E_c(x_j)), target(i, j)).
TransferScore transfer_error(const Generator& gen, const Encoder& class_enc, const Encoder& content_enc,
                             const FactorDataset& ds, std::span<const IndexPair> pairs);

// Same protocol with precomputed codes; `slot` maps a dataset index to its
// row in the code matrices.
TransferScore transfer_error_from_codes(const Generator& gen, const Tensor& class_codes, const Tensor& content_codes,
                                        const std::map<std::size_t, std::size_t>& slot, const FactorDataset& ds,
                                        std::span<const IndexPair> pairs);

// Mean distance between the two images of each pair: the error of a model
// whose output is just some other dataset image.
TransferScore no_skill_baseline(const FactorDataset& ds, std::span<const IndexPair> pairs);

struct KlCollapseStats {
  std::vector<double> mean_mu;     // per content dimension, averaged over samples
  std::vector<double> mean_sigma;  // per content dimension, averaged over samples
  std::size_t collapsed = 0;       // |mean_mu| < 0.1 and mean_sigma in [0.9, 1.1]
  std::size_t escaped = 0;         // mean_sigma < 0.5
  double collapse_fraction = 0.0;
};

// Throws std::invalid_argument for a non-variational encoder.
KlCollapseStats kl_collapse_stats(const Encoder& content_enc, const FactorDataset& ds,
                                  std::span<const std::size_t> indices);
std::string kl_stats_csv(const KlCollapseStats& stats);

// (epoch, probe accuracy) entries of a run's log.jsonl; throws when the log
// has none.
std::vector<std::pair<std::size_t, double>> read_probe_curve(const std::string& run_dir);
// Columns: epoch followed by one accuracy column per named curve.
std::string curves_csv(const std::map<std::string, std::vector<std::pair<std::size_t, double>>>& curves);

// (r+1) x (s+1) tiles: content sources along the top row, class sources down
// the left column, cell (i, j) = G(E_y(class_i), E_c(content_j)).
RasterImage transfer_grid(const Generator& gen, const Encoder& class_enc, const Encoder& content_enc,
                          const Tensor& class_images, const Tensor& content_images);

}  // namespace lord
