// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-hoc probes that measure what a set of frozen codes reveals: an MLP
// classifier (one hidden ReLU layer) and closed-form ridge regression.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

struct ProbeOptions {
  std::size_t hidden = 128;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double train_fraction = 0.8;
  // 1: a single random split. k > 1: k rotations of the held-out part, all
  // test predictions pooled.
  std::size_t folds = 1;
  std::uint64_t seed = 0;

  std::string protocol() const;
};

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;  // 1 / number of distinct labels
  std::size_t num_labels = 0;
  std::size_t num_tested = 0;
  std::string protocol;
};

// codes: [N x d]. Features are standardized with statistics of the training
// part of each split.
ProbeResult probe_classifier(const Tensor& codes, std::span<const std::size_t> labels, const ProbeOptions& opt);

struct RidgeResult {
  double rmse = 0.0;            // held-out, averaged over targets
  double target_std = 0.0;      // held-out RMSE of predicting the training mean
  std::string protocol;
};

// Closed-form ridge (penalty on weights, not bias) from codes [N x d] to
// targets [N x t]; trained on a random `train_fraction` split.
RidgeResult ridge_regression(const Tensor& codes, const Tensor& targets, double penalty, double train_fraction,
                             std::uint64_t seed);

}  // namespace lord
