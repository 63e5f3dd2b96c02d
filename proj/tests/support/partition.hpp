// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force k-means reference: enumerates every labeling of a small point
// set.

#pragma once

#include <cstddef>
#include <vector>

namespace lord::testing {

// Sum of squared distances to the cluster means of `assign`.
double partition_sse(const std::vector<double>& x, std::size_t d, const std::vector<std::size_t>& assign,
                     std::size_t l);

// Equal up to a relabeling of the clusters.
bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

struct ExhaustivePartition {
  std::vector<std::size_t> assign;
  double sse = 0.0;
};

// Minimum-SSE partition of n points into exactly l non-empty clusters; l^n
// labelings, so keep n small.
ExhaustivePartition exhaustive_partition(const std::vector<double>& x, std::size_t n, std::size_t d,
                                         std::size_t l);

}  // namespace lord::testing
