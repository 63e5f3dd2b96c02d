// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Randomized finite-difference checks shared by the tensor unit tests and the
// acceptance runner.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lord/tensor.hpp"

namespace lord::testing {

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Max over every input coordinate of |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-6), for loss = sum(f(inputs) * R) with a fixed random R.
// Central differences with step `h`.
double max_grad_rel_error(const TensorFn& f, const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                          double h = 1e-5);

struct GradCaseResult {
  std::string op;
  bool linear = false;  // exact under central differences
  double rel_error = 0.0;
};

// `count` cases cycling through every differentiable op with random shapes.
std::vector<GradCaseResult> run_gradient_suite(std::size_t count, std::uint64_t seed);

}  // namespace lord::testing
