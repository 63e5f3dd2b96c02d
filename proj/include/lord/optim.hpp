// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lord/serialize.hpp"
#include "lord/tensor.hpp"

namespace lord {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of parameters sharing one learning rate.
//
// A step where every gradient in the group is exactly zero is a no-op: neither
// parameters, moments, nor the step counter change. Gradients are zeroed after
// each step.
class AdamGroup {
 public:
  AdamGroup(std::string name, std::vector<Tensor> params, AdamHyper hyper);

  // Returns false when the step was skipped because all gradients were zero.
  bool step();
  void zero_grad();

  const std::string& name() const { return name_; }
  const AdamHyper& hyper() const { return hyper_; }
  void set_lr(double lr) { hyper_.lr = lr; }
  std::uint64_t step_count() const { return steps_; }

  void save_state(std::vector<NamedArray>& out) const;
  void load_state(const ArrayMap& in);

 private:
  std::string name_;
  std::vector<Tensor> params_;
  AdamHyper hyper_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t steps_ = 0;
};

// Row-sparse Adam for latent tables: only rows named in the minibatch advance,
// each with its own step counter so bias correction matches the number of
// times that row has actually been updated.
class SparseRowAdam {
 public:
  SparseRowAdam(std::string name, Tensor table, AdamHyper hyper);

  // `rows` may contain duplicates; each distinct row is updated once.
  void step(std::span<const std::size_t> rows);

  const std::string& name() const { return name_; }
  const AdamHyper& hyper() const { return hyper_; }
  std::uint64_t row_steps(std::size_t row) const { return row_steps_[row]; }

  void save_state(std::vector<NamedArray>& out) const;
  void load_state(const ArrayMap& in);

 private:
  std::string name_;
  Tensor table_;
  AdamHyper hyper_;
  std::vector<double> m_, v_;
  std::vector<std::uint64_t> row_steps_;
};

}  // namespace lord
