// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/optim.hpp"

#include <algorithm>
#include <cmath>

namespace lord {

AdamGroup::AdamGroup(std::string name, std::vector<Tensor> params, AdamHyper hyper)
    : name_(std::move(name)), params_(std::move(params)), hyper_(hyper) {
  for (auto& p : params_) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

bool AdamGroup::step() {
  bool touched = false;
  for (const auto& p : params_) {
    if (!p.has_grad()) throw std::logic_error("adam group '" + name_ + "': parameter has no gradient");
    if (!touched) touched = std::any_of(p.grad().begin(), p.grad().end(), [](double g) { return g != 0.0; });
  }
  if (!touched) return false;
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto data = params_[k].data_mut();
    auto grad = params_[k].grad_mut();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g;
      v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
      grad[i] = 0.0;
    }
  }
  return true;
}

void AdamGroup::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamGroup::save_state(std::vector<NamedArray>& out) const {
  const std::string prefix = "optim." + name_ + ".";
  out.push_back({prefix + "steps", {1}, {static_cast<double>(steps_)}});
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({prefix + "m" + std::to_string(k), params_[k].shape(), m_[k]});
    out.push_back({prefix + "v" + std::to_string(k), params_[k].shape(), v_[k]});
  }
}

void AdamGroup::load_state(const ArrayMap& in) {
  const std::string prefix = "optim." + name_ + ".";
  steps_ = static_cast<std::uint64_t>(require_array(in, prefix + "steps").values.at(0));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& m = require_array(in, prefix + "m" + std::to_string(k));
    const auto& v = require_array(in, prefix + "v" + std::to_string(k));
    if (m.values.size() != m_[k].size() || v.values.size() != v_[k].size()) {
      throw ShapeError("optimizer state size mismatch for group " + name_);
    }
    m_[k] = m.values;
    v_[k] = v.values;
  }
}

SparseRowAdam::SparseRowAdam(std::string name, Tensor table, AdamHyper hyper)
    : name_(std::move(name)), table_(std::move(table)), hyper_(hyper) {
  if (table_.rank() != 2) throw ShapeError("SparseRowAdam expects a 2-D table");
  if (!table_.requires_grad()) table_.set_requires_grad(true);
  m_.assign(table_.numel(), 0.0);
  v_.assign(table_.numel(), 0.0);
  row_steps_.assign(table_.dim(0), 0);
}

void SparseRowAdam::step(std::span<const std::size_t> rows) {
  std::vector<std::size_t> unique(rows.begin(), rows.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  const std::size_t d = table_.dim(1);
  auto data = table_.data_mut();
  auto grad = table_.grad_mut();
  for (std::size_t row : unique) {
    if (row >= row_steps_.size()) throw ShapeError("SparseRowAdam: row out of range");
    const double t = static_cast<double>(++row_steps_[row]);
    const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
    for (std::size_t j = row * d; j < (row + 1) * d; ++j) {
      const double g = grad[j];
      m_[j] = hyper_.beta1 * m_[j] + (1.0 - hyper_.beta1) * g;
      v_[j] = hyper_.beta2 * v_[j] + (1.0 - hyper_.beta2) * g * g;
      data[j] -= hyper_.lr * (m_[j] / bc1) / (std::sqrt(v_[j] / bc2) + hyper_.eps);
      grad[j] = 0.0;
    }
  }
}

void SparseRowAdam::save_state(std::vector<NamedArray>& out) const {
  const std::string prefix = "optim." + name_ + ".";
  std::vector<double> steps(row_steps_.begin(), row_steps_.end());
  out.push_back({prefix + "row_steps", {row_steps_.size()}, std::move(steps)});
  out.push_back({prefix + "m", table_.shape(), m_});
  out.push_back({prefix + "v", table_.shape(), v_});
}

void SparseRowAdam::load_state(const ArrayMap& in) {
  const std::string prefix = "optim." + name_ + ".";
  const auto& steps = require_array(in, prefix + "row_steps");
  const auto& m = require_array(in, prefix + "m");
  const auto& v = require_array(in, prefix + "v");
  if (steps.values.size() != row_steps_.size() || m.values.size() != m_.size() ||
      v.values.size() != v_.size()) {
    throw ShapeError("optimizer state size mismatch for table " + name_);
  }
  for (std::size_t i = 0; i < row_steps_.size(); ++i) row_steps_[i] = static_cast<std::uint64_t>(steps.values[i]);
  m_ = m.values;
  v_ = v.values;
}

}  // namespace lord
