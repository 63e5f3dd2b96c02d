// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with tape-based reverse-mode autodiff.
//
// Operations record onto the thread's active Tape (see TapeScope) whenever at
// least one input requires a gradient. Without an active tape every operation
// is a plain forward evaluation.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lord {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct mutation bypasses the tape; reserved for optimizers and input
  // construction.
  std::span<double> data_mut();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  // Marks the tensor as a differentiable leaf and allocates a zero grad.
  Tensor& set_requires_grad(bool flag = true);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Same values, new storage, no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl>& handle() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

  struct Entry {
    std::string op;
    std::vector<const detail::TensorImpl*> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  void record(std::string op, std::vector<const detail::TensorImpl*> inputs,
              std::shared_ptr<detail::TensorImpl> output, BackwardFn fn);

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  // the scalar `loss`.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for the current thread (evaluation inside training).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---------------------------------------------------------------------------
// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);

// Activations
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// Reductions to a scalar
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
// x[N x in] * W[out x in]^T + b[out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Spatial (NCHW)
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor avg_pool2d(const Tensor& x, std::size_t window);
Tensor adain(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Shape manipulation
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
// Rows of `table` selected by `rows`; the backward pass scatter-adds, so a row
// selected twice receives the sum of both contributions.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

// Mean softmax cross-entropy of logits[N x K] against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }

}  // namespace lord
