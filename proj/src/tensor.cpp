// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lord {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

thread_local Tape* g_active_tape = nullptr;

#if defined(__GLIBC__)
// Activation buffers are large and short-lived. Left to defaults, glibc
// serves them with mmap and hands them back on free, so every training step
// pays for fresh page faults.
const bool g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

void validate_shape(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
}

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

ImplPtr make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Finalizes an op: checks values, and if recording, marks the output and
// registers the backward closure.
template <typename Fn>
Tensor finish(const char* op, ImplPtr out, std::initializer_list<const Tensor*> inputs,
              Fn&& backward) {
  check_finite(out->data, op);
  Tape* tape = g_active_tape;
  bool any = false;
  for (const Tensor* t : inputs) any = any || wants_grad(*t);
  if (tape != nullptr && any) {
    out->requires_grad = true;
    out->leaf = false;
    std::vector<const TensorImpl*> ins;
    for (const Tensor* t : inputs) ins.push_back(t->handle().get());
    tape->record(op, std::move(ins), out, std::forward<Fn>(backward));
  }
  return Tensor(out);
}

// Grad buffer of an input that needs a gradient, or nullptr.
double* grad_sink(const ImplPtr& impl) {
  if (!impl || !impl->requires_grad) return nullptr;
  impl->ensure_grad();
  return impl->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& in = x.handle();
  std::vector<double> out(in->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in->data[i]);
  auto impl = make_impl(in->shape, std::move(out));
  const TensorImpl* out_raw = impl.get();
  return finish(op, impl, {&x}, [in, out_raw, deriv](const std::vector<double>& g) {
    double* gx = grad_sink(in);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(in->data[i], out_raw->data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) {
  validate_shape(shape);
  const std::size_t n = shape_numel(shape);
  impl_ = make_impl(std::move(shape), std::vector<double>(n, fill));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  check_finite(values, "tensor construction");
  impl_ = make_impl(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.impl_->data) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.impl_->data) v = dist(rng);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::data_mut() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (flag) {
    impl_->ensure_grad();
  } else {
    impl_->grad.clear();
  }
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::grad_mut() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(make_impl(impl_->shape, impl_->data)); }

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::string op, std::vector<const TensorImpl*> inputs, ImplPtr output,
                  BackwardFn fn) {
  entries_.push_back(Entry{std::move(op), std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  const auto& root = loss.handle();
  if (!root->requires_grad) return;
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from the loss
    it->backward(it->output->grad);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto &ia = a.handle(), &ib = b.handle();
  std::vector<double> out(ia->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ia->data[i] + ib->data[i];
  return finish("add", make_impl(ia->shape, std::move(out)), {&a, &b},
                [ia, ib](const std::vector<double>& g) {
                  if (double* ga = grad_sink(ia))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (double* gb = grad_sink(ib))
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto &ia = a.handle(), &ib = b.handle();
  std::vector<double> out(ia->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ia->data[i] - ib->data[i];
  return finish("sub", make_impl(ia->shape, std::move(out)), {&a, &b},
                [ia, ib](const std::vector<double>& g) {
                  if (double* ga = grad_sink(ia))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (double* gb = grad_sink(ib))
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto &ia = a.handle(), &ib = b.handle();
  std::vector<double> out(ia->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ia->data[i] * ib->data[i];
  return finish("mul", make_impl(ia->shape, std::move(out)), {&a, &b},
                [ia, ib](const std::vector<double>& g) {
                  if (double* ga = grad_sink(ia))
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ib->data[i];
                  if (double* gb = grad_sink(ib))
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ia->data[i];
                });
}

Tensor add(const Tensor& a, double b) {
  return unary("add_scalar", a, [b](double x) { return x + b; },
               [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double b) {
  return unary("mul_scalar", a, [b](double x) { return x * b; },
               [b](double, double) { return b; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary("abs", a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  const auto& in = x.handle();
  double total = 0.0;
  for (double v : in->data) total += v;
  return finish("sum", make_impl({1}, {total}), {&x}, [in](const std::vector<double>& g) {
    if (double* gx = grad_sink(in))
      for (std::size_t i = 0; i < in->data.size(); ++i) gx[i] += g[0];
  });
}

Tensor mean(const Tensor& x) {
  const auto& in = x.handle();
  const double n = static_cast<double>(in->data.size());
  double total = 0.0;
  for (double v : in->data) total += v;
  return finish("mean", make_impl({1}, {total / n}), {&x}, [in, n](const std::vector<double>& g) {
    if (double* gx = grad_sink(in))
      for (std::size_t i = 0; i < in->data.size(); ++i) gx[i] += g[0] / n;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  const auto &ia = a.handle(), &ib = b.handle();
  std::vector<double> out(m * n);
  MapRow(out.data(), m, n).noalias() = CMapRow(ia->data.data(), m, k) * CMapRow(ib->data.data(), k, n);
  return finish("matmul", make_impl({m, n}, std::move(out)), {&a, &b},
                [ia, ib, m, k, n](const std::vector<double>& g) {
                  CMapRow gm(g.data(), m, n);
                  if (double* ga = grad_sink(ia))
                    MapRow(ga, m, k).noalias() += gm * CMapRow(ib->data.data(), k, n).transpose();
                  if (double* gb = grad_sink(ib))
                    MapRow(gb, k, n).noalias() += CMapRow(ia->data.data(), m, k).transpose() * gm;
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in || bias.numel() != outd) {
    throw ShapeError("linear: incompatible shapes x" + shape_str(x.shape()) + " W" +
                     shape_str(weight.shape()) + " b" + shape_str(bias.shape()));
  }
  const auto &ix = x.handle(), &iw = weight.handle(), &ib = bias.handle();
  std::vector<double> out(n * outd);
  MapRow y(out.data(), n, outd);
  y.noalias() = CMapRow(ix->data.data(), n, in) * CMapRow(iw->data.data(), outd, in).transpose();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < outd; ++c) y(r, c) += ib->data[c];
  return finish("linear", make_impl({n, outd}, std::move(out)), {&x, &weight, &bias},
                [ix, iw, ib, n, in, outd](const std::vector<double>& g) {
                  CMapRow gm(g.data(), n, outd);
                  if (double* gx = grad_sink(ix))
                    MapRow(gx, n, in).noalias() += gm * CMapRow(iw->data.data(), outd, in);
                  if (double* gw = grad_sink(iw))
                    MapRow(gw, outd, in).noalias() += gm.transpose() * CMapRow(ix->data.data(), n, in);
                  if (double* gb = grad_sink(ib))
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t c = 0; c < outd; ++c) gb[c] += gm(r, c);
                });
}

// ---------------------------------------------------------------------------
// Spatial

namespace {

struct ConvGeom {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, ho, wo;
  std::size_t k() const { return c * kh * kw; }
  std::size_t hw_out() const { return ho * wo; }
};

// Valid output range [lo, hi) along one axis for kernel offset `k`.
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t pad,
                        std::size_t k, std::size_t& lo, std::size_t& hi) {
  // need 0 <= o*stride + k - pad < in
  lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const long top = static_cast<long>(in) + static_cast<long>(pad) - static_cast<long>(k);
  hi = top <= 0 ? 0 : std::min<std::size_t>(out, (static_cast<std::size_t>(top) + stride - 1) / stride);
  if (lo > hi) lo = hi;
}

// col[row = (ci,ky,kx)][col = (sample - first, oy, ox)]
void im2col(const ConvGeom& g, const double* x, std::size_t first, std::size_t count, double* col) {
  const std::size_t cols = count * g.hw_out();
  for (std::size_t ky = 0; ky < g.kh; ++ky) {
    std::size_t ylo, yhi;
    valid_range(g.ho, g.h, g.stride, g.pad, ky, ylo, yhi);
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      std::size_t xlo, xhi;
      valid_range(g.wo, g.w, g.stride, g.pad, kx, xlo, xhi);
      for (std::size_t ci = 0; ci < g.c; ++ci) {
        double* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t s = 0; s < count; ++s) {
          const double* plane = x + ((first + s) * g.c + ci) * g.h * g.w;
          double* dst = row + s * g.hw_out();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            double* d = dst + oy * g.wo;
            if (oy < ylo || oy >= yhi) {
              std::fill(d, d + g.wo, 0.0);
              continue;
            }
            const double* src = plane + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
            std::fill(d, d + xlo, 0.0);
            if (g.stride == 1) {
              std::copy(src + xlo, src + xhi, d + xlo);
            } else {
              for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = src[ox * g.stride];
            }
            std::fill(d + xhi, d + g.wo, 0.0);
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const double* col, std::size_t first, std::size_t count, double* dx) {
  const std::size_t cols = count * g.hw_out();
  for (std::size_t ky = 0; ky < g.kh; ++ky) {
    std::size_t ylo, yhi;
    valid_range(g.ho, g.h, g.stride, g.pad, ky, ylo, yhi);
    for (std::size_t kx = 0; kx < g.kw; ++kx) {
      std::size_t xlo, xhi;
      valid_range(g.wo, g.w, g.stride, g.pad, kx, xlo, xhi);
      for (std::size_t ci = 0; ci < g.c; ++ci) {
        const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t s = 0; s < count; ++s) {
          double* plane = dx + ((first + s) * g.c + ci) * g.h * g.w;
          const double* src = row + s * g.hw_out();
          for (std::size_t oy = ylo; oy < yhi; ++oy) {
            const double* sr = src + oy * g.wo;
            double* d = plane + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
            if (g.stride == 1) {
              for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] += sr[ox];
            } else {
              for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox * g.stride] += sr[ox];
            }
          }
        }
      }
    }
  }
}

std::size_t conv_chunk(const ConvGeom& g) {
  constexpr std::size_t kBudget = std::size_t{1} << 19;  // doubles per im2col buffer
  const std::size_t per_sample = g.k() * g.hw_out();
  return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_sample, 1), 1, g.n);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
             stride, pad, 0, 0};
  if (weight.dim(1) != g.c) {
    throw ShapeError("conv2d: channel mismatch x" + shape_str(x.shape()) + " w" +
                     shape_str(weight.shape()));
  }
  if (bias.numel() != g.f) throw ShapeError("conv2d: bias length must equal output channels");
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if (pad >= g.kh || pad >= g.kw) throw ShapeError("conv2d: padding must be smaller than kernel");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  const auto &ix = x.handle(), &iw = weight.handle(), &ib = bias.handle();
  const std::size_t hw = g.hw_out(), kdim = g.k(), chunk = conv_chunk(g);
  std::vector<double> out(g.n * g.f * hw);
  std::vector<double> col, prod;
  CMapRow wmat(iw->data.data(), g.f, kdim);
  for (std::size_t first = 0; first < g.n; first += chunk) {
    const std::size_t count = std::min(chunk, g.n - first);
    col.resize(kdim * count * hw);
    prod.resize(g.f * count * hw);
    im2col(g, ix->data.data(), first, count, col.data());
    MapRow(prod.data(), g.f, count * hw).noalias() = wmat * CMapRow(col.data(), kdim, count * hw);
    for (std::size_t s = 0; s < count; ++s)
      for (std::size_t f = 0; f < g.f; ++f) {
        const double* src = prod.data() + f * count * hw + s * hw;
        double* dst = out.data() + ((first + s) * g.f + f) * hw;
        const double b = ib->data[f];
        for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
      }
  }
  return finish(
      "conv2d", make_impl({g.n, g.f, g.ho, g.wo}, std::move(out)), {&x, &weight, &bias},
      [ix, iw, ib, g](const std::vector<double>& grad) {
        const std::size_t hw = g.hw_out(), kdim = g.k(), chunk = conv_chunk(g);
        double* gx = grad_sink(ix);
        double* gw = grad_sink(iw);
        double* gb = grad_sink(ib);
        if (gb) {
          for (std::size_t s = 0; s < g.n; ++s)
            for (std::size_t f = 0; f < g.f; ++f) {
              const double* src = grad.data() + (s * g.f + f) * hw;
              double acc = 0.0;
              for (std::size_t p = 0; p < hw; ++p) acc += src[p];
              gb[f] += acc;
            }
        }
        if (!gx && !gw) return;
        std::vector<double> col, gy;
        CMapRow wmat(iw->data.data(), g.f, kdim);
        for (std::size_t first = 0; first < g.n; first += chunk) {
          const std::size_t count = std::min(chunk, g.n - first);
          gy.resize(g.f * count * hw);
          for (std::size_t s = 0; s < count; ++s)
            for (std::size_t f = 0; f < g.f; ++f)
              std::copy_n(grad.data() + ((first + s) * g.f + f) * hw, hw,
                          gy.data() + f * count * hw + s * hw);
          CMapRow gym(gy.data(), g.f, count * hw);
          col.resize(kdim * count * hw);
          if (gw) {
            im2col(g, ix->data.data(), first, count, col.data());
            MapRow(gw, g.f, kdim).noalias() += gym * CMapRow(col.data(), kdim, count * hw).transpose();
          }
          if (gx) {
            MapRow(col.data(), kdim, count * hw).noalias() = wmat.transpose() * gym;
            col2im(g, col.data(), first, count, gx);
          }
        }
      });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample_nearest: factor must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto& ix = x.handle();
  std::vector<double> out(n * c * ho * wo);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = ix->data.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = src[(oy / factor) * w + ox / factor];
  }
  return finish("upsample_nearest", make_impl({n, c, ho, wo}, std::move(out)), {&x},
                [ix, n, c, h, w, factor](const std::vector<double>& g) {
                  double* gx = grad_sink(ix);
                  if (!gx) return;
                  const std::size_t ho = h * factor, wo = w * factor;
                  for (std::size_t p = 0; p < n * c; ++p) {
                    const double* src = g.data() + p * ho * wo;
                    double* dst = gx + p * h * w;
                    for (std::size_t oy = 0; oy < ho; ++oy)
                      for (std::size_t ox = 0; ox < wo; ++ox)
                        dst[(oy / factor) * w + ox / factor] += src[oy * wo + ox];
                  }
                });
}

Tensor avg_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 4, "avg_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw ShapeError("avg_pool2d: window must divide spatial extents");
  }
  const std::size_t ho = h / window, wo = w / window;
  const double scale = 1.0 / static_cast<double>(window * window);
  const auto& ix = x.handle();
  std::vector<double> out(n * c * ho * wo, 0.0);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = ix->data.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) dst[(y / window) * wo + xx / window] += src[y * w + xx] * scale;
  }
  return finish("avg_pool2d", make_impl({n, c, ho, wo}, std::move(out)), {&x},
                [ix, n, c, h, w, window, scale](const std::vector<double>& g) {
                  double* gx = grad_sink(ix);
                  if (!gx) return;
                  const std::size_t ho = h / window, wo = w / window;
                  for (std::size_t p = 0; p < n * c; ++p) {
                    const double* src = g.data() + p * ho * wo;
                    double* dst = gx + p * h * w;
                    for (std::size_t y = 0; y < h; ++y)
                      for (std::size_t xx = 0; xx < w; ++xx)
                        dst[y * w + xx] += src[(y / window) * wo + xx / window] * scale;
                  }
                });
}

Tensor adain(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 4, "adain");
  if (!(eps > 0.0)) throw std::invalid_argument("adain: eps must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), m = x.dim(2) * x.dim(3);
  if (gamma.numel() != n * c || beta.numel() != n * c) {
    throw ShapeError("adain: gamma/beta must be [N x C] for x" + shape_str(x.shape()));
  }
  const auto &ix = x.handle(), &ig = gamma.handle(), &ib = beta.handle();
  auto xhat = std::make_shared<std::vector<double>>(n * c * m);
  auto inv_std = std::make_shared<std::vector<double>>(n * c);
  std::vector<double> out(n * c * m);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = ix->data.data() + p * m;
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += src[i];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[p] = is;
    for (std::size_t i = 0; i < m; ++i) {
      const double xh = (src[i] - mu) * is;
      (*xhat)[p * m + i] = xh;
      out[p * m + i] = ig->data[p] * xh + ib->data[p];
    }
  }
  return finish("adain", make_impl(ix->shape, std::move(out)), {&x, &gamma, &beta},
                [ix, ig, ib, xhat, inv_std, n, c, m](const std::vector<double>& g) {
                  double* gx = grad_sink(ix);
                  double* gg = grad_sink(ig);
                  double* gbeta = grad_sink(ib);
                  const double md = static_cast<double>(m);
                  for (std::size_t p = 0; p < n * c; ++p) {
                    const double* gy = g.data() + p * m;
                    const double* xh = xhat->data() + p * m;
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                      sum_g += gy[i];
                      sum_gx += gy[i] * xh[i];
                    }
                    if (gbeta) gbeta[p] += sum_g;
                    if (gg) gg[p] += sum_gx;
                    if (gx) {
                      // d/dx of the standardization, scaled by gamma.
                      const double k = ig->data[p] * (*inv_std)[p] / md;
                      for (std::size_t i = 0; i < m; ++i)
                        gx[p * m + i] += k * (md * gy[i] - sum_g - xh[i] * sum_gx);
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  const auto& ix = x.handle();
  return finish("reshape", make_impl(std::move(shape), ix->data), {&x},
                [ix](const std::vector<double>& g) {
                  if (double* gx = grad_sink(ix))
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw ShapeError("concat_cols: row counts differ");
  const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
  const auto &ia = a.handle(), &ib = b.handle();
  std::vector<double> out(n * (p + q));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(ia->data.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(ib->data.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  return finish("concat_cols", make_impl({n, p + q}, std::move(out)), {&a, &b},
                [ia, ib, n, p, q](const std::vector<double>& g) {
                  double* ga = grad_sink(ia);
                  double* gb = grad_sink(ib);
                  for (std::size_t r = 0; r < n; ++r) {
                    if (ga)
                      for (std::size_t j = 0; j < p; ++j) ga[r * p + j] += g[r * (p + q) + j];
                    if (gb)
                      for (std::size_t j = 0; j < q; ++j) gb[r * q + j] += g[r * (p + q) + p + j];
                  }
                });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  if (begin >= end || end > x.dim(1)) throw ShapeError("slice_cols: invalid column range");
  const std::size_t n = x.dim(0), d = x.dim(1), w = end - begin;
  const auto& ix = x.handle();
  std::vector<double> out(n * w);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(ix->data.data() + r * d + begin, w, out.data() + r * w);
  return finish("slice_cols", make_impl({n, w}, std::move(out)), {&x},
                [ix, n, d, w, begin](const std::vector<double>& g) {
                  if (double* gx = grad_sink(ix))
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t j = 0; j < w; ++j) gx[r * d + begin + j] += g[r * w + j];
                });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank(table, 2, "gather_rows");
  const std::size_t d = table.dim(1);
  const auto& it = table.handle();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  if (idx.empty()) throw ShapeError("gather_rows: empty row list");
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= table.dim(0)) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(it->data.data() + idx[r] * d, d, out.data() + r * d);
  }
  const std::size_t n = idx.size();
  return finish("gather_rows", make_impl({n, d}, std::move(out)), {&table},
                [it, idx = std::move(idx), d](const std::vector<double>& g) {
                  if (double* gt = grad_sink(it))
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
                });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  const auto& il = logits.handle();
  auto probs = std::make_shared<std::vector<double>>(n * k);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (lab[r] >= k) throw ShapeError("softmax_cross_entropy: label out of range");
    const double* z = il->data.data() + r * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(z[j] - zmax) / denom;
    loss += -(z[lab[r]] - zmax - std::log(denom));
  }
  loss /= static_cast<double>(n);
  return finish("softmax_cross_entropy", make_impl({1}, {loss}), {&logits},
                [il, probs, lab = std::move(lab), n, k](const std::vector<double>& g) {
                  double* gl = grad_sink(il);
                  if (!gl) return;
                  const double scale = g[0] / static_cast<double>(n);
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < k; ++j)
                      gl[r * k + j] += scale * ((*probs)[r * k + j] - (j == lab[r] ? 1.0 : 0.0));
                });
}

}  // namespace lord
