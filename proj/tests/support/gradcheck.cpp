// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lord::testing {

namespace {

double project(const Tensor& out, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += out.at(i) * r[i];
  return s;
}

std::vector<Tensor> fresh_leaves(const std::vector<Tensor>& inputs) {
  std::vector<Tensor> out;
  for (const auto& t : inputs) {
    Tensor c = t.detach();
    c.set_requires_grad(true);
    out.push_back(c);
  }
  return out;
}

// Values bounded away from zero so kinked activations stay differentiable
// within the finite-difference stencil.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor t = Tensor::uniform(std::move(shape), 0.05, 1.5, rng);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data_mut()) v = sign(rng) ? -v : v;
  return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct OpCase {
  std::string name;
  bool linear;
  std::function<std::pair<TensorFn, std::vector<Tensor>>(std::mt19937_64&)> make;
};

std::vector<OpCase> op_cases() {
  std::vector<OpCase> ops;
  auto mat = [](std::mt19937_64& rng) {
    return Shape{pick(rng, 1, 5), pick(rng, 1, 6)};
  };
  auto img = [](std::mt19937_64& rng) {
    return Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)};
  };
  auto binary = [&](std::string name, bool linear, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    ops.push_back({name, linear, [mat, op](std::mt19937_64& rng) {
                     Shape s = mat(rng);
                     return std::make_pair(TensorFn([op](const std::vector<Tensor>& in) { return op(in[0], in[1]); }),
                                           std::vector<Tensor>{Tensor::randn(s, 1.0, rng), Tensor::randn(s, 1.0, rng)});
                   }});
  };
  auto unary = [&](std::string name, bool linear, std::function<Tensor(const Tensor&)> op) {
    ops.push_back({name, linear, [mat, op](std::mt19937_64& rng) {
                     return std::make_pair(TensorFn([op](const std::vector<Tensor>& in) { return op(in[0]); }),
                                           std::vector<Tensor>{away_from_zero(mat(rng), rng)});
                   }});
  };
  binary("add", true, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", true, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", true, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  unary("add_scalar", true, [](const Tensor& a) { return add(a, 0.7); });
  unary("mul_scalar", true, [](const Tensor& a) { return mul(a, -1.3); });
  unary("square", true, [](const Tensor& a) { return square(a); });
  unary("abs", false, [](const Tensor& a) { return abs(a); });
  unary("exp", false, [](const Tensor& a) { return exp(a); });
  unary("relu", false, [](const Tensor& a) { return relu(a); });
  unary("leaky_relu", false, [](const Tensor& a) { return leaky_relu(a, 0.2); });
  unary("sigmoid", false, [](const Tensor& a) { return sigmoid(a); });
  unary("tanh", false, [](const Tensor& a) { return tanh(a); });
  unary("sum", true, [](const Tensor& a) { return sum(a); });
  unary("mean", true, [](const Tensor& a) { return mean(a); });
  unary("reshape", true, [](const Tensor& a) { return reshape(a, {a.numel()}); });
  ops.push_back({"matmul", true, [](std::mt19937_64& rng) {
                   const std::size_t m = pick(rng, 1, 5), k = pick(rng, 1, 5), n = pick(rng, 1, 5);
                   return std::make_pair(TensorFn([](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }),
                                         std::vector<Tensor>{Tensor::randn({m, k}, 1.0, rng),
                                                             Tensor::randn({k, n}, 1.0, rng)});
                 }});
  ops.push_back({"linear", true, [](std::mt19937_64& rng) {
                   const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 6), out = pick(rng, 1, 5);
                   return std::make_pair(
                       TensorFn([](const std::vector<Tensor>& v) { return linear(v[0], v[1], v[2]); }),
                       std::vector<Tensor>{Tensor::randn({n, in}, 1.0, rng), Tensor::randn({out, in}, 1.0, rng),
                                           Tensor::randn({out}, 1.0, rng)});
                 }});
  ops.push_back({"conv2d", true, [](std::mt19937_64& rng) {
                   const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), f = pick(rng, 1, 3);
                   const std::size_t k = pick(rng, 0, 1) ? 3 : 1, stride = pick(rng, 1, 2), pad = k == 3 ? pick(rng, 0, 1) : 0;
                   const std::size_t hw = pick(rng, k, 6);
                   return std::make_pair(
                       TensorFn([stride, pad](const std::vector<Tensor>& v) {
                         return conv2d(v[0], v[1], v[2], stride, pad);
                       }),
                       std::vector<Tensor>{Tensor::randn({n, c, hw, hw}, 1.0, rng), Tensor::randn({f, c, k, k}, 1.0, rng),
                                           Tensor::randn({f}, 1.0, rng)});
                 }});
  ops.push_back({"upsample_nearest", true, [img](std::mt19937_64& rng) {
                   const std::size_t factor = pick(rng, 1, 3);
                   return std::make_pair(
                       TensorFn([factor](const std::vector<Tensor>& v) { return upsample_nearest(v[0], factor); }),
                       std::vector<Tensor>{Tensor::randn(img(rng), 1.0, rng)});
                 }});
  ops.push_back({"avg_pool2d", true, [](std::mt19937_64& rng) {
                   const std::size_t w = pick(rng, 1, 2), hw = w * pick(rng, 1, 3);
                   return std::make_pair(
                       TensorFn([w](const std::vector<Tensor>& v) { return avg_pool2d(v[0], w); }),
                       std::vector<Tensor>{Tensor::randn({pick(rng, 1, 2), pick(rng, 1, 3), hw, hw}, 1.0, rng)});
                 }});
  ops.push_back({"adain", false, [](std::mt19937_64& rng) {
                   const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), hw = pick(rng, 2, 4);
                   return std::make_pair(
                       TensorFn([](const std::vector<Tensor>& v) { return adain(v[0], v[1], v[2]); }),
                       std::vector<Tensor>{Tensor::randn({n, c, hw, hw}, 1.0, rng), Tensor::randn({n, c}, 1.0, rng),
                                           Tensor::randn({n, c}, 1.0, rng)});
                 }});
  ops.push_back({"concat_cols", true, [](std::mt19937_64& rng) {
                   const std::size_t n = pick(rng, 1, 4);
                   return std::make_pair(
                       TensorFn([](const std::vector<Tensor>& v) { return concat_cols(v[0], v[1]); }),
                       std::vector<Tensor>{Tensor::randn({n, pick(rng, 1, 4)}, 1.0, rng),
                                           Tensor::randn({n, pick(rng, 1, 4)}, 1.0, rng)});
                 }});
  ops.push_back({"slice_cols", true, [](std::mt19937_64& rng) {
                   const std::size_t cols = pick(rng, 2, 6), b = pick(rng, 0, cols - 1), e = pick(rng, b + 1, cols);
                   return std::make_pair(
                       TensorFn([b, e](const std::vector<Tensor>& v) { return slice_cols(v[0], b, e); }),
                       std::vector<Tensor>{Tensor::randn({pick(rng, 1, 4), cols}, 1.0, rng)});
                 }});
  ops.push_back({"gather_rows", true, [](std::mt19937_64& rng) {
                   const std::size_t rows = pick(rng, 1, 5);
                   std::vector<std::size_t> idx(pick(rng, 1, 6));
                   for (auto& i : idx) i = pick(rng, 0, rows - 1);
                   return std::make_pair(
                       TensorFn([idx](const std::vector<Tensor>& v) { return gather_rows(v[0], idx); }),
                       std::vector<Tensor>{Tensor::randn({rows, pick(rng, 1, 4)}, 1.0, rng)});
                 }});
  ops.push_back({"softmax_cross_entropy", false, [](std::mt19937_64& rng) {
                   const std::size_t n = pick(rng, 1, 5), k = pick(rng, 2, 5);
                   std::vector<std::size_t> labels(n);
                   for (auto& l : labels) l = pick(rng, 0, k - 1);
                   return std::make_pair(
                       TensorFn([labels](const std::vector<Tensor>& v) { return softmax_cross_entropy(v[0], labels); }),
                       std::vector<Tensor>{Tensor::randn({n, k}, 1.0, rng)});
                 }});
  return ops;
}

}  // namespace

double max_grad_rel_error(const TensorFn& f, const std::vector<Tensor>& inputs, std::mt19937_64& rng, double h) {
  std::vector<Tensor> leaves = fresh_leaves(inputs);
  std::vector<double> r;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f(leaves);
    Tensor rt = Tensor::randn(out.shape(), 1.0, rng);
    r.assign(rt.data().begin(), rt.data().end());
    tape.backward(sum(mul(out, rt)));
  }
  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
      std::vector<Tensor> plus, minus;
      for (const auto& in : inputs) {
        plus.push_back(in.detach());
        minus.push_back(in.detach());
      }
      plus[t].data_mut()[i] += h;
      minus[t].data_mut()[i] -= h;
      const double numeric = (project(f(plus), r) - project(f(minus), r)) / (2.0 * h);
      const double analytic = leaves[t].grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

std::vector<GradCaseResult> run_gradient_suite(std::size_t count, std::uint64_t seed) {
  const auto ops = op_cases();
  std::mt19937_64 rng(seed);
  std::vector<GradCaseResult> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& op = ops[i % ops.size()];
    auto [fn, inputs] = op.make(rng);
    out.push_back({op.name, op.linear, max_grad_rel_error(fn, inputs, rng)});
  }
  return out;
}

}  // namespace lord::testing
