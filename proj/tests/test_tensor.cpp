// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "lord/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace lord;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor leaf(Shape shape, std::vector<double> v) {
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

// Direct transliteration of zero-padded cross-correlation.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor out({n, f, oh, ow});
  auto o = out.data_mut();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t fo = 0; fo < f; ++fo)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.at(fo);
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long yi = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long xj = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (yi < 0 || xj < 0 || yi >= static_cast<long>(h) || xj >= static_cast<long>(wd)) continue;
                acc += x.at(((s * c + ci) * h + yi) * wd + xj) * w.at(((fo * c + ci) * k + ki) * k + kj);
              }
          o[((s * f + fo) * oh + i) * ow + j] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("elementwise examples") {
  CHECK(values(add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4}))) == std::vector<double>{4, 6});
  CHECK(values(mul(Tensor({2}, {2, 3}), 0.0)) == std::vector<double>{0, 0});

  Tensor x = leaf({1}, {-1.5});
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor y = square(x);
    CHECK(y.item() == doctest::Approx(2.25));
    tape.backward(y);
  }
  CHECK(x.grad()[0] == doctest::Approx(-3.0).epsilon(1e-12));
  const double h = 1e-5;
  const double fd = ((-1.5 + h) * (-1.5 + h) - (-1.5 - h) * (-1.5 - h)) / (2 * h);
  CHECK(std::abs(x.grad()[0] - fd) < 1e-8);
}

TEST_CASE("shape mismatch is rejected") {
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST_CASE("matmul examples") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(values(matmul(eye, Tensor({2, 2}, {1, 2, 3, 4}))) == std::vector<double>{1, 2, 3, 4});
  CHECK(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item() == 11.0);

  std::mt19937_64 rng(3);
  Tensor a = Tensor::randn({3, 4}, 1.0, rng), b = Tensor::randn({4, 2}, 1.0, rng);
  // Gradient of sum(a*b): exact under central differences, so a tight bound applies.
  auto fn = [](const std::vector<Tensor>& v) { return reshape(sum(matmul(v[0], v[1])), {1}); };
  CHECK(testing::max_grad_rel_error(fn, {a, b}, rng) <= 1e-6);
}

TEST_CASE("conv2d examples") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(values(conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 0)) == values(x));
  CHECK(conv2d(Tensor({1, 1, 2, 2}, 1.0), Tensor({1, 1, 2, 2}, 1.0), Tensor({1}), 1, 0).item() == 4.0);
  CHECK_THROWS(conv2d(x, Tensor({1, 1, 3, 3}), Tensor({1}), 0, 0));
  CHECK_THROWS(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 0));
}

TEST_CASE("conv2d matches the naive loop oracle") {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1, 2}) {
    for (std::size_t pad : {0, 1}) {
      Tensor x = Tensor::randn({2, 3, 8, 8}, 1.0, rng).set_requires_grad();
      Tensor w = Tensor::randn({4, 3, 3, 3}, 1.0, rng).set_requires_grad();
      Tensor b = Tensor::randn({4}, 1.0, rng).set_requires_grad();
      Tape tape;
      Tensor y;
      Tensor r;
      {
        TapeScope scope(tape);
        y = conv2d(x, w, b, stride, pad);
        r = Tensor::randn(y.shape(), 1.0, rng);
        tape.backward(sum(mul(y, r)));
      }
      Tensor ref = naive_conv(x, w, b, stride, pad);
      REQUIRE(ref.shape() == y.shape());
      double err = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) err = std::max(err, std::abs(y.at(i) - ref.at(i)));
      CHECK(err <= 1e-9);

      // Oracle gradients: the projection is linear in each argument, so the
      // derivative along a unit vector is one naive conv difference.
      auto proj = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
        Tensor o = naive_conv(xx, ww, bb, stride, pad);
        double s = 0.0;
        for (std::size_t i = 0; i < o.numel(); ++i) s += o.at(i) * r.at(i);
        return s;
      };
      const double base = proj(x.detach(), w.detach(), b.detach());
      double gerr = 0.0;
      for (std::size_t i = 0; i < w.numel(); ++i) {
        Tensor w1 = w.detach();
        w1.data_mut()[i] += 1.0;
        gerr = std::max(gerr, std::abs(proj(x.detach(), w1, b.detach()) - base - w.grad()[i]));
      }
      for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor x1 = x.detach();
        x1.data_mut()[i] += 1.0;
        gerr = std::max(gerr, std::abs(proj(x1, w.detach(), b.detach()) - base - x.grad()[i]));
      }
      for (std::size_t i = 0; i < b.numel(); ++i) {
        Tensor b1 = b.detach();
        b1.data_mut()[i] += 1.0;
        gerr = std::max(gerr, std::abs(proj(x.detach(), w.detach(), b1) - base - b.grad()[i]));
      }
      CHECK(gerr <= 1e-9);
    }
  }
}

TEST_CASE("upsample_nearest examples") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(values(upsample_nearest(x, 1)) == values(x));
  CHECK(values(upsample_nearest(x, 2)) ==
        std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  Tensor l = leaf({1, 1, 2, 2}, {1, 2, 3, 4});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(upsample_nearest(l, 2)));
  }
  CHECK(values(Tensor({4}, {l.grad().begin(), l.grad().end()})) == std::vector<double>{4, 4, 4, 4});
}

TEST_CASE("activation examples") {
  CHECK(values(leaky_relu(Tensor({2}, {-1, 2}), 0.2)) == std::vector<double>{-0.2, 2});
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor x = leaf({1}, {0.0});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(tanh(x));
  }
  const double h = 1e-5;
  const double fd = (std::tanh(h) - std::tanh(-h)) / (2 * h);
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(x.grad()[0] - fd) < 1e-9);
}

TEST_CASE("adain examples") {
  // Already standardized per channel: mean 0, population variance 1.
  Tensor x({1, 1, 2, 2}, {1, -1, 1, -1});
  Tensor y = adain(x, Tensor({1, 1}, 1.0), Tensor({1, 1}, 0.0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)).epsilon(1e-5));
  Tensor c = adain(Tensor({1, 1, 3, 3}, 2.5), Tensor({1, 1}, 1.0), Tensor({1, 1}, 5.0));
  for (double v : c.data()) CHECK(v == doctest::Approx(5.0));

  std::mt19937_64 rng(5);
  auto fn = [](const std::vector<Tensor>& v) { return adain(v[0], v[1], v[2]); };
  CHECK(testing::max_grad_rel_error(
            fn, {Tensor::randn({2, 3, 4, 4}, 1.0, rng), Tensor::randn({2, 3}, 1.0, rng), Tensor::randn({2, 3}, 1.0, rng)},
            rng) <= 1e-4);
}

TEST_CASE("backward examples") {
  Tensor x = leaf({1}, {3.0});
  Tensor unused = leaf({2}, {1.0, 1.0});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(x);
  }
  CHECK(x.grad()[0] == 1.0);
  CHECK(unused.grad()[0] == 0.0);
  CHECK(unused.grad()[1] == 0.0);

  Tensor v = leaf({2}, {1, 2});
  Tape t2;
  {
    TapeScope scope(t2);
    t2.backward(sum(mul(v, v)));
    CHECK_THROWS(t2.backward(mul(v, v)));
  }
  CHECK(v.grad()[0] == 2.0);
  CHECK(v.grad()[1] == 4.0);
}

TEST_CASE("backward is linear in the loss scale") {
  std::mt19937_64 rng(9);
  Tensor base = Tensor::randn({3, 4}, 1.0, rng);
  auto grads = [&](double scale) {
    Tensor x = base.detach().set_requires_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(mul(sum(tanh(square(x))), scale));
    }
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  auto g1 = grads(1.0), g3 = grads(-2.5);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g3[i] == doctest::Approx(-2.5 * g1[i]).epsilon(1e-12));
}

TEST_CASE("determinism: equal seeds give bit-identical outputs and grads") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor x = Tensor::randn({2, 3, 6, 6}, 1.0, rng).set_requires_grad();
    Tensor w = Tensor::randn({4, 3, 3, 3}, 1.0, rng).set_requires_grad();
    Tape tape;
    std::vector<double> out;
    {
      TapeScope scope(tape);
      Tensor y = sigmoid(conv2d(x, w, Tensor({4}), 2, 1));
      out.assign(y.data().begin(), y.data().end());
      tape.backward(sum(y));
    }
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite values are reported") {
  CHECK_THROWS_AS(exp(Tensor::scalar(1e6)), NumericError);
}

TEST_CASE("randomized finite-difference suite") {
  for (const auto& r : testing::run_gradient_suite(130, 2026)) {
    INFO(r.op);
    CHECK(r.rel_error <= (r.linear ? 1e-6 : 1e-3));
  }
}
