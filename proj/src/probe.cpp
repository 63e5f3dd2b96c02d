// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/probe.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "lord/model.hpp"

namespace lord {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

Mat to_mat(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("expected a [N x d] code matrix, got " + shape_str(t.shape()));
  return Eigen::Map<const Mat>(t.data().data(), t.dim(0), t.dim(1));
}

Mat gather(const Mat& m, const std::vector<std::size_t>& rows) {
  Mat out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

// Standardizes both matrices with the column statistics of `train`.
void standardize(Mat& train, Mat& test) {
  const Eigen::RowVectorXd mu = train.colwise().mean();
  Eigen::RowVectorXd sd = ((train.rowwise() - mu).array().square().colwise().sum() /
                           std::max<double>(1.0, train.rows())).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (sd[j] < 1e-12) sd[j] = 1.0;
  train = (train.rowwise() - mu).array().rowwise() / sd.array();
  test = (test.rowwise() - mu).array().rowwise() / sd.array();
}

struct AdamMat {
  Mat m, v;
  void init(Eigen::Index r, Eigen::Index c) {
    m = Mat::Zero(r, c);
    v = Mat::Zero(r, c);
  }
  void step(Mat& p, const Mat& g, double lr, double bc1, double bc2) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + 1e-8);
  }
};

// Trains the MLP on (x, y) and returns the number of correct test predictions.
std::size_t fit_and_score(Mat x, const std::vector<std::size_t>& y, Mat xt, const std::vector<std::size_t>& yt,
                          std::size_t k, const ProbeOptions& opt, std::mt19937_64& rng) {
  standardize(x, xt);
  const Eigen::Index d = x.cols(), h = static_cast<Eigen::Index>(opt.hidden), kk = static_cast<Eigen::Index>(k);
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat w1(h, d), w2(kk, h), b1 = Mat::Zero(1, h), b2 = Mat::Zero(1, kk);
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = nd(rng) * std::sqrt(2.0 / d);
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = nd(rng) * std::sqrt(1.0 / h);
  AdamMat a1, a2, ab1, ab2;
  a1.init(h, d);
  a2.init(kk, h);
  ab1.init(1, h);
  ab2.init(1, kk);

  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t t = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t n = std::min(opt.batch_size, order.size() - start);
      Mat xb(n, d);
      for (std::size_t i = 0; i < n; ++i) xb.row(i) = x.row(order[start + i]);
      Mat hpre = (xb * w1.transpose()).rowwise() + b1.row(0);
      Mat hact = hpre.cwiseMax(0.0);
      Mat logits = (hact * w2.transpose()).rowwise() + b2.row(0);
      // softmax cross-entropy gradient, averaged over the batch
      Mat g = logits;
      for (std::size_t i = 0; i < n; ++i) {
        const double mx = g.row(i).maxCoeff();
        g.row(i) = (g.row(i).array() - mx).exp();
        g.row(i) /= g.row(i).sum();
        g(i, y[order[start + i]]) -= 1.0;
      }
      g /= static_cast<double>(n);
      Mat gw2 = g.transpose() * hact;
      Mat gb2 = g.colwise().sum();
      Mat gh = (g * w2).cwiseProduct((hpre.array() > 0.0).cast<double>().matrix());
      Mat gw1 = gh.transpose() * xb;
      Mat gb1 = gh.colwise().sum();
      ++t;
      const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
      a1.step(w1, gw1, opt.lr, bc1, bc2);
      a2.step(w2, gw2, opt.lr, bc1, bc2);
      ab1.step(b1, gb1, opt.lr, bc1, bc2);
      ab2.step(b2, gb2, opt.lr, bc1, bc2);
    }
  }
  Mat logits = ((xt * w1.transpose()).rowwise() + b1.row(0)).cwiseMax(0.0) * w2.transpose();
  logits.rowwise() += b2.row(0);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    correct += static_cast<std::size_t>(arg) == yt[i];
  }
  return correct;
}

}  // namespace

std::string ProbeOptions::protocol() const {
  std::ostringstream os;
  os << "mlp(hidden=" << hidden << ",relu) adam(lr=" << lr << ") epochs=" << epochs << " batch=" << batch_size
     << " split=" << train_fraction << " folds=" << folds << " seed=" << seed << " standardize=train";
  return os.str();
}

ProbeResult probe_classifier(const Tensor& codes, std::span<const std::size_t> labels, const ProbeOptions& opt) {
  const Mat all = to_mat(codes);
  if (static_cast<std::size_t>(all.rows()) != labels.size()) throw std::invalid_argument("probe: codes/labels size mismatch");
  // Compact label ids so the classifier head has one output per present label.
  std::set<std::size_t> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw std::invalid_argument("probe: need at least two distinct labels");
  std::vector<std::size_t> remap(*distinct.rbegin() + 1, 0);
  std::size_t next = 0;
  for (std::size_t l : distinct) remap[l] = next++;
  std::vector<std::size_t> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) y[i] = remap[labels[i]];

  if (opt.train_fraction <= 0.0 || opt.train_fraction >= 1.0) throw std::invalid_argument("probe: bad train fraction");
  std::mt19937_64 rng(mix_seed(opt.seed, 0x9a0be));
  std::vector<std::size_t> perm(y.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround((1.0 - opt.train_fraction) * y.size()));
  if (n_test == 0 || n_test >= y.size()) throw std::invalid_argument("probe: too few samples for a split");

  std::size_t correct = 0, tested = 0;
  const std::size_t folds = std::max<std::size_t>(1, opt.folds);
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n_test;
    if (lo >= y.size()) break;
    const std::size_t hi = std::min(y.size(), lo + n_test);
    std::vector<std::size_t> tr, te, ytr, yte;
    for (std::size_t p = 0; p < perm.size(); ++p) {
      if (p >= lo && p < hi) {
        te.push_back(perm[p]);
        yte.push_back(y[perm[p]]);
      } else {
        tr.push_back(perm[p]);
        ytr.push_back(y[perm[p]]);
      }
    }
    // fit_and_score indexes labels by row of the gathered matrix
    correct += fit_and_score(gather(all, tr), ytr, gather(all, te), yte, distinct.size(), opt, rng);
    tested += te.size();
  }
  ProbeResult r;
  r.accuracy = static_cast<double>(correct) / tested;
  r.num_labels = distinct.size();
  r.chance = 1.0 / distinct.size();
  r.num_tested = tested;
  r.protocol = opt.protocol();
  return r;
}

RidgeResult ridge_regression(const Tensor& codes, const Tensor& targets, double penalty, double train_fraction,
                             std::uint64_t seed) {
  const Mat x = to_mat(codes), y = to_mat(targets);
  if (x.rows() != y.rows()) throw std::invalid_argument("ridge: codes/targets size mismatch");
  std::mt19937_64 rng(mix_seed(seed, 0x41d6e));
  std::vector<std::size_t> perm(x.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * x.rows()));
  if (n_train < 1 || n_train >= perm.size()) throw std::invalid_argument("ridge: too few samples for a split");
  std::vector<std::size_t> tr(perm.begin(), perm.begin() + n_train), te(perm.begin() + n_train, perm.end());
  Mat xtr = gather(x, tr), xte = gather(x, te), ytr = gather(y, tr), yte = gather(y, te);

  const Eigen::RowVectorXd xm = xtr.colwise().mean(), ym = ytr.colwise().mean();
  Mat xc = xtr.rowwise() - xm;
  Mat yc = ytr.rowwise() - ym;
  Mat gram = xc.transpose() * xc;
  gram.diagonal().array() += penalty;
  Mat w = gram.ldlt().solve(xc.transpose() * yc);
  Mat pred = ((xte.rowwise() - xm) * w).rowwise() + ym;

  RidgeResult r;
  r.rmse = std::sqrt((pred - yte).array().square().mean());
  r.target_std = std::sqrt((yte.rowwise() - ym).array().square().mean());
  std::ostringstream os;
  os << "ridge(penalty=" << penalty << ") split=" << train_fraction << " seed=" << seed;
  r.protocol = os.str();
  return r;
}

}  // namespace lord
