// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/eval.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lord/perceptual.hpp"
#include "lord/train.hpp"

namespace lord {

namespace {

constexpr std::size_t kChunk = 64;

Tensor rows_of(const Tensor& m, const std::vector<std::size_t>& rows) {
  NoGradScope no_grad;
  return gather_rows(m, rows).detach();
}

Tensor image_at(const Tensor& batch, std::size_t i) {
  const std::size_t per = batch.numel() / batch.dim(0);
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  return Tensor(shape, std::vector<double>(batch.data().begin() + i * per, batch.data().begin() + (i + 1) * per));
}

void accumulate(TransferScore& acc, const Tensor& pred, const Tensor& target) {
  for (double v : perceptual_distance(pred, target)) acc.perceptual += v;
  for (double v : pixel_l1_distance(pred, target)) acc.pixel_l1 += v;
  acc.pairs += pred.dim(0);
}

TransferScore finish(TransferScore acc) {
  if (acc.pairs == 0) throw std::invalid_argument("transfer error: empty pair set");
  acc.perceptual /= acc.pairs;
  acc.pixel_l1 /= acc.pairs;
  return acc;
}

}  // namespace

std::vector<IndexPair> sample_pairs(std::span<const std::size_t> pool, std::size_t count, std::uint64_t seed) {
  if (pool.size() < 2) throw std::invalid_argument("sample_pairs: need at least two samples");
  std::mt19937_64 rng(mix_seed(seed, 0x9a125));
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<IndexPair> out;
  while (out.size() < count) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a != b) out.emplace_back(pool[a], pool[b]);
  }
  return out;
}

std::vector<IndexPair> identity_pairs(std::span<const std::size_t> pool) {
  std::vector<IndexPair> out;
  for (std::size_t i : pool) out.emplace_back(i, i);
  return out;
}

TransferScore score_images(const Tensor& predicted, const Tensor& target) {
  TransferScore acc;
  accumulate(acc, predicted, target);
  return finish(acc);
}

Tensor transfer_targets(const FactorDataset& ds, std::span<const IndexPair> pairs) {
  std::vector<double> out;
  out.reserve(pairs.size() * ds.image_numel());
  for (auto [i, j] : pairs) {
    Tensor t = transfer_target(ds.classes[i], ds.content[j], ds.styles[i], ds.spec);
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor({pairs.size(), ds.spec.channels, ds.spec.image_size, ds.spec.image_size}, std::move(out));
}

TransferScore transfer_error(const Generator& gen, const Encoder& class_enc, const Encoder& content_enc,
                             const FactorDataset& ds, std::span<const IndexPair> pairs) {
  TransferScore acc;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const auto chunk = pairs.subspan(start, std::min(kChunk, pairs.size() - start));
    std::vector<std::size_t> src_class, src_content;
    for (auto [i, j] : chunk) {
      src_class.push_back(i);
      src_content.push_back(j);
    }
    Tensor pred = infer_transfer(gen, class_enc, content_enc, ds.batch(src_class), ds.batch(src_content));
    accumulate(acc, pred, transfer_targets(ds, chunk));
  }
  return finish(acc);
}

TransferScore transfer_error_from_codes(const Generator& gen, const Tensor& class_codes, const Tensor& content_codes,
                                        const std::map<std::size_t, std::size_t>& slot, const FactorDataset& ds,
                                        std::span<const IndexPair> pairs) {
  TransferScore acc;
  NoGradScope no_grad;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const auto chunk = pairs.subspan(start, std::min(kChunk, pairs.size() - start));
    std::vector<std::size_t> ri, rj;
    for (auto [i, j] : chunk) {
      ri.push_back(slot.at(i));
      rj.push_back(slot.at(j));
    }
    Tensor pred = gen.forward(rows_of(class_codes, ri), rows_of(content_codes, rj));
    accumulate(acc, pred, transfer_targets(ds, chunk));
  }
  return finish(acc);
}

TransferScore no_skill_baseline(const FactorDataset& ds, std::span<const IndexPair> pairs) {
  TransferScore acc;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    const auto chunk = pairs.subspan(start, std::min(kChunk, pairs.size() - start));
    std::vector<std::size_t> is, js;
    for (auto [i, j] : chunk) {
      is.push_back(i);
      js.push_back(j);
    }
    accumulate(acc, ds.batch(is), ds.batch(js));
  }
  return finish(acc);
}

// ---------------------------------------------------------------------------

KlCollapseStats kl_collapse_stats(const Encoder& content_enc, const FactorDataset& ds,
                                  std::span<const std::size_t> indices) {
  if (!content_enc.variational()) {
    throw std::invalid_argument("KL diagnostics need a KL-regularized model; this content encoder has no posterior");
  }
  if (indices.empty()) throw std::invalid_argument("KL diagnostics: no samples");
  const std::size_t d = content_enc.out_dim();
  KlCollapseStats s;
  s.mean_mu.assign(d, 0.0);
  s.mean_sigma.assign(d, 0.0);
  NoGradScope no_grad;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto chunk = indices.subspan(start, std::min(kChunk, indices.size() - start));
    Tensor out = content_enc.forward(ds.batch(chunk));
    auto v = out.data();
    for (std::size_t r = 0; r < chunk.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) {
        s.mean_mu[j] += v[r * 2 * d + j];
        s.mean_sigma[j] += std::exp(0.5 * v[r * 2 * d + d + j]);
      }
  }
  for (std::size_t j = 0; j < d; ++j) {
    s.mean_mu[j] /= indices.size();
    s.mean_sigma[j] /= indices.size();
    if (std::abs(s.mean_mu[j]) < 0.1 && s.mean_sigma[j] >= 0.9 && s.mean_sigma[j] <= 1.1) ++s.collapsed;
    if (s.mean_sigma[j] < 0.5) ++s.escaped;
  }
  s.collapse_fraction = static_cast<double>(s.collapsed) / d;
  return s;
}

std::string kl_stats_csv(const KlCollapseStats& stats) {
  std::ostringstream os;
  os.precision(17);
  os << "dim,mean_mu,mean_sigma,collapsed\n";
  for (std::size_t j = 0; j < stats.mean_mu.size(); ++j) {
    const bool c = std::abs(stats.mean_mu[j]) < 0.1 && stats.mean_sigma[j] >= 0.9 && stats.mean_sigma[j] <= 1.1;
    os << j << ',' << stats.mean_mu[j] << ',' << stats.mean_sigma[j] << ',' << (c ? 1 : 0) << '\n';
  }
  return os.str();
}

std::vector<std::pair<std::size_t, double>> read_probe_curve(const std::string& run_dir) {
  const auto path = std::filesystem::path(run_dir) / "log.jsonl";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::pair<std::size_t, double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const TrainRecord r = TrainRecord::from_json(line);
    if (r.stage == 1 && r.probe_acc_class_from_content) out.emplace_back(r.epoch, *r.probe_acc_class_from_content);
  }
  if (out.empty()) throw std::runtime_error(path.string() + " has no probe entries (train with probe_every > 0)");
  return out;
}

std::string curves_csv(const std::map<std::string, std::vector<std::pair<std::size_t, double>>>& curves) {
  std::set<std::size_t> epochs;
  for (const auto& [name, c] : curves)
    for (auto [e, a] : c) epochs.insert(e);
  std::ostringstream os;
  os.precision(17);
  os << "epoch";
  for (const auto& [name, c] : curves) os << ',' << name;
  os << '\n';
  for (std::size_t e : epochs) {
    os << e;
    for (const auto& [name, c] : curves) {
      os << ',';
      for (auto [ce, a] : c)
        if (ce == e) os << a;
    }
    os << '\n';
  }
  return os.str();
}

RasterImage transfer_grid(const Generator& gen, const Encoder& class_enc, const Encoder& content_enc,
                          const Tensor& class_images, const Tensor& content_images) {
  if (class_images.rank() != 4 || content_images.rank() != 4) throw ShapeError("transfer_grid: expected image batches");
  const std::size_t r = class_images.dim(0), s = content_images.dim(0);
  const std::size_t c = class_images.dim(1), h = class_images.dim(2), w = class_images.dim(3);
  RasterImage canvas{(s + 1) * w, (r + 1) * h, c, std::vector<std::uint8_t>((s + 1) * w * (r + 1) * h * c, 255)};
  for (std::size_t j = 0; j < s; ++j) paste(canvas, to_raster(image_at(content_images, j)), (j + 1) * w, 0);
  for (std::size_t i = 0; i < r; ++i) {
    paste(canvas, to_raster(image_at(class_images, i)), 0, (i + 1) * h);
    // Row i: the same class source against every content source.
    std::vector<double> rep;
    const auto src = image_at(class_images, i);
    for (std::size_t j = 0; j < s; ++j) rep.insert(rep.end(), src.data().begin(), src.data().end());
    Tensor cls({s, c, h, w}, std::move(rep));
    Tensor out = infer_transfer(gen, class_enc, content_enc, cls, content_images);
    for (std::size_t j = 0; j < s; ++j) paste(canvas, to_raster(image_at(out, j)), (j + 1) * w, (i + 1) * h);
  }
  return canvas;
}

}  // namespace lord
