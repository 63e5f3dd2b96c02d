// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "lord/model.hpp"
#include "lord/perceptual.hpp"

namespace lord {

namespace {

constexpr std::size_t kHistBins = 8;
constexpr std::size_t kChunk = 64;

double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

struct Run {
  std::vector<double> centroids;
  std::vector<std::size_t> assign;
  std::vector<double> history;
  double inertia = 0.0;
  std::size_t iterations = 0;
};

void seed_plus_plus(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t l, std::mt19937_64& rng,
                    std::vector<double>& centroids) {
  centroids.assign(l * d, 0.0);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  std::copy_n(x.begin() + pick * d, d, centroids.begin());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < l; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(&x[i * d], &centroids[(c - 1) * d], d));
      total += nearest[i];
    }
    if (total <= 0.0) {
      // Every point coincides with a chosen center; any point will do.
      pick = first(rng);
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= nearest[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    }
    std::copy_n(x.begin() + pick * d, d, centroids.begin() + c * d);
  }
}

Run lloyd(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t l, std::size_t max_iter,
          std::mt19937_64& rng) {
  Run run;
  seed_plus_plus(x, n, d, l, rng, run.centroids);
  run.assign.assign(n, l);  // l = unassigned
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < l; ++c) {
        const double dd = sq_dist(&x[i * d], &run.centroids[c * d], d);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      changed = changed || run.assign[i] != best;
      run.assign[i] = best;
      dist[i] = bd;
      inertia += bd;
    }
    run.history.push_back(inertia);
    run.inertia = inertia;
    run.iterations = it + 1;
    if (!changed) break;

    std::vector<double> sums(l * d, 0.0);
    std::vector<std::size_t> counts(l, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[run.assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums[run.assign[i] * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < l; ++c) {
      if (counts[c] == 0) {
        // Reseed at the worst-served point and take it out of the running.
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        std::copy_n(x.begin() + far * d, d, run.centroids.begin() + c * d);
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) run.centroids[c * d + j] = sums[c * d + j] / counts[c];
    }
  }
  return run;
}

}  // namespace

std::size_t style_feature_dim(std::size_t image_channels) {
  return FeatureNet::kFirstLayerChannels * FeatureNet::kFirstLayerChannels + kHistBins * image_channels;
}

Tensor extract_style_features(const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("style features: expected [N x C x H x W], got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), ch = images.dim(1), hw = images.dim(2) * images.dim(3);
  const std::size_t c1 = FeatureNet::kFirstLayerChannels, dim = style_feature_dim(ch);
  const auto& net = feature_net(ch);
  std::vector<double> out(n * dim, 0.0);
  NoGradScope no_grad;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    const std::size_t per = ch * hw;
    Tensor batch({m, ch, images.dim(2), images.dim(3)},
                 std::vector<double>(images.data().begin() + start * per, images.data().begin() + (start + m) * per));
    Tensor f = net.first_layer(batch);
    auto fv = f.data();
    const std::size_t fhw = f.dim(2) * f.dim(3);
    for (std::size_t s = 0; s < m; ++s) {
      double* row = out.data() + (start + s) * dim;
      const double* fs = fv.data() + s * c1 * fhw;
      for (std::size_t a = 0; a < c1; ++a)
        for (std::size_t b = 0; b < c1; ++b) {
          double g = 0.0;
          for (std::size_t p = 0; p < fhw; ++p) g += fs[a * fhw + p] * fs[b * fhw + p];
          row[a * c1 + b] = g / fhw;
        }
      const double* px = images.data().data() + (start + s) * per;
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t p = 0; p < hw; ++p) {
          const auto bin = std::min(kHistBins - 1, static_cast<std::size_t>(px[c * hw + p] * kHistBins));
          row[c1 * c1 + c * kHistBins + bin] += 1.0 / hw;
        }
    }
  }
  return Tensor({n, dim}, std::move(out));
}

KMeansResult kmeans(const std::vector<double>& points, std::size_t n, std::size_t d, std::size_t l,
                    std::uint64_t seed, std::size_t max_iter, std::size_t restarts) {
  if (l == 0) throw std::invalid_argument("kmeans: l must be >= 1");
  if (l > n) throw std::invalid_argument("kmeans: l = " + std::to_string(l) + " exceeds the number of points " +
                                         std::to_string(n));
  if (points.size() != n * d) throw std::invalid_argument("kmeans: point buffer does not match n x d");
  std::mt19937_64 rng(mix_seed(seed, 0xc1a55));
  Run best;
  bool have = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
    Run run = lloyd(points, n, d, l, std::max<std::size_t>(1, max_iter), rng);
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }
  KMeansResult out;
  out.centroids = std::move(best.centroids);
  out.assignments = std::move(best.assign);
  out.inertia = best.inertia;
  out.iterations = best.iterations;
  out.inertia_history = std::move(best.history);
  return out;
}

StyleAssignment style_cluster(const FactorDataset& ds, std::size_t l, std::uint64_t seed) {
  if (l == 0) throw std::invalid_argument("style_cluster: l must be >= 1");
  StyleAssignment a;
  a.l = l;
  a.classes = ds.labels;
  a.styles.assign(ds.size(), 0);
  a.joint.assign(ds.size(), 0);
  std::map<std::size_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < ds.size(); ++i) members[ds.labels[i]].push_back(i);

  for (const auto& [y, idx] : members) {
    std::size_t ly = l;
    if (idx.size() < l) {
      ly = idx.size();
      a.warnings.push_back("class " + std::to_string(y) + " has " + std::to_string(idx.size()) +
                           " samples; using " + std::to_string(ly) + " styles");
    }
    std::vector<std::size_t> assign(idx.size(), 0);
    if (ly > 1) {
      Tensor f = extract_style_features(ds.batch(idx));
      std::vector<double> pts(f.data().begin(), f.data().end());
      KMeansResult km = kmeans(pts, idx.size(), f.dim(1), ly, mix_seed(seed, y));
      assign = km.assignments;
      a.inertia_history.push_back(km.inertia_history);
    } else {
      a.inertia_history.push_back({});
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      a.styles[idx[k]] = assign[k];
      a.joint[idx[k]] = y * l + assign[k];
    }
  }
  return a;
}

double cluster_purity(const StyleAssignment& a, const std::vector<std::size_t>& true_styles) {
  if (true_styles.size() != a.styles.size()) throw std::invalid_argument("cluster_purity: size mismatch");
  // counts[class][cluster][true style]
  std::map<std::size_t, std::map<std::size_t, std::map<std::size_t, std::size_t>>> counts;
  std::map<std::size_t, std::size_t> sizes;
  for (std::size_t i = 0; i < a.styles.size(); ++i) {
    ++counts[a.classes[i]][a.styles[i]][true_styles[i]];
    ++sizes[a.classes[i]];
  }
  double total = 0.0;
  for (const auto& [y, clusters] : counts) {
    std::size_t majority = 0;
    for (const auto& [t, hist] : clusters) {
      std::size_t m = 0;
      for (const auto& [s, c] : hist) m = std::max(m, c);
      majority += m;
    }
    total += static_cast<double>(majority) / sizes[y];
  }
  return total / counts.size();
}

std::string assignments_csv(const StyleAssignment& a) {
  std::ostringstream os;
  os << "index,class,style,joint_label\n";
  for (std::size_t i = 0; i < a.styles.size(); ++i) {
    os << i << ',' << a.classes[i] << ',' << a.styles[i] << ',' << a.joint[i] << '\n';
  }
  return os.str();
}

RasterImage cluster_sheet(const FactorDataset& ds, const StyleAssignment& a, std::size_t y, std::size_t per_row) {
  const std::size_t s = ds.spec.image_size, c = ds.spec.channels;
  RasterImage canvas{per_row * s, a.l * s, c, std::vector<std::uint8_t>(per_row * s * a.l * s * c, 255)};
  std::vector<std::size_t> filled(a.l, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (a.classes[i] != y) continue;
    const std::size_t t = a.styles[i];
    if (filled[t] >= per_row) continue;
    paste(canvas, to_raster(ds.image(i)), filled[t] * s, t * s);
    ++filled[t];
  }
  return canvas;
}

}  // namespace lord
