// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Generator, encoders and latent tables.
//
// Generator: [class ‖ content] -> 3 FC layers -> seed map -> 6 conv layers.
// The first four convs are preceded by x2 nearest upsampling and followed by
// AdaIN whose per-channel scale/shift are affine functions of the class code
// only. Output passes through a sigmoid into [0, 1].

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lord/config.hpp"
#include "lord/serialize.hpp"
#include "lord/tensor.hpp"

namespace lord {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Fresh storage with the same values; used when a network is copied.
Tensor copy_param(const Tensor& t);

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  static Linear kaiming(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct Conv {
  Tensor weight;  // [F x C x k x k]
  Tensor bias;    // [F]
  std::size_t stride = 1;
  std::size_t pad = 1;

  static Conv kaiming(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                      std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
};

// Intermediate activations captured for diagnostics.
struct GeneratorTrace {
  Tensor seed;                     // FC output, [N x seed_ch x s x s]
  std::vector<Tensor> adain_gamma;  // per modulated layer, [N x C]
  std::vector<Tensor> adain_beta;
};

class Generator {
 public:
  static constexpr std::size_t kModulatedLayers = 4;
  static constexpr double kAdainEps = 1e-5;

  Generator(const RunConfig& cfg, std::mt19937_64& rng);

  // class_codes [N x d_class], content_codes [N x d_content] -> [N x C x H x W]
  Tensor forward(const Tensor& class_codes, const Tensor& content_codes,
                 GeneratorTrace* trace = nullptr) const;

  std::vector<NamedParam> parameters() const;
  std::vector<Tensor> tensors() const;
  // Independent copy: parameters share no storage with the original.
  Generator clone() const;
  // Overwrites every parameter with the array of the same name.
  void load(const ArrayMap& arrays);
  std::size_t d_class() const { return d_class_; }
  std::size_t d_content() const { return d_content_; }
  Shape image_shape() const { return {channels_, size_, size_}; }

 private:
  std::size_t d_class_, d_content_, channels_, size_, seed_channels_, seed_size_;
  std::vector<Linear> fc_;
  std::vector<Linear> adain_affine_;
  std::vector<Conv> conv_;
};

// 5 conv layers (first four stride 2) followed by 3 FC layers.
class Encoder {
 public:
  // With `variational`, the output is [mu ‖ logvar] of width 2*out_dim; the
  // logvar head starts at zero and the mu head at a small scale, so an
  // untrained encoder reports roughly N(0, 1) posteriors.
  Encoder(const RunConfig& cfg, std::size_t out_dim, bool variational, std::mt19937_64& rng);

  Tensor forward(const Tensor& images) const;

  std::size_t out_dim() const { return out_dim_; }
  bool variational() const { return variational_; }
  std::vector<NamedParam> parameters(const std::string& prefix) const;
  std::vector<Tensor> tensors() const;
  Encoder clone() const;
  void load(const ArrayMap& arrays, const std::string& prefix);

 private:
  std::size_t out_dim_;
  bool variational_;
  std::size_t flat_dim_;
  std::vector<Conv> conv_;
  std::vector<Linear> fc_;
};

// Per-class embeddings (shared by every sample of the class) and per-sample
// content embeddings, both optimized directly.
struct LatentTables {
  Tensor class_table;    // [k x d_class]
  Tensor content_table;  // [n x d_content]
};

// Rows drawn i.i.d. from N(0, init_std^2).
LatentTables init_latents(std::size_t k, std::size_t n, const RunConfig& cfg, std::uint64_t seed);

// Single-sample convenience: returns a [C x H x W] image.
Tensor generate(const Generator& gen, std::span<const double> class_code,
                std::span<const double> content_code);

// Code vectors for one image ([C x H x W] or [1 x C x H x W]).
std::vector<double> encode_class(const Encoder& enc, const Tensor& image);
std::vector<double> encode_content(const Encoder& enc, const Tensor& image);

// Deterministic seed derivation for independent random streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0, std::uint64_t d = 0);

}  // namespace lord
