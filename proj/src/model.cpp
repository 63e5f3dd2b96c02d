// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/model.hpp"

#include <cmath>

namespace lord {

namespace {

constexpr double kLeak = 0.2;

Tensor as_batch_row(std::span<const double> v) {
  return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end()));
}

Tensor as_batch_image(const Tensor& image) {
  if (image.rank() == 4) return image;
  if (image.rank() != 3) throw ShapeError("expected a [C x H x W] image, got " + shape_str(image.shape()));
  Shape s{1, image.dim(0), image.dim(1), image.dim(2)};
  return Tensor(s, std::vector<double>(image.data().begin(), image.data().end()));
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  // splitmix64 finalizer chained over the inputs
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  h = mix(h ^ d);
  return h;
}

Tensor copy_param(const Tensor& t) {
  Tensor out = t.detach();
  if (t.requires_grad()) out.set_requires_grad();
  return out;
}

namespace {

void deep_copy(std::vector<Linear>& layers) {
  for (auto& l : layers) {
    l.weight = copy_param(l.weight);
    l.bias = copy_param(l.bias);
  }
}

void deep_copy(std::vector<Conv>& layers) {
  for (auto& l : layers) {
    l.weight = copy_param(l.weight);
    l.bias = copy_param(l.bias);
  }
}

void load_named(const std::vector<NamedParam>& params, const ArrayMap& arrays) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    assign_from(t, require_array(arrays, p.name));
  }
}

}  // namespace

Linear Linear::kaiming(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain) {
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(in));
  return Linear{Tensor::randn({out, in}, stddev, rng), Tensor({out}, 0.0)};
}

Conv Conv::kaiming(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                   std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  return Conv{Tensor::randn({out, in, kernel, kernel}, stddev, rng), Tensor({out}, 0.0), stride,
              kernel / 2};
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(const RunConfig& cfg, std::mt19937_64& rng)
    : d_class_(cfg.d_class),
      d_content_(cfg.d_content),
      channels_(cfg.image_channels),
      size_(cfg.image_size),
      seed_channels_(cfg.gen_seed_channels),
      seed_size_(cfg.image_size / 16) {
  cfg.validate();
  const std::size_t h = cfg.gen_fc_hidden;
  fc_.push_back(Linear::kaiming(d_class_ + d_content_, h, rng));
  fc_.push_back(Linear::kaiming(h, h, rng));
  fc_.push_back(Linear::kaiming(h, seed_channels_ * seed_size_ * seed_size_, rng));

  std::size_t in = seed_channels_;
  for (std::size_t i = 0; i < 5; ++i) {
    conv_.push_back(Conv::kaiming(in, cfg.gen_widths[i], 3, 1, rng));
    in = cfg.gen_widths[i];
  }
  conv_.push_back(Conv::kaiming(in, channels_, 3, 1, rng));
  // The output conv feeds a sigmoid; start it small so initial images sit
  // near mid-gray instead of saturating.
  for (double& w : conv_.back().weight.data_mut()) w *= 0.1;

  for (std::size_t i = 0; i < kModulatedLayers; ++i) {
    const std::size_t width = cfg.gen_widths[i];
    Linear affine = Linear::kaiming(d_class_, 2 * width, rng, std::sqrt(0.5));
    auto b = affine.bias.data_mut();
    for (std::size_t c = 0; c < width; ++c) b[c] = 1.0;  // gamma starts at 1
    adain_affine_.push_back(std::move(affine));
  }
}

Tensor Generator::forward(const Tensor& class_codes, const Tensor& content_codes,
                          GeneratorTrace* trace) const {
  if (class_codes.rank() != 2 || class_codes.dim(1) != d_class_) {
    throw ShapeError("generator: class codes must be [N x " + std::to_string(d_class_) + "], got " +
                     shape_str(class_codes.shape()));
  }
  if (content_codes.rank() != 2 || content_codes.dim(1) != d_content_ ||
      content_codes.dim(0) != class_codes.dim(0)) {
    throw ShapeError("generator: content codes must be [N x " + std::to_string(d_content_) + "], got " +
                     shape_str(content_codes.shape()));
  }
  const std::size_t n = class_codes.dim(0);
  Tensor h = concat_cols(class_codes, content_codes);
  for (const auto& layer : fc_) h = leaky_relu(layer(h), kLeak);
  h = reshape(h, {n, seed_channels_, seed_size_, seed_size_});
  if (trace) {
    trace->seed = h;
    trace->adain_gamma.clear();
    trace->adain_beta.clear();
  }
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    if (i < kModulatedLayers) {
      h = conv_[i](upsample_nearest(h, 2));
      const std::size_t width = conv_[i].weight.dim(0);
      Tensor mod = adain_affine_[i](class_codes);
      Tensor gamma = slice_cols(mod, 0, width);
      Tensor beta = slice_cols(mod, width, 2 * width);
      if (trace) {
        trace->adain_gamma.push_back(gamma);
        trace->adain_beta.push_back(beta);
      }
      h = leaky_relu(adain(h, gamma, beta, kAdainEps), kLeak);
    } else if (i + 1 < conv_.size()) {
      h = leaky_relu(conv_[i](h), kLeak);
    } else {
      h = sigmoid(conv_[i](h));
    }
  }
  return h;
}

std::vector<NamedParam> Generator::parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    out.push_back({"gen.fc" + std::to_string(i) + ".w", fc_[i].weight});
    out.push_back({"gen.fc" + std::to_string(i) + ".b", fc_[i].bias});
  }
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    out.push_back({"gen.conv" + std::to_string(i) + ".w", conv_[i].weight});
    out.push_back({"gen.conv" + std::to_string(i) + ".b", conv_[i].bias});
  }
  for (std::size_t i = 0; i < adain_affine_.size(); ++i) {
    out.push_back({"gen.adain" + std::to_string(i) + ".w", adain_affine_[i].weight});
    out.push_back({"gen.adain" + std::to_string(i) + ".b", adain_affine_[i].bias});
  }
  return out;
}

std::vector<Tensor> Generator::tensors() const {
  std::vector<Tensor> out;
  for (auto& p : parameters()) out.push_back(p.tensor);
  return out;
}

Generator Generator::clone() const {
  Generator out = *this;
  deep_copy(out.fc_);
  deep_copy(out.adain_affine_);
  deep_copy(out.conv_);
  return out;
}

void Generator::load(const ArrayMap& arrays) { load_named(parameters(), arrays); }

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const RunConfig& cfg, std::size_t out_dim, bool variational, std::mt19937_64& rng)
    : out_dim_(out_dim), variational_(variational) {
  cfg.validate();
  std::size_t in = cfg.image_channels;
  for (std::size_t i = 0; i < 5; ++i) {
    conv_.push_back(Conv::kaiming(in, cfg.enc_widths[i], 3, i < 4 ? 2 : 1, rng));
    in = cfg.enc_widths[i];
  }
  const std::size_t spatial = cfg.image_size / 16;
  flat_dim_ = in * spatial * spatial;
  const std::size_t h = cfg.enc_fc_hidden;
  fc_.push_back(Linear::kaiming(flat_dim_, h, rng));
  fc_.push_back(Linear::kaiming(h, h, rng));
  fc_.push_back(Linear::kaiming(h, variational ? 2 * out_dim : out_dim, rng, std::sqrt(0.5)));
  if (variational) {
    auto w = fc_.back().weight.data_mut();
    for (std::size_t r = 0; r < 2 * out_dim; ++r)
      for (std::size_t c = 0; c < h; ++c) w[r * h + c] *= (r < out_dim ? 0.1 : 0.0);
  }
}

Tensor Encoder::forward(const Tensor& images) const {
  if (images.rank() != 4) throw ShapeError("encoder: expected [N x C x H x W], got " + shape_str(images.shape()));
  if (images.dim(1) != conv_.front().weight.dim(1)) throw ShapeError("encoder: channel mismatch");
  const std::size_t n = images.dim(0);
  Tensor h = images;
  for (const auto& layer : conv_) h = leaky_relu(layer(h), kLeak);
  if (h.numel() != n * flat_dim_) throw ShapeError("encoder: image size does not match configuration");
  h = reshape(h, {n, flat_dim_});
  h = leaky_relu(fc_[0](h), kLeak);
  h = leaky_relu(fc_[1](h), kLeak);
  return fc_[2](h);
}

std::vector<NamedParam> Encoder::parameters(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i) + ".w", conv_[i].weight});
    out.push_back({prefix + ".conv" + std::to_string(i) + ".b", conv_[i].bias});
  }
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    out.push_back({prefix + ".fc" + std::to_string(i) + ".w", fc_[i].weight});
    out.push_back({prefix + ".fc" + std::to_string(i) + ".b", fc_[i].bias});
  }
  return out;
}

std::vector<Tensor> Encoder::tensors() const {
  std::vector<Tensor> out;
  for (auto& p : parameters("")) out.push_back(p.tensor);
  return out;
}

Encoder Encoder::clone() const {
  Encoder out = *this;
  deep_copy(out.conv_);
  deep_copy(out.fc_);
  return out;
}

void Encoder::load(const ArrayMap& arrays, const std::string& prefix) {
  load_named(parameters(prefix), arrays);
}

// ---------------------------------------------------------------------------

LatentTables init_latents(std::size_t k, std::size_t n, const RunConfig& cfg, std::uint64_t seed) {
  if (k == 0 || n == 0) throw std::invalid_argument("init_latents: k and n must be >= 1");
  std::mt19937_64 rng(mix_seed(seed, 0x1a7e47));
  LatentTables t;
  t.class_table = Tensor::randn({k, cfg.d_class}, cfg.init_std, rng);
  t.content_table = Tensor::randn({n, cfg.d_content}, cfg.init_std, rng);
  return t;
}

Tensor generate(const Generator& gen, std::span<const double> class_code,
                std::span<const double> content_code) {
  Tensor out = gen.forward(as_batch_row(class_code), as_batch_row(content_code));
  return reshape(out, gen.image_shape());
}

std::vector<double> encode_class(const Encoder& enc, const Tensor& image) {
  Tensor out = enc.forward(as_batch_image(image));
  return std::vector<double>(out.data().begin(), out.data().begin() + enc.out_dim());
}

std::vector<double> encode_content(const Encoder& enc, const Tensor& image) {
  return encode_class(enc, image);
}

}  // namespace lord
