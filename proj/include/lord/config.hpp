// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` configuration files with typed parsing. Unknown keys are
// rejected so that typos fail fast.

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lord {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Parsed `key = value` pairs. Values may be quoted; `#` starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values_file(const std::string& path);

// Typed value parsing shared by every flat-config consumer; errors name the key.
double parse_double_value(const std::string& key, const std::string& value);
std::uint64_t parse_uint_value(const std::string& key, const std::string& value);
std::string format_double(double v);

enum class Regularizer { kNoise, kKl, kNone };
enum class TrainMode { kLatent, kAmortized, kSemiAmortized };
enum class ReconLoss { kPixelL1, kPerceptualProxy };

std::string to_string(Regularizer r);
std::string to_string(TrainMode m);
std::string to_string(ReconLoss l);

// Every hyperparameter of a run. Defaults follow the published setup where
// one exists; architecture widths are desk-scale choices.
struct RunConfig {
  std::uint64_t seed = 0;

  // Content regularization: additive noise std and activation decay.
  double sigma = 1.0;
  double lambda = 0.001;
  double kl_weight = 1.0;

  std::size_t d_content = 128;
  std::size_t d_class = 256;
  double init_std = 0.05;

  std::size_t epochs = 200;
  std::size_t stage2_epochs = 200;
  std::size_t batch_size = 64;
  double lr_gen = 1e-4;
  double lr_latent = 1e-3;
  double lr_encoder = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Stage-2 code-matching weights.
  double alpha1 = 10.0;
  double alpha2 = 10.0;

  Regularizer regularizer = Regularizer::kNoise;
  TrainMode mode = TrainMode::kLatent;
  ReconLoss loss = ReconLoss::kPerceptualProxy;

  // Architecture.
  std::size_t image_channels = 3;
  std::size_t image_size = 32;
  std::size_t gen_fc_hidden = 256;
  std::size_t gen_seed_channels = 64;
  std::vector<std::size_t> gen_widths = {64, 64, 32, 32, 16};
  std::vector<std::size_t> enc_widths = {16, 32, 64, 64, 64};
  std::size_t enc_fc_hidden = 256;

  // Per-epoch class-from-content probe tracking (0 disables).
  std::size_t probe_every = 0;
  std::size_t track_probe_epochs = 50;

  void validate() const;
  std::string to_text() const;
  static RunConfig from_key_values(const KeyValues& kv);
  // Applies overrides on top of an existing config.
  void apply(const KeyValues& kv);
};

}  // namespace lord
