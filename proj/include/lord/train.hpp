// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage 1 (latent optimization and its amortized ablations) and stage 2
// (encoders distilled from the stage-1 codes).
//
// Random streams are derived from (seed, purpose, epoch, step) rather than a
// single running generator, so a checkpoint only needs its (epoch, step)
// position to resume bit-exactly.

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lord/checkpoint.hpp"
#include "lord/config.hpp"
#include "lord/data.hpp"
#include "lord/model.hpp"
#include "lord/optim.hpp"
#include "lord/probe.hpp"
#include "lord/tensor.hpp"

namespace lord {

// Reported for every tensor that receives additive noise during a step.
struct NoiseEvent {
  std::string target;  // "content" is the only target LORD ever noises
  double sigma = 0.0;
  std::size_t count = 0;
};
using NoiseHook = std::function<void(const NoiseEvent&)>;

struct LossTerms {
  Tensor total;  // differentiable scalar
  double recon = 0.0;
  double reg = 0.0;
};

// Batch mean of recon(G(e_i, c_i + z_i), x_i) + lambda * |c_i|^2 with
// z_i ~ N(0, sigma^2) drawn from `rng`. Noise touches the content codes only.
LossTerms loss_stage1(const Tensor& images, const Tensor& class_codes, const Tensor& content_codes,
                      const Generator& gen, const RunConfig& cfg, std::mt19937_64& rng,
                      const NoiseHook& hook = {});

// Batch mean of 0.5 * sum(mu^2 + exp(logvar) - logvar - 1).
Tensor kl_to_standard_normal(const Tensor& mu, const Tensor& logvar);

struct TrainRecord {
  std::size_t stage = 1;
  std::size_t epoch = 0;
  std::size_t iterations = 0;  // optimizer steps taken so far
  double recon_loss = 0.0;
  double reg_loss = 0.0;
  double total = 0.0;
  std::optional<double> probe_acc_class_from_content;
  double wall_time = 0.0;  // seconds; kept out of the deterministic log

  std::string to_json() const;  // single line, without wall_time
  static TrainRecord from_json(const std::string& line);
};

struct StepLosses {
  double recon = 0.0, reg = 0.0, total = 0.0;
};

// [N x out_dim] codes for a batch of images (the posterior mean for
// variational encoders), evaluated without recording.
Tensor encode_codes(const Encoder& enc, const Tensor& images);
// Same, over dataset samples in chunks.
Tensor encode_dataset(const Encoder& enc, const FactorDataset& ds, std::span<const std::size_t> indices);

ProbeOptions default_probe_options(std::uint64_t seed);

class Stage1Trainer {
 public:
  Stage1Trainer(const FactorDataset& ds, const RunConfig& cfg);

  // Loads parameters, codes, optimizer state and position.
  void restore(const Checkpoint& ckpt);
  Checkpoint checkpoint() const;

  // One minibatch update; rolls over to the next epoch when the current one
  // is exhausted.
  StepLosses step();
  // Finishes the current epoch and returns its record.
  TrainRecord train_epoch();
  // Epoch-0 record: losses of the untrained model (no updates) and, when
  // tracking is on, the probe at initialization.
  TrainRecord initial_record();
  bool finished() const { return epoch_ >= cfg_.epochs; }
  std::size_t epoch() const { return epoch_; }
  std::size_t step_in_epoch() const { return step_; }
  std::size_t steps_per_epoch() const;
  // Dataset indices of minibatch `step` of `epoch`.
  std::vector<std::size_t> batch_indices(std::size_t epoch, std::size_t step) const;

  // Content codes of the training samples as the model sees them during
  // training: table rows, or encoder outputs for amortized modes.
  Tensor train_content_codes() const;
  // Per-sample class codes (table row of the label, or the encoder output).
  Tensor train_class_codes() const;
  double probe_class_from_content() const;

  const RunConfig& config() const { return cfg_; }
  const Generator& generator() const { return gen_; }
  const LatentTables& tables() const { return tables_; }
  const Encoder* class_encoder() const { return enc_class_ ? &*enc_class_ : nullptr; }
  const Encoder* content_encoder() const { return enc_content_ ? &*enc_content_ : nullptr; }
  const std::vector<std::size_t>& train_indices() const { return train_idx_; }
  void set_noise_hook(NoiseHook hook) { hook_ = std::move(hook); }

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  LossTerms batch_loss(std::span<const std::size_t> rows, std::mt19937_64& rng) const;
  bool probe_due(std::size_t epoch) const;

  const FactorDataset& ds_;
  RunConfig cfg_;
  std::vector<std::size_t> train_idx_;
  Generator gen_;
  std::optional<Encoder> enc_class_, enc_content_;
  LatentTables tables_;
  std::unique_ptr<AdamGroup> gen_opt_, enc_opt_;
  std::unique_ptr<SparseRowAdam> class_opt_, content_opt_;
  std::size_t epoch_ = 0, step_ = 0, iterations_ = 0;
  // Running sums of the current epoch: recon, reg, total, samples.
  std::array<double, 4> sums_{};
  NoiseHook hook_;
};

class Stage2Trainer {
 public:
  // Targets: the stage-1 class table [k x d_class] and content codes of the
  // training samples [n_train x d_content], row-aligned with train_indices.
  Stage2Trainer(const FactorDataset& ds, const RunConfig& cfg, const Generator& stage1_gen, Tensor class_targets,
                Tensor content_targets);

  void restore(const Checkpoint& ckpt);
  Checkpoint checkpoint() const;
  StepLosses step();
  TrainRecord train_epoch();
  bool finished() const { return epoch_ >= cfg_.stage2_epochs; }
  std::size_t epoch() const { return epoch_; }

  // Mean over training samples of |E_c(x_i) - c_i|^2 / d_content.
  double content_match_error() const;
  double class_match_error() const;

  const Generator& generator() const { return gen_; }
  const Encoder& class_encoder() const { return enc_class_; }
  const Encoder& content_encoder() const { return enc_content_; }

 private:
  const FactorDataset& ds_;
  RunConfig cfg_;
  std::vector<std::size_t> train_idx_;
  Generator gen_;
  Encoder enc_class_, enc_content_;
  Tensor class_targets_, content_targets_;
  std::unique_ptr<AdamGroup> gen_opt_, enc_opt_;
  std::size_t epoch_ = 0, step_ = 0, iterations_ = 0;
  std::array<double, 4> sums_{};
};

// Builds the stage-2 trainer from a finished stage-1 trainer.
Stage2Trainer make_stage2(const FactorDataset& ds, const Stage1Trainer& s1);

// G(E_y(x_class), E_c(x_content)) for single images or batches.
Tensor infer_transfer(const Generator& gen, const Encoder& class_enc, const Encoder& content_enc,
                      const Tensor& class_source, const Tensor& content_source);

struct OptimizedCodes {
  Tensor class_codes;    // [N x d_class]
  Tensor content_codes;  // [N x d_content]
  double final_recon = 0.0;
};

// Stage-1-only inference: fits a free class and content code to each image
// against a frozen generator (no class supervision, no noise).
OptimizedCodes optimize_codes_per_image(const Generator& gen, const Tensor& images, const RunConfig& cfg,
                                        std::size_t steps, double lr, std::uint64_t seed);

// Rebuilds a stage-1 trainer from its checkpoint (config read from the file).
RunConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace lord
