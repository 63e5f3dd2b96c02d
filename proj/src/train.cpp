// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "lord/perceptual.hpp"

namespace lord {

namespace {

enum : std::uint64_t {
  kTagInitGen = 0x11,
  kTagInitClassEnc = 0x12,
  kTagInitContentEnc = 0x13,
  kTagOrder = 0x21,
  kTagNoise = 0x22,
  kTagInitialEval = 0x23,
  kTagProbe = 0x24,
  kTagStage2ClassEnc = 0x31,
  kTagStage2ContentEnc = 0x32,
  kTagStage2Order = 0x33,
  kTagPerImage = 0x41,
};

constexpr std::size_t kEncodeChunk = 128;

AdamHyper hyper(const RunConfig& cfg, double lr) { return AdamHyper{lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps}; }

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::size_t> at(const std::vector<std::size_t>& v, std::span<const std::size_t> pos) {
  std::vector<std::size_t> out;
  out.reserve(pos.size());
  for (std::size_t p : pos) out.push_back(v[p]);
  return out;
}

// [N x N] matrix averaging rows that share a label.
Tensor label_average_matrix(std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += labels[j] == labels[i];
    for (std::size_t j = 0; j < n; ++j)
      if (labels[j] == labels[i]) a[i * n + j] = 1.0 / count;
  }
  return Tensor({n, n}, std::move(a));
}

void put_params(Checkpoint& ckpt, const std::vector<NamedParam>& params) {
  for (const auto& p : params) ckpt.put(p.name, p.tensor);
}

void put_optim(Checkpoint& ckpt, const AdamGroup* g) {
  if (!g) return;
  std::vector<NamedArray> arrays;
  g->save_state(arrays);
  for (auto& a : arrays) ckpt.put(std::move(a));
}

void put_optim(Checkpoint& ckpt, const SparseRowAdam* g) {
  if (!g) return;
  std::vector<NamedArray> arrays;
  g->save_state(arrays);
  for (auto& a : arrays) ckpt.put(std::move(a));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainRecord record_from_sums(std::size_t stage, std::size_t epoch, std::size_t iterations,
                             const std::array<double, 4>& sums) {
  TrainRecord r;
  r.stage = stage;
  r.epoch = epoch;
  r.iterations = iterations;
  const double n = std::max(1.0, sums[3]);
  r.recon_loss = sums[0] / n;
  r.reg_loss = sums[1] / n;
  r.total = sums[2] / n;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Losses

LossTerms loss_stage1(const Tensor& images, const Tensor& class_codes, const Tensor& content_codes,
                      const Generator& gen, const RunConfig& cfg, std::mt19937_64& rng, const NoiseHook& hook) {
  if (cfg.regularizer == Regularizer::kKl) throw std::invalid_argument("loss_stage1: KL runs use an encoder posterior");
  const std::size_t n = images.dim(0);
  const bool regularize = cfg.regularizer == Regularizer::kNoise;
  Tensor content = content_codes;
  if (regularize && cfg.sigma > 0.0) {
    content = content + Tensor::randn(content_codes.shape(), cfg.sigma, rng);
    if (hook) hook(NoiseEvent{"content", cfg.sigma, content_codes.numel()});
  }
  LossTerms t;
  Tensor recon = recon_loss(gen.forward(class_codes, content), images, cfg.loss);
  t.recon = recon.item();
  if (regularize && cfg.lambda > 0.0) {
    Tensor reg = sum(square(content_codes)) * (cfg.lambda / static_cast<double>(n));
    t.reg = reg.item();
    t.total = recon + reg;
  } else {
    t.total = recon;
  }
  return t;
}

Tensor kl_to_standard_normal(const Tensor& mu, const Tensor& logvar) {
  const double scale = 0.5 / static_cast<double>(mu.dim(0));
  return sum(add(square(mu) + exp(logvar) - logvar, -1.0)) * scale;
}

// ---------------------------------------------------------------------------
// TrainRecord

std::string TrainRecord::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["iterations"] = iterations;
  j["recon_loss"] = recon_loss;
  j["reg_loss"] = reg_loss;
  j["total"] = total;
  if (probe_acc_class_from_content) j["probe_acc_class_from_content"] = *probe_acc_class_from_content;
  return j.dump();
}

TrainRecord TrainRecord::from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  TrainRecord r;
  r.stage = j.at("stage").get<std::size_t>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.iterations = j.value("iterations", std::size_t{0});
  r.recon_loss = j.at("recon_loss").get<double>();
  r.reg_loss = j.at("reg_loss").get<double>();
  r.total = j.at("total").get<double>();
  if (j.contains("probe_acc_class_from_content")) {
    r.probe_acc_class_from_content = j["probe_acc_class_from_content"].get<double>();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Encoding helpers

Tensor encode_codes(const Encoder& enc, const Tensor& images) {
  NoGradScope no_grad;
  Tensor out = enc.forward(images);
  if (enc.variational()) out = slice_cols(out, 0, enc.out_dim());
  return out.detach();
}

Tensor encode_dataset(const Encoder& enc, const FactorDataset& ds, std::span<const std::size_t> indices) {
  std::vector<double> codes;
  codes.reserve(indices.size() * enc.out_dim());
  for (std::size_t start = 0; start < indices.size(); start += kEncodeChunk) {
    const auto chunk = indices.subspan(start, std::min(kEncodeChunk, indices.size() - start));
    Tensor c = encode_codes(enc, ds.batch(chunk));
    codes.insert(codes.end(), c.data().begin(), c.data().end());
  }
  return Tensor({indices.size(), enc.out_dim()}, std::move(codes));
}

ProbeOptions default_probe_options(std::uint64_t seed) {
  ProbeOptions o;
  o.seed = mix_seed(seed, kTagProbe);
  return o;
}

// ---------------------------------------------------------------------------
// Stage 1

namespace {

Generator make_generator(const RunConfig& cfg) {
  std::mt19937_64 rng(mix_seed(cfg.seed, kTagInitGen));
  return Generator(cfg, rng);
}

void check_dataset_fits(const FactorDataset& ds, const RunConfig& cfg) {
  if (ds.spec.channels != cfg.image_channels || ds.spec.image_size != cfg.image_size) {
    throw ConfigError("config image shape (" + std::to_string(cfg.image_channels) + "x" +
                      std::to_string(cfg.image_size) + ") does not match the dataset (" +
                      std::to_string(ds.spec.channels) + "x" + std::to_string(ds.spec.image_size) + ")");
  }
}

}  // namespace

Stage1Trainer::Stage1Trainer(const FactorDataset& ds, const RunConfig& cfg)
    : ds_(ds), cfg_(cfg), train_idx_(ds.indices(Split::kTrain)), gen_(make_generator(cfg)) {
  cfg_.validate();
  check_dataset_fits(ds, cfg_);
  if (train_idx_.empty()) throw std::invalid_argument("dataset has no training samples");
  const bool kl = cfg_.regularizer == Regularizer::kKl;
  if (cfg_.mode == TrainMode::kAmortized) {
    std::mt19937_64 rng(mix_seed(cfg_.seed, kTagInitClassEnc));
    enc_class_.emplace(cfg_, cfg_.d_class, false, rng);
  }
  if (cfg_.mode != TrainMode::kLatent) {
    std::mt19937_64 rng(mix_seed(cfg_.seed, kTagInitContentEnc));
    enc_content_.emplace(cfg_, cfg_.d_content, kl, rng);
  }
  tables_ = init_latents(ds.num_labels(), train_idx_.size(), cfg_, cfg_.seed);

  gen_opt_ = std::make_unique<AdamGroup>("gen", gen_.tensors(), hyper(cfg_, cfg_.lr_gen));
  std::vector<Tensor> enc_params;
  for (const auto* e : {class_encoder(), content_encoder()})
    if (e)
      for (auto& t : e->tensors()) enc_params.push_back(t);
  if (!enc_params.empty()) enc_opt_ = std::make_unique<AdamGroup>("enc", enc_params, hyper(cfg_, cfg_.lr_encoder));
  if (cfg_.mode != TrainMode::kAmortized) {
    tables_.class_table.set_requires_grad();
    class_opt_ = std::make_unique<SparseRowAdam>("latent_class", tables_.class_table, hyper(cfg_, cfg_.lr_latent));
  }
  if (cfg_.mode == TrainMode::kLatent) {
    tables_.content_table.set_requires_grad();
    content_opt_ =
        std::make_unique<SparseRowAdam>("latent_content", tables_.content_table, hyper(cfg_, cfg_.lr_latent));
  }
}

std::size_t Stage1Trainer::steps_per_epoch() const {
  return (train_idx_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::vector<std::size_t> Stage1Trainer::epoch_order(std::size_t epoch) const {
  return shuffled(train_idx_.size(), mix_seed(cfg_.seed, kTagOrder, epoch));
}

std::vector<std::size_t> Stage1Trainer::batch_indices(std::size_t epoch, std::size_t step) const {
  const auto order = epoch_order(epoch);
  const std::size_t lo = std::min(order.size(), step * cfg_.batch_size);
  const std::size_t hi = std::min(order.size(), lo + cfg_.batch_size);
  std::vector<std::size_t> out;
  for (std::size_t k = lo; k < hi; ++k) out.push_back(train_idx_[order[k]]);
  return out;
}

LossTerms Stage1Trainer::batch_loss(std::span<const std::size_t> rows, std::mt19937_64& rng) const {
  const auto idx = at(train_idx_, rows);
  const Tensor images = ds_.batch(idx);
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) labels.push_back(ds_.labels[i]);

  Tensor class_codes;
  if (cfg_.mode == TrainMode::kAmortized) {
    class_codes = matmul(label_average_matrix(labels), enc_class_->forward(images));
  } else {
    class_codes = gather_rows(tables_.class_table, labels);
  }

  if (cfg_.mode == TrainMode::kLatent) {
    return loss_stage1(images, class_codes, gather_rows(tables_.content_table, rows), gen_, cfg_, rng, hook_);
  }
  Tensor enc_out = enc_content_->forward(images);
  if (cfg_.regularizer != Regularizer::kKl) return loss_stage1(images, class_codes, enc_out, gen_, cfg_, rng, hook_);

  const std::size_t d = cfg_.d_content;
  Tensor mu = slice_cols(enc_out, 0, d);
  Tensor logvar = slice_cols(enc_out, d, 2 * d);
  Tensor eps = Tensor::randn(mu.shape(), 1.0, rng);
  Tensor content = mu + exp(logvar * 0.5) * eps;
  Tensor kl = kl_to_standard_normal(mu, logvar) * cfg_.kl_weight;
  Tensor recon = recon_loss(gen_.forward(class_codes, content), images, cfg_.loss);
  LossTerms t;
  t.recon = recon.item();
  t.reg = kl.item();
  t.total = recon + kl;
  return t;
}

StepLosses Stage1Trainer::step() {
  if (finished()) throw std::logic_error("stage 1 already finished");
  const auto order = epoch_order(epoch_);
  const std::size_t b = cfg_.batch_size;
  const std::size_t lo = step_ * b, hi = std::min(order.size(), lo + b);
  const std::span<const std::size_t> rows(order.data() + lo, hi - lo);

  std::mt19937_64 rng(mix_seed(cfg_.seed, kTagNoise, epoch_, step_));
  Tape tape;
  LossTerms terms;
  {
    TapeScope scope(tape);
    terms = batch_loss(rows, rng);
  }
  tape.backward(terms.total);

  gen_opt_->step();
  if (enc_opt_) enc_opt_->step();
  if (class_opt_) {
    std::vector<std::size_t> labels;
    for (std::size_t r : rows) labels.push_back(ds_.labels[train_idx_[r]]);
    class_opt_->step(labels);
  }
  if (content_opt_) content_opt_->step(rows);

  StepLosses out{terms.recon, terms.reg, terms.total.item()};
  const double n = static_cast<double>(rows.size());
  sums_[0] += out.recon * n;
  sums_[1] += out.reg * n;
  sums_[2] += out.total * n;
  sums_[3] += n;
  ++iterations_;
  if (++step_ == steps_per_epoch()) {
    ++epoch_;
    step_ = 0;
  }
  return out;
}

bool Stage1Trainer::probe_due(std::size_t epoch) const {
  if (cfg_.probe_every == 0) return false;
  if (epoch == cfg_.epochs) return true;
  return epoch <= cfg_.track_probe_epochs && epoch % cfg_.probe_every == 0;
}

TrainRecord Stage1Trainer::train_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t target = epoch_ + 1;
  while (epoch_ < target) step();
  TrainRecord r = record_from_sums(1, epoch_, iterations_, sums_);
  sums_ = {};
  if (probe_due(epoch_)) r.probe_acc_class_from_content = probe_class_from_content();
  r.wall_time = seconds_since(t0);
  return r;
}

TrainRecord Stage1Trainer::initial_record() {
  const auto t0 = std::chrono::steady_clock::now();
  NoGradScope no_grad;
  const auto order = epoch_order(0);
  std::array<double, 4> sums{};
  for (std::size_t s = 0; s < steps_per_epoch(); ++s) {
    const std::size_t lo = s * cfg_.batch_size, hi = std::min(order.size(), lo + cfg_.batch_size);
    std::mt19937_64 rng(mix_seed(cfg_.seed, kTagInitialEval, s));
    const LossTerms t = batch_loss({order.data() + lo, hi - lo}, rng);
    const double n = static_cast<double>(hi - lo);
    sums[0] += t.recon * n;
    sums[1] += t.reg * n;
    sums[2] += t.total.item() * n;
    sums[3] += n;
  }
  TrainRecord r = record_from_sums(1, 0, 0, sums);
  if (cfg_.probe_every > 0) r.probe_acc_class_from_content = probe_class_from_content();
  r.wall_time = seconds_since(t0);
  return r;
}

Tensor Stage1Trainer::train_content_codes() const {
  if (cfg_.mode == TrainMode::kLatent) return tables_.content_table.detach();
  return encode_dataset(*enc_content_, ds_, train_idx_);
}

Tensor Stage1Trainer::train_class_codes() const {
  if (cfg_.mode == TrainMode::kAmortized) return encode_dataset(*enc_class_, ds_, train_idx_);
  std::vector<std::size_t> labels;
  for (std::size_t i : train_idx_) labels.push_back(ds_.labels[i]);
  NoGradScope no_grad;
  return gather_rows(tables_.class_table, labels).detach();
}

double Stage1Trainer::probe_class_from_content() const {
  std::vector<std::size_t> labels;
  for (std::size_t i : train_idx_) labels.push_back(ds_.labels[i]);
  return probe_classifier(train_content_codes(), labels, default_probe_options(cfg_.seed)).accuracy;
}

Checkpoint Stage1Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.stage = 1;
  ckpt.put(text_array("config", cfg_.to_text()));
  ckpt.put(int_array("position", {epoch_, step_, iterations_}));
  ckpt.put(NamedArray{"progress.sums", {4}, {sums_.begin(), sums_.end()}});
  put_params(ckpt, gen_.parameters());
  if (enc_class_) put_params(ckpt, enc_class_->parameters("enc_class"));
  if (enc_content_) put_params(ckpt, enc_content_->parameters("enc_content"));
  ckpt.put("latent.class", tables_.class_table);
  ckpt.put("latent.content", tables_.content_table);
  put_optim(ckpt, gen_opt_.get());
  put_optim(ckpt, enc_opt_.get());
  put_optim(ckpt, class_opt_.get());
  put_optim(ckpt, content_opt_.get());
  return ckpt;
}

void Stage1Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.stage != 1) throw std::runtime_error("expected a stage-1 checkpoint");
  const auto pos = array_ints(require_array(ckpt.arrays, "position"));
  if (pos.size() != 3) throw std::runtime_error("corrupt checkpoint position");
  gen_.load(ckpt.arrays);
  if (enc_class_) enc_class_->load(ckpt.arrays, "enc_class");
  if (enc_content_) enc_content_->load(ckpt.arrays, "enc_content");
  assign_from(tables_.class_table, require_array(ckpt.arrays, "latent.class"));
  assign_from(tables_.content_table, require_array(ckpt.arrays, "latent.content"));
  gen_opt_->load_state(ckpt.arrays);
  if (enc_opt_) enc_opt_->load_state(ckpt.arrays);
  if (class_opt_) class_opt_->load_state(ckpt.arrays);
  if (content_opt_) content_opt_->load_state(ckpt.arrays);
  const auto& sums = require_array(ckpt.arrays, "progress.sums").values;
  if (sums.size() != 4) throw std::runtime_error("corrupt checkpoint progress");
  std::copy(sums.begin(), sums.end(), sums_.begin());
  epoch_ = pos[0];
  step_ = pos[1];
  iterations_ = pos[2];
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  return RunConfig::from_key_values(parse_key_values(array_text(require_array(ckpt.arrays, "config"))));
}

// ---------------------------------------------------------------------------
// Stage 2

namespace {

Encoder make_encoder(const RunConfig& cfg, std::size_t dim, std::uint64_t tag) {
  std::mt19937_64 rng(mix_seed(cfg.seed, tag));
  return Encoder(cfg, dim, false, rng);
}

}  // namespace

Stage2Trainer::Stage2Trainer(const FactorDataset& ds, const RunConfig& cfg, const Generator& stage1_gen,
                             Tensor class_targets, Tensor content_targets)
    : ds_(ds),
      cfg_(cfg),
      train_idx_(ds.indices(Split::kTrain)),
      gen_(stage1_gen.clone()),
      enc_class_(make_encoder(cfg, cfg.d_class, kTagStage2ClassEnc)),
      enc_content_(make_encoder(cfg, cfg.d_content, kTagStage2ContentEnc)),
      class_targets_(class_targets.detach()),
      content_targets_(content_targets.detach()) {
  check_dataset_fits(ds, cfg_);
  if (class_targets_.rank() != 2 || class_targets_.dim(1) != cfg_.d_class) {
    throw ShapeError("stage 2: class targets must be [k x d_class]");
  }
  if (content_targets_.rank() != 2 || content_targets_.dim(0) != train_idx_.size() ||
      content_targets_.dim(1) != cfg_.d_content) {
    throw ShapeError("stage 2: content targets must be [n_train x d_content]");
  }
  gen_opt_ = std::make_unique<AdamGroup>("gen", gen_.tensors(), hyper(cfg_, cfg_.lr_gen));
  std::vector<Tensor> enc_params = enc_class_.tensors();
  for (auto& t : enc_content_.tensors()) enc_params.push_back(t);
  enc_opt_ = std::make_unique<AdamGroup>("enc", enc_params, hyper(cfg_, cfg_.lr_encoder));
}

StepLosses Stage2Trainer::step() {
  if (finished()) throw std::logic_error("stage 2 already finished");
  const auto order = shuffled(train_idx_.size(), mix_seed(cfg_.seed, kTagStage2Order, epoch_));
  const std::size_t b = cfg_.batch_size;
  const std::size_t steps = (order.size() + b - 1) / b;
  const std::size_t lo = step_ * b, hi = std::min(order.size(), lo + b);
  const std::span<const std::size_t> rows(order.data() + lo, hi - lo);
  const auto idx = at(train_idx_, rows);
  std::vector<std::size_t> labels;
  for (std::size_t i : idx) labels.push_back(ds_.labels[i]);
  const Tensor images = ds_.batch(idx);
  const double inv_n = 1.0 / static_cast<double>(rows.size());

  Tape tape;
  Tensor total;
  double recon_v = 0.0, match_v = 0.0;
  {
    TapeScope scope(tape);
    Tensor ey = enc_class_.forward(images);
    Tensor ec = enc_content_.forward(images);
    Tensor recon = recon_loss(gen_.forward(ey, ec), images, cfg_.loss);
    Tensor match = sum(square(ey - gather_rows(class_targets_, labels))) * (cfg_.alpha1 * inv_n) +
                   sum(square(ec - gather_rows(content_targets_, rows))) * (cfg_.alpha2 * inv_n);
    recon_v = recon.item();
    match_v = match.item();
    total = recon + match;
  }
  tape.backward(total);
  gen_opt_->step();
  enc_opt_->step();

  StepLosses out{recon_v, match_v, total.item()};
  const double n = static_cast<double>(rows.size());
  sums_[0] += out.recon * n;
  sums_[1] += out.reg * n;
  sums_[2] += out.total * n;
  sums_[3] += n;
  ++iterations_;
  if (++step_ == steps) {
    ++epoch_;
    step_ = 0;
  }
  return out;
}

TrainRecord Stage2Trainer::train_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t target = epoch_ + 1;
  while (epoch_ < target) step();
  TrainRecord r = record_from_sums(2, epoch_, iterations_, sums_);
  sums_ = {};
  r.wall_time = seconds_since(t0);
  return r;
}

double Stage2Trainer::content_match_error() const {
  const Tensor codes = encode_dataset(enc_content_, ds_, train_idx_);
  double acc = 0.0;
  auto a = codes.data();
  auto b = content_targets_.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double Stage2Trainer::class_match_error() const {
  const Tensor codes = encode_dataset(enc_class_, ds_, train_idx_);
  double acc = 0.0;
  auto a = codes.data();
  auto t = class_targets_.data();
  const std::size_t d = cfg_.d_class;
  for (std::size_t r = 0; r < train_idx_.size(); ++r) {
    const std::size_t y = ds_.labels[train_idx_[r]];
    for (std::size_t j = 0; j < d; ++j) acc += std::pow(a[r * d + j] - t[y * d + j], 2);
  }
  return acc / static_cast<double>(a.size());
}

Checkpoint Stage2Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.stage = 2;
  ckpt.put(text_array("config", cfg_.to_text()));
  ckpt.put(int_array("position", {epoch_, step_, iterations_}));
  ckpt.put(NamedArray{"progress.sums", {4}, {sums_.begin(), sums_.end()}});
  put_params(ckpt, gen_.parameters());
  put_params(ckpt, enc_class_.parameters("enc_class"));
  put_params(ckpt, enc_content_.parameters("enc_content"));
  put_optim(ckpt, gen_opt_.get());
  put_optim(ckpt, enc_opt_.get());
  return ckpt;
}

void Stage2Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.stage != 2) throw std::runtime_error("expected a stage-2 checkpoint");
  const auto pos = array_ints(require_array(ckpt.arrays, "position"));
  if (pos.size() != 3) throw std::runtime_error("corrupt checkpoint position");
  gen_.load(ckpt.arrays);
  enc_class_.load(ckpt.arrays, "enc_class");
  enc_content_.load(ckpt.arrays, "enc_content");
  gen_opt_->load_state(ckpt.arrays);
  enc_opt_->load_state(ckpt.arrays);
  const auto& sums = require_array(ckpt.arrays, "progress.sums").values;
  if (sums.size() != 4) throw std::runtime_error("corrupt checkpoint progress");
  std::copy(sums.begin(), sums.end(), sums_.begin());
  epoch_ = pos[0];
  step_ = pos[1];
  iterations_ = pos[2];
}

Stage2Trainer make_stage2(const FactorDataset& ds, const Stage1Trainer& s1) {
  if (s1.config().mode == TrainMode::kAmortized) {
    throw std::invalid_argument("stage 2 needs stage-1 class embeddings; amortized runs already have encoders");
  }
  return Stage2Trainer(ds, s1.config(), s1.generator(), s1.tables().class_table, s1.train_content_codes());
}

// ---------------------------------------------------------------------------
// Inference

Tensor infer_transfer(const Generator& gen, const Encoder& class_enc, const Encoder& content_enc,
                      const Tensor& class_source, const Tensor& content_source) {
  const bool single = class_source.rank() == 3;
  auto as_batch = [](const Tensor& x) {
    if (x.rank() == 4) return x;
    return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  };
  NoGradScope no_grad;
  Tensor out = gen.forward(encode_codes(class_enc, as_batch(class_source)),
                           encode_codes(content_enc, as_batch(content_source)));
  return single ? reshape(out, gen.image_shape()).detach() : out.detach();
}

OptimizedCodes optimize_codes_per_image(const Generator& gen, const Tensor& images, const RunConfig& cfg,
                                        std::size_t steps, double lr, std::uint64_t seed) {
  const std::size_t n = images.dim(0), chunk = cfg.batch_size;
  Generator frozen = gen.clone();
  for (auto& p : frozen.tensors()) p.set_requires_grad(false);
  std::vector<double> cls, cnt;
  double recon_sum = 0.0;
  const std::size_t numel = images.numel() / n;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    Shape shape = images.shape();
    shape[0] = m;
    Tensor x(shape, std::vector<double>(images.data().begin() + start * numel,
                                        images.data().begin() + (start + m) * numel));
    std::mt19937_64 rng(mix_seed(seed, kTagPerImage, start));
    Tensor e = Tensor::randn({m, cfg.d_class}, cfg.init_std, rng).set_requires_grad();
    Tensor c = Tensor::randn({m, cfg.d_content}, cfg.init_std, rng).set_requires_grad();
    AdamGroup opt("codes", {e, c}, AdamHyper{lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    double last = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        Tensor recon = recon_loss(frozen.forward(e, c), x, cfg.loss);
        last = recon.item();
        loss = cfg.regularizer == Regularizer::kNoise
                   ? recon + sum(square(c)) * (cfg.lambda / static_cast<double>(m))
                   : recon;
      }
      tape.backward(loss);
      opt.step();
    }
    recon_sum += last * m;
    cls.insert(cls.end(), e.data().begin(), e.data().end());
    cnt.insert(cnt.end(), c.data().begin(), c.data().end());
  }
  OptimizedCodes out;
  out.class_codes = Tensor({n, cfg.d_class}, std::move(cls));
  out.content_codes = Tensor({n, cfg.d_content}, std::move(cnt));
  out.final_recon = recon_sum / n;
  return out;
}

}  // namespace lord
