// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset generation, both training stages, the
// evaluation suite and style clustering. Exit codes: 0 ok, 1 runtime failure,
// 2 bad input.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lord/checkpoint.hpp"
#include "lord/cluster.hpp"
#include "lord/config.hpp"
#include "lord/data.hpp"
#include "lord/eval.hpp"
#include "lord/probe.hpp"
#include "lord/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace lord;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr std::size_t kEvalPairs = 500;
constexpr std::uint64_t kPairSeed = 0x9a1125;

// Raised for anything the caller got wrong; maps to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

KeyValues parse_overrides(const std::vector<std::string>& sets) {
  KeyValues kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t"), e = v.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  return kv;
}

FactorDataset open_dataset(const std::string& path) {
  if (!fs::exists(path)) throw InputError("dataset not found: " + path);
  return load_dataset(path);
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_checkpoint_atomic(const fs::path& path, const Checkpoint& ckpt) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp.string(), ckpt);
  fs::rename(tmp, path);
}

// Keeps only log lines of other stages, or of this stage up to `epoch`.
void trim_log(const fs::path& path, std::size_t stage, std::size_t epoch) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("stage").get<std::size_t>() != stage || j.at("epoch").get<std::size_t>() <= epoch) kept += line + "\n";
  }
  write_text(path, kept);
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  out << line << "\n";
}

void log_record(const fs::path& run, const TrainRecord& r) {
  append_line(run / "log.jsonl", r.to_json());
  ordered_json t;
  t["stage"] = r.stage;
  t["epoch"] = r.epoch;
  t["wall_time"] = r.wall_time;
  append_line(run / "timing.jsonl", t.dump());
  std::cerr << "stage " << r.stage << " epoch " << r.epoch << " recon " << r.recon_loss << " reg " << r.reg_loss;
  if (r.probe_acc_class_from_content) std::cerr << " probe " << *r.probe_acc_class_from_content;
  std::cerr << "\n";
}

struct RunInfo {
  std::string data_path;
  RunConfig cfg;
};

RunInfo read_run(const fs::path& run) {
  if (!fs::exists(run / "run.json")) throw InputError("not a run directory: " + run.string());
  const auto j = nlohmann::json::parse(read_text(run / "run.json"));
  RunInfo info;
  info.data_path = j.at("data").get<std::string>();
  info.cfg = RunConfig::from_key_values(parse_key_values(read_text(run / "config.txt")));
  return info;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& spec_path, const std::vector<std::string>& sets, const std::string& out,
                 const std::string& png_dir) {
  KeyValues kv;
  if (!spec_path.empty()) {
    if (!fs::exists(spec_path)) throw InputError("spec not found: " + spec_path);
    kv = read_key_values_file(spec_path);
  }
  for (auto& [k, v] : parse_overrides(sets)) kv[k] = v;
  const FactorSpec spec = FactorSpec::from_key_values(kv);
  spec.validate();
  const auto ds = build_dataset(spec);
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_dataset(out, ds);
  if (!png_dir.empty()) export_png_folder(ds, png_dir);
  std::cout << "wrote " << ds.size() << " samples (" << ds.indices(Split::kTrain).size() << " train) to " << out
            << "\n";
  return 0;
}

int cmd_train1(const std::string& data, const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& mode, const std::string& regularizer, const fs::path& run, bool resume) {
  const auto ds = open_dataset(data);
  KeyValues kv;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw InputError("config not found: " + config_path);
    kv = read_key_values_file(config_path);
  }
  for (auto& [k, v] : parse_overrides(sets)) kv[k] = v;
  if (!mode.empty()) kv["mode"] = mode;
  if (!regularizer.empty()) kv["regularizer"] = regularizer;
  RunConfig cfg = RunConfig::from_key_values(kv);
  cfg.image_channels = ds.spec.channels;
  cfg.image_size = ds.spec.image_size;
  cfg.validate();

  fs::create_directories(run);
  const fs::path ckpt_path = run / "stage1.ckpt";
  Stage1Trainer trainer(ds, cfg);
  if (resume && fs::exists(ckpt_path)) {
    const Checkpoint ck = load_checkpoint(ckpt_path.string());
    if (config_from_checkpoint(ck).to_text() != cfg.to_text()) {
      throw InputError("--resume: config differs from the checkpointed run");
    }
    trainer.restore(ck);
    trim_log(run / "log.jsonl", 1, trainer.epoch());
    trim_log(run / "timing.jsonl", 1, trainer.epoch());
    std::cerr << "resuming at epoch " << trainer.epoch() << "\n";
  } else {
    for (const char* f : {"log.jsonl", "timing.jsonl", "stage1.ckpt", "stage2.ckpt", "metrics.json"}) {
      fs::remove(run / f);
    }
    ordered_json info;
    info["version"] = kVersion;
    info["data"] = fs::absolute(data).string();
    info["seed"] = cfg.seed;
    write_text(run / "run.json", info.dump(2) + "\n");
    write_text(run / "config.txt", cfg.to_text());
    write_text(run / "data_spec.txt", ds.spec.to_text());
    log_record(run, trainer.initial_record());
  }
  while (!trainer.finished()) {
    const TrainRecord r = trainer.train_epoch();
    save_checkpoint_atomic(ckpt_path, trainer.checkpoint());
    log_record(run, r);
  }
  if (!fs::exists(ckpt_path)) save_checkpoint_atomic(ckpt_path, trainer.checkpoint());
  return 0;
}

// Stage-1 trainer restored from a run directory.
Stage1Trainer load_stage1(const FactorDataset& ds, const fs::path& run) {
  const fs::path p = run / "stage1.ckpt";
  if (!fs::exists(p)) throw InputError("missing stage-1 checkpoint: " + p.string());
  const Checkpoint ck = load_checkpoint(p.string());
  Stage1Trainer t(ds, config_from_checkpoint(ck));
  t.restore(ck);
  return t;
}

int cmd_train2(const fs::path& run, bool resume) {
  const RunInfo info = read_run(run);
  const auto ds = open_dataset(info.data_path);
  Stage1Trainer s1 = load_stage1(ds, run);
  if (s1.config().mode == TrainMode::kAmortized) {
    throw InputError("stage 2 is not defined for amortized runs; their encoders are already trained");
  }
  Stage2Trainer s2 = make_stage2(ds, s1);
  const fs::path ckpt_path = run / "stage2.ckpt";
  if (resume && fs::exists(ckpt_path)) {
    s2.restore(load_checkpoint(ckpt_path.string()));
    trim_log(run / "log.jsonl", 2, s2.epoch());
    trim_log(run / "timing.jsonl", 2, s2.epoch());
  } else {
    trim_log(run / "log.jsonl", 2, 0);
    trim_log(run / "timing.jsonl", 2, 0);
  }
  std::cerr << "initial code-matching error: content " << s2.content_match_error() << " class "
            << s2.class_match_error() << "\n";
  while (!s2.finished()) {
    const TrainRecord r = s2.train_epoch();
    save_checkpoint_atomic(ckpt_path, s2.checkpoint());
    log_record(run, r);
  }
  if (!fs::exists(ckpt_path)) save_checkpoint_atomic(ckpt_path, s2.checkpoint());
  std::cerr << "final code-matching error: content " << s2.content_match_error() << " class "
            << s2.class_match_error() << "\n";
  return 0;
}

// The networks used for inference: stage 2 when present, otherwise the
// stage-1 encoders of an amortized run.
struct InferenceModel {
  std::optional<Stage1Trainer> s1;
  std::optional<Stage2Trainer> s2;
  const Generator* gen = nullptr;
  const Encoder* class_enc = nullptr;
  const Encoder* content_enc = nullptr;
};

void load_inference(InferenceModel& m, const FactorDataset& ds, const fs::path& run) {
  m.s1.emplace(load_stage1(ds, run));
  if (fs::exists(run / "stage2.ckpt")) {
    m.s2.emplace(make_stage2(ds, *m.s1));
    m.s2->restore(load_checkpoint((run / "stage2.ckpt").string()));
    m.gen = &m.s2->generator();
    m.class_enc = &m.s2->class_encoder();
    m.content_enc = &m.s2->content_encoder();
  } else if (m.s1->config().mode == TrainMode::kAmortized) {
    m.gen = &m.s1->generator();
    m.class_enc = m.s1->class_encoder();
    m.content_enc = m.s1->content_encoder();
  } else {
    throw InputError("run has no stage-2 checkpoint; run train2 first");
  }
}

ordered_json score_json(const TransferScore& s) {
  ordered_json j;
  j["perceptual"] = s.perceptual;
  j["pixel_l1"] = s.pixel_l1;
  j["pairs"] = s.pairs;
  return j;
}

ordered_json probe_json(const ProbeResult& r, const std::string& codes) {
  ordered_json j;
  j["accuracy"] = r.accuracy;
  j["chance"] = r.chance;
  j["labels"] = r.num_labels;
  j["tested"] = r.num_tested;
  j["codes"] = codes;
  j["protocol"] = r.protocol;
  return j;
}

int cmd_eval(const fs::path& run, const std::string& data_override) {
  const RunInfo info = read_run(run);
  const auto ds = open_dataset(data_override.empty() ? info.data_path : data_override);
  InferenceModel m;
  load_inference(m, ds, run);
  const RunConfig& cfg = m.s1->config();

  ordered_json out;
  out["run"] = fs::absolute(run).string();
  out["mode"] = to_string(cfg.mode);
  out["regularizer"] = to_string(cfg.regularizer);

  // Transfer on held-out samples; held-out classes get their own entry.
  auto held = ds.indices(Split::kHeldOutSample);
  if (held.size() < 2) held = ds.indices(Split::kTrain);
  const auto pairs = sample_pairs(held, kEvalPairs, kPairSeed);
  ordered_json transfer;
  transfer["pool"] = "held_out_sample";
  transfer["distance"] = "perceptual proxy (pyramid L1 + fixed random conv features) and pixel L1, per value";
  transfer["pair_seed"] = kPairSeed;
  transfer["model"] = score_json(transfer_error(*m.gen, *m.class_enc, *m.content_enc, ds, pairs));
  transfer["no_skill"] = score_json(no_skill_baseline(ds, pairs));
  transfer["identity"] = score_json(transfer_error(*m.gen, *m.class_enc, *m.content_enc, ds, identity_pairs(held)));
  if (const auto unseen = ds.indices(Split::kHeldOutClass); unseen.size() >= 2) {
    const auto up = sample_pairs(unseen, kEvalPairs, kPairSeed + 1);
    transfer["held_out_class"] = score_json(transfer_error(*m.gen, *m.class_enc, *m.content_enc, ds, up));
    transfer["held_out_class_no_skill"] = score_json(no_skill_baseline(ds, up));
  }
  out["transfer"] = transfer;

  const auto& train = m.s1->train_indices();
  std::vector<std::size_t> labels, cells;
  for (auto i : train) {
    labels.push_back(ds.labels[i]);
    cells.push_back(ds.content_cell(i));
  }
  const ProbeOptions opt = default_probe_options(cfg.seed);
  const std::string content_src = cfg.mode == TrainMode::kLatent ? "latent table" : "content encoder mean";
  const std::string class_src = cfg.mode == TrainMode::kAmortized ? "class encoder" : "latent table rows";
  ordered_json probes;
  probes["class_from_content"] =
      probe_json(probe_classifier(m.s1->train_content_codes(), labels, opt), content_src);
  probes["content_from_class"] = probe_json(probe_classifier(m.s1->train_class_codes(), cells, opt), class_src);
  const Tensor enc_content = encode_dataset(*m.content_enc, ds, train);
  probes["class_from_content_encoder"] = probe_json(probe_classifier(enc_content, labels, opt), "inference encoder");
  out["probes"] = probes;
  ordered_json chance;
  chance["class"] = 1.0 / static_cast<double>(ds.num_labels());
  chance["content"] = 1.0 / static_cast<double>(ds.spec.grid_size());
  out["random_chance"] = chance;

  std::vector<double> factors;
  for (auto i : train) {
    const auto f = ds.content_real(i);
    factors.insert(factors.end(), f.begin(), f.end());
  }
  const auto ridge = ridge_regression(encode_dataset(*m.class_enc, ds, train), Tensor({train.size(), 3}, factors),
                                      1e-3, 0.8, cfg.seed);
  ordered_json reg;
  reg["rmse"] = ridge.rmse;
  reg["target_std"] = ridge.target_std;
  reg["codes"] = "class encoder on individual images";
  reg["protocol"] = ridge.protocol;
  out["regression_content_from_class"] = reg;

  write_text(run / "metrics.json", out.dump(2) + "\n");
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_grid(const fs::path& run, const std::string& data_override, std::size_t rows, std::size_t cols,
             const std::string& out, std::uint64_t seed) {
  if (rows == 0 || cols == 0) throw InputError("--rows and --cols must be positive");
  const RunInfo info = read_run(run);
  const auto ds = open_dataset(data_override.empty() ? info.data_path : data_override);
  InferenceModel m;
  load_inference(m, ds, run);
  auto pool = ds.indices(Split::kHeldOutSample);
  if (pool.size() < rows + cols) pool = ds.indices(Split::kTrain);
  if (pool.size() < rows + cols) throw InputError("not enough samples for the requested grid");
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::vector<std::size_t> r(pool.begin(), pool.begin() + rows), c(pool.begin() + rows, pool.begin() + rows + cols);
  write_png(out, transfer_grid(*m.gen, *m.class_enc, *m.content_enc, ds.batch(r), ds.batch(c)));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_diagnose_kl(const fs::path& run, const std::string& data_override) {
  const RunInfo info = read_run(run);
  if (info.cfg.regularizer != Regularizer::kKl) {
    throw InputError("diagnose-kl needs a KL-regularized run; this run uses regularizer=" +
                     to_string(info.cfg.regularizer));
  }
  const auto ds = open_dataset(data_override.empty() ? info.data_path : data_override);
  Stage1Trainer s1 = load_stage1(ds, run);
  const auto stats = kl_collapse_stats(*s1.content_encoder(), ds, s1.train_indices());
  write_text(run / "kl_stats.csv", kl_stats_csv(stats));
  ordered_json j;
  j["dims"] = stats.mean_mu.size();
  j["collapsed"] = stats.collapsed;
  j["escaped"] = stats.escaped;
  j["collapse_fraction"] = stats.collapse_fraction;
  j["csv"] = (run / "kl_stats.csv").string();
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_curve(const std::vector<std::string>& runs, const std::string& out) {
  std::map<std::string, std::vector<std::pair<std::size_t, double>>> curves;
  for (const auto& r : runs) {
    const RunInfo info = read_run(r);
    std::string name = to_string(info.cfg.mode);
    if (curves.count(name)) name += ":" + fs::path(r).filename().string();
    curves[name] = read_probe_curve(r);
  }
  const std::string csv = curves_csv(curves);
  const std::string path = out.empty() ? (fs::path(runs.front()) / "curve.csv").string() : out;
  write_text(path, csv);
  std::cout << csv;
  return 0;
}

int cmd_cluster(const std::string& data, std::size_t l, const std::string& out, std::uint64_t seed,
                const std::string& sheets, const std::string& relabeled) {
  if (l == 0) throw InputError("--l must be >= 1");
  const auto ds = open_dataset(data);
  const auto a = style_cluster(ds, l, seed);
  for (const auto& w : a.warnings) std::cerr << "warning: " << w << "\n";
  write_text(out, assignments_csv(a));
  if (!sheets.empty()) {
    fs::create_directories(sheets);
    for (std::size_t y = 0; y < ds.num_labels(); ++y) {
      char name[32];
      std::snprintf(name, sizeof name, "class_%03zu.png", y);
      write_png((fs::path(sheets) / name).string(), cluster_sheet(ds, a, y, 8));
    }
  }
  if (!relabeled.empty()) save_dataset(relabeled, relabel(ds, a.joint));
  if (ds.spec.style_variants > 1) std::cerr << "purity vs. rendered styles: " << cluster_purity(a, ds.styles) << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class/content disentanglement by latent optimization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string spec_path, out, png_dir, data, config_path, mode, regularizer, run, sheets, relabeled;
  std::vector<std::string> sets, runs;
  bool resume = false;
  std::size_t rows = 5, cols = 5, l = 2;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Render a factor dataset");
  gen->add_option("--spec", spec_path, "key = value dataset spec");
  gen->add_option("--set", sets, "spec override key=value (repeatable)");
  gen->add_option("--out", out, "output .lords file")->required();
  gen->add_option("--export-png", png_dir, "also write PNGs and manifest.csv here");

  auto* t1 = app.add_subcommand("train1", "Stage 1: latent optimization (or an ablation variant)");
  t1->add_option("--data", data, ".lords dataset")->required();
  t1->add_option("--config", config_path, "key = value run config");
  t1->add_option("--set", sets, "config override key=value (repeatable)");
  t1->add_option("--mode", mode, "latent | amortized | semi_amortized");
  t1->add_option("--regularizer", regularizer, "noise | kl | none");
  t1->add_option("--out", run, "run directory")->required();
  t1->add_flag("--resume", resume, "continue from stage1.ckpt");

  auto* t2 = app.add_subcommand("train2", "Stage 2: amortize the learned codes into encoders");
  t2->add_option("--run", run, "run directory")->required();
  t2->add_flag("--resume", resume, "continue from stage2.ckpt");

  auto* ev = app.add_subcommand("eval", "Transfer error, probes and regression into metrics.json");
  ev->add_option("--run", run, "run directory")->required();
  ev->add_option("--data", data, "dataset (defaults to the one used for training)");

  auto* gr = app.add_subcommand("grid", "Transfer grid PNG");
  gr->add_option("--run", run, "run directory")->required();
  gr->add_option("--data", data, "dataset (defaults to the one used for training)");
  gr->add_option("--rows", rows, "class sources");
  gr->add_option("--cols", cols, "content sources");
  gr->add_option("--seed", seed, "sample selection seed");
  gr->add_option("--out", out, "output PNG")->required();

  auto* kl = app.add_subcommand("diagnose-kl", "Posterior collapse statistics of a KL run");
  kl->add_option("--run", run, "run directory")->required();
  kl->add_option("--data", data, "dataset (defaults to the one used for training)");

  auto* cu = app.add_subcommand("curve", "Per-epoch class-from-content probe curve CSV");
  cu->add_option("--run", runs, "run directory (repeatable)")->required();
  cu->add_option("--out", out, "output CSV (default <first run>/curve.csv)");

  auto* cl = app.add_subcommand("cluster", "Per-class style clustering into joint labels");
  cl->add_option("--data", data, ".lords dataset")->required();
  cl->add_option("--l", l, "styles per class");
  cl->add_option("--out", out, "assignments CSV")->required();
  cl->add_option("--seed", seed, "k-means seed");
  cl->add_option("--sheets", sheets, "directory for per-class sample sheets");
  cl->add_option("--relabeled", relabeled, "write a copy of the dataset with joint labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, sets, out, png_dir);
    if (t1->parsed()) return cmd_train1(data, config_path, sets, mode, regularizer, run, resume);
    if (t2->parsed()) return cmd_train2(run, resume);
    if (ev->parsed()) return cmd_eval(run, data);
    if (gr->parsed()) return cmd_grid(run, data, rows, cols, out, seed);
    if (kl->parsed()) return cmd_diagnose_kl(run, data);
    if (cu->parsed()) return cmd_curve(runs, out);
    if (cl->parsed()) return cmd_cluster(data, l, out, seed, sheets, relabeled);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
