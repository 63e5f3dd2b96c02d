// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace lord {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, std::string v) {
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_uint(key, item));
  }
  return out;
}

std::string list_str(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::string num_str(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ConfigError("duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

double parse_double_value(const std::string& key, const std::string& value) {
  return parse_double(key, trim(value));
}

std::uint64_t parse_uint_value(const std::string& key, const std::string& value) {
  return parse_uint(key, trim(value));
}

std::string format_double(double v) { return num_str(v); }

KeyValues read_key_values_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::kNoise: return "noise";
    case Regularizer::kKl: return "kl";
    case Regularizer::kNone: return "none";
  }
  return "?";
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kLatent: return "latent";
    case TrainMode::kAmortized: return "amortized";
    case TrainMode::kSemiAmortized: return "semi_amortized";
  }
  return "?";
}

std::string to_string(ReconLoss l) {
  return l == ReconLoss::kPixelL1 ? "pixel_l1" : "perceptual_proxy";
}

void RunConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError(why); };
  if (!(sigma >= 0.0)) fail("sigma must be >= 0");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(kl_weight >= 0.0)) fail("kl_weight must be >= 0");
  if (d_content == 0 || d_class == 0) fail("code dimensions must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
  if (lr_gen < 0.0 || lr_latent < 0.0 || lr_encoder < 0.0) fail("learning rates must be >= 0");
  if (alpha1 < 0.0 || alpha2 < 0.0) fail("alpha1/alpha2 must be >= 0");
  if (image_channels == 0) fail("image_channels must be positive");
  if (image_size == 0 || image_size % 16 != 0) fail("image_size must be a positive multiple of 16");
  if (gen_widths.size() != 5) fail("gen_widths must list 5 hidden conv widths");
  if (enc_widths.size() != 5) fail("enc_widths must list 5 conv widths");
  for (auto w : gen_widths)
    if (w == 0) fail("gen_widths must be positive");
  for (auto w : enc_widths)
    if (w == 0) fail("enc_widths must be positive");
  if (gen_fc_hidden == 0 || gen_seed_channels == 0 || enc_fc_hidden == 0) fail("widths must be positive");
  if (mode == TrainMode::kLatent && regularizer == Regularizer::kKl) {
    fail("invalid combination: mode=latent has no posterior for regularizer=kl");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "seed = " << seed << '\n'
     << "sigma = " << num_str(sigma) << '\n'
     << "lambda = " << num_str(lambda) << '\n'
     << "kl_weight = " << num_str(kl_weight) << '\n'
     << "d_content = " << d_content << '\n'
     << "d_class = " << d_class << '\n'
     << "init_std = " << num_str(init_std) << '\n'
     << "epochs = " << epochs << '\n'
     << "stage2_epochs = " << stage2_epochs << '\n'
     << "batch_size = " << batch_size << '\n'
     << "lr_gen = " << num_str(lr_gen) << '\n'
     << "lr_latent = " << num_str(lr_latent) << '\n'
     << "lr_encoder = " << num_str(lr_encoder) << '\n'
     << "adam_beta1 = " << num_str(adam_beta1) << '\n'
     << "adam_beta2 = " << num_str(adam_beta2) << '\n'
     << "adam_eps = " << num_str(adam_eps) << '\n'
     << "alpha1 = " << num_str(alpha1) << '\n'
     << "alpha2 = " << num_str(alpha2) << '\n'
     << "regularizer = " << to_string(regularizer) << '\n'
     << "mode = " << to_string(mode) << '\n'
     << "loss = " << to_string(loss) << '\n'
     << "image_channels = " << image_channels << '\n'
     << "image_size = " << image_size << '\n'
     << "gen_fc_hidden = " << gen_fc_hidden << '\n'
     << "gen_seed_channels = " << gen_seed_channels << '\n'
     << "gen_widths = " << list_str(gen_widths) << '\n'
     << "enc_widths = " << list_str(enc_widths) << '\n'
     << "enc_fc_hidden = " << enc_fc_hidden << '\n'
     << "probe_every = " << probe_every << '\n'
     << "track_probe_epochs = " << track_probe_epochs << '\n';
  return os.str();
}

void RunConfig::apply(const KeyValues& kv) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto dbl = [](double& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_double(k, v); };
  };
  auto uns = [](std::size_t& field) -> Setter {
    return [&field](const std::string& k, const std::string& v) { field = parse_uint(k, v); };
  };
  const std::map<std::string, Setter> setters = {
      {"seed", [this](const std::string& k, const std::string& v) { seed = parse_uint(k, v); }},
      {"sigma", dbl(sigma)},
      {"lambda", dbl(lambda)},
      {"kl_weight", dbl(kl_weight)},
      {"d_content", uns(d_content)},
      {"d_class", uns(d_class)},
      {"init_std", dbl(init_std)},
      {"epochs", uns(epochs)},
      {"stage2_epochs", uns(stage2_epochs)},
      {"batch_size", uns(batch_size)},
      {"lr_gen", dbl(lr_gen)},
      {"lr_latent", dbl(lr_latent)},
      {"lr_encoder", dbl(lr_encoder)},
      {"adam_beta1", dbl(adam_beta1)},
      {"adam_beta2", dbl(adam_beta2)},
      {"adam_eps", dbl(adam_eps)},
      {"alpha1", dbl(alpha1)},
      {"alpha2", dbl(alpha2)},
      {"regularizer",
       [this](const std::string& k, const std::string& v) {
         if (v == "noise") regularizer = Regularizer::kNoise;
         else if (v == "kl") regularizer = Regularizer::kKl;
         else if (v == "none") regularizer = Regularizer::kNone;
         else throw ConfigError("key '" + k + "': expected noise|kl|none, got '" + v + "'");
       }},
      {"mode",
       [this](const std::string& k, const std::string& v) {
         if (v == "latent") mode = TrainMode::kLatent;
         else if (v == "amortized") mode = TrainMode::kAmortized;
         else if (v == "semi_amortized") mode = TrainMode::kSemiAmortized;
         else throw ConfigError("key '" + k + "': expected latent|amortized|semi_amortized, got '" + v + "'");
       }},
      {"loss",
       [this](const std::string& k, const std::string& v) {
         if (v == "pixel_l1") loss = ReconLoss::kPixelL1;
         else if (v == "perceptual_proxy") loss = ReconLoss::kPerceptualProxy;
         else throw ConfigError("key '" + k + "': expected pixel_l1|perceptual_proxy, got '" + v + "'");
       }},
      {"image_channels", uns(image_channels)},
      {"image_size", uns(image_size)},
      {"gen_fc_hidden", uns(gen_fc_hidden)},
      {"gen_seed_channels", uns(gen_seed_channels)},
      {"gen_widths", [this](const std::string& k, const std::string& v) { gen_widths = parse_list(k, v); }},
      {"enc_widths", [this](const std::string& k, const std::string& v) { enc_widths = parse_list(k, v); }},
      {"enc_fc_hidden", uns(enc_fc_hidden)},
      {"probe_every", uns(probe_every)},
      {"track_probe_epochs", uns(track_probe_epochs)},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  RunConfig cfg;
  cfg.apply(kv);
  cfg.validate();
  return cfg;
}

}  // namespace lord
