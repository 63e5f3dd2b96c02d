// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "lord/model.hpp"
#include "lord/png.hpp"
#include "lord/serialize.hpp"

namespace lord {

namespace {

constexpr std::size_t kTextureSize = 64;
constexpr std::size_t kSupersample = 4;
constexpr std::uint32_t kDatasetVersion = 1;
constexpr char kDatasetMagic[4] = {'L', 'R', 'D', 'S'};

struct Glyph {
  std::vector<double> coverage;  // kTextureSize^2, over local coords [-1, 1]^2
};

bool inside_polygon(const std::vector<std::array<double, 2>>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

Glyph make_glyph(std::size_t class_id, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x61797068, class_id));
  std::uniform_int_distribution<int> nv(5, 9);
  std::uniform_real_distribution<double> jitter(-0.35, 0.35), radius(0.45, 1.0),
      phase(0.0, 2.0 * std::numbers::pi);
  const int n = nv(rng);
  const double ph = phase(rng);
  std::vector<std::array<double, 2>> poly;
  for (int i = 0; i < n; ++i) {
    const double a = ph + 2.0 * std::numbers::pi * (i + jitter(rng)) / n;
    const double r = radius(rng);
    poly.push_back({r * std::cos(a), r * std::sin(a)});
  }
  Glyph g;
  g.coverage.resize(kTextureSize * kTextureSize);
  const double cell = 2.0 / kTextureSize;
  for (std::size_t ty = 0; ty < kTextureSize; ++ty)
    for (std::size_t tx = 0; tx < kTextureSize; ++tx) {
      int hits = 0;
      for (std::size_t sy = 0; sy < kSupersample; ++sy)
        for (std::size_t sx = 0; sx < kSupersample; ++sx) {
          const double x = -1.0 + cell * (tx + (sx + 0.5) / kSupersample);
          const double y = -1.0 + cell * (ty + (sy + 0.5) / kSupersample);
          hits += inside_polygon(poly, x, y);
        }
      g.coverage[ty * kTextureSize + tx] = static_cast<double>(hits) / (kSupersample * kSupersample);
    }
  return g;
}

// Bilinear lookup; zero outside the texture.
double sample(const Glyph& g, double u, double v) {
  const double x = (u + 1.0) * 0.5 * kTextureSize - 0.5;
  const double y = (v + 1.0) * 0.5 * kTextureSize - 0.5;
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  auto at = [&](long ix, long iy) {
    if (ix < 0 || iy < 0 || ix >= static_cast<long>(kTextureSize) || iy >= static_cast<long>(kTextureSize)) {
      return 0.0;
    }
    return g.coverage[iy * kTextureSize + ix];
  };
  const long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
  return (1 - ay) * ((1 - ax) * at(ix, iy) + ax * at(ix + 1, iy)) +
         ay * ((1 - ax) * at(ix, iy + 1) + ax * at(ix + 1, iy + 1));
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  switch (static_cast<int>(hp) % 6) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (double& ch : rgb) ch += v - c;
  return rgb;
}

double quantize(double v) { return static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0; }

void render_into(const Glyph& glyph, std::size_t class_id, const ContentFactors& cf, std::size_t style_id,
                 const FactorSpec& spec, double* out) {
  const std::size_t s = spec.image_size;
  // Style: palette shift plus background level.
  static constexpr double kBackground[4] = {0.08, 0.55, 0.3, 0.75};
  const double hue = static_cast<double>(class_id) / spec.k_classes + 0.15 * style_id;
  const auto fg = hsv_to_rgb(hue, 0.85, 0.95);
  const double bg = kBackground[style_id % 4];
  const auto bg_rgb = hsv_to_rgb(hue + 0.5, 0.15, bg);

  const double theta = cf.rot * spec.rot_step_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cx = 0.5 * s + (static_cast<double>(cf.fx) - 0.5 * (spec.grid_x - 1.0)) * spec.shift_px;
  const double cy = 0.5 * s + (static_cast<double>(cf.fy) - 0.5 * (spec.grid_y - 1.0)) * spec.shift_px;
  const double inv_r = 1.0 / (spec.glyph_radius * s);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (ct * dx + st * dy) * inv_r;
      const double v = (-st * dx + ct * dy) * inv_r;
      const double m = sample(glyph, u, v);
      const double shade = 0.75 + 0.25 * std::clamp(u, -1.0, 1.0);
      std::array<double, 3> rgb;
      for (int c = 0; c < 3; ++c) rgb[c] = bg_rgb[c] * (1.0 - m) + fg[c] * shade * m;
      if (spec.channels == 3) {
        for (int c = 0; c < 3; ++c) out[c * s * s + y * s + x] = quantize(rgb[c]);
      } else {
        out[y * s + x] = quantize(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
      }
    }
}

void check_factors(std::size_t class_id, const ContentFactors& cf, std::size_t style_id, const FactorSpec& spec) {
  if (class_id >= spec.k_classes || cf.fx >= spec.grid_x || cf.fy >= spec.grid_y || cf.rot >= spec.grid_rot ||
      style_id >= spec.style_variants) {
    throw std::out_of_range("render: factors outside the factor grid");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// FactorSpec

void FactorSpec::validate() const {
  if (k_classes == 0 || grid_x == 0 || grid_y == 0 || grid_rot == 0 || style_variants == 0) {
    throw ConfigError("dataset spec: all grid extents must be positive");
  }
  if (image_size < 8) throw ConfigError("dataset spec: image_size must be >= 8");
  if (channels != 1 && channels != 3) throw ConfigError("dataset spec: channels must be 1 or 3");
  if (holdout_classes >= k_classes) throw ConfigError("dataset spec: must keep at least one training class");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("dataset spec: holdout_fraction must be in [0, 1)");
  }
  if (glyph_radius <= 0.0) throw ConfigError("dataset spec: glyph_radius must be positive");
}

std::string FactorSpec::to_text() const {
  std::ostringstream os;
  os << "k_classes = " << k_classes << "\n"
     << "grid_x = " << grid_x << "\n"
     << "grid_y = " << grid_y << "\n"
     << "grid_rot = " << grid_rot << "\n"
     << "style_variants = " << style_variants << "\n"
     << "image_size = " << image_size << "\n"
     << "channels = " << channels << "\n"
     << "shift_px = " << shift_px << "\n"
     << "rot_step_deg = " << format_double(rot_step_deg) << "\n"
     << "glyph_radius = " << format_double(glyph_radius) << "\n"
     << "holdout_classes = " << holdout_classes << "\n"
     << "holdout_fraction = " << format_double(holdout_fraction) << "\n"
     << "seed = " << seed << "\n";
  return os.str();
}

FactorSpec FactorSpec::from_key_values(const KeyValues& kv) {
  FactorSpec s;
  for (const auto& [key, value] : kv) {
    if (key == "k_classes") s.k_classes = parse_uint_value(key, value);
    else if (key == "grid_x") s.grid_x = parse_uint_value(key, value);
    else if (key == "grid_y") s.grid_y = parse_uint_value(key, value);
    else if (key == "grid_rot") s.grid_rot = parse_uint_value(key, value);
    else if (key == "style_variants") s.style_variants = parse_uint_value(key, value);
    else if (key == "image_size") s.image_size = parse_uint_value(key, value);
    else if (key == "channels") s.channels = parse_uint_value(key, value);
    else if (key == "shift_px") s.shift_px = parse_uint_value(key, value);
    else if (key == "rot_step_deg") s.rot_step_deg = parse_double_value(key, value);
    else if (key == "glyph_radius") s.glyph_radius = parse_double_value(key, value);
    else if (key == "holdout_classes") s.holdout_classes = parse_uint_value(key, value);
    else if (key == "holdout_fraction") s.holdout_fraction = parse_double_value(key, value);
    else if (key == "seed") s.seed = parse_uint_value(key, value);
    else throw ConfigError("dataset spec: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

Tensor render(std::size_t class_id, const ContentFactors& content, std::size_t style_id, const FactorSpec& spec) {
  spec.validate();
  check_factors(class_id, content, style_id, spec);
  Tensor out({spec.channels, spec.image_size, spec.image_size});
  render_into(make_glyph(class_id, spec.seed), class_id, content, style_id, spec, out.data_mut().data());
  return out;
}

Tensor transfer_target(std::size_t class_i, const ContentFactors& content_j, std::size_t style_i,
                       const FactorSpec& spec) {
  return render(class_i, content_j, style_i, spec);
}

FactorDataset build_dataset(const FactorSpec& spec) {
  spec.validate();
  FactorDataset ds;
  ds.spec = spec;
  const std::size_t n = spec.num_samples(), numel = ds.image_numel();
  ds.pixels.resize(n * numel);
  for (std::size_t y = 0; y < spec.k_classes; ++y) {
    const Glyph glyph = make_glyph(y, spec.seed);
    for (std::size_t st = 0; st < spec.style_variants; ++st)
      for (std::size_t fx = 0; fx < spec.grid_x; ++fx)
        for (std::size_t fy = 0; fy < spec.grid_y; ++fy)
          for (std::size_t r = 0; r < spec.grid_rot; ++r) {
            const ContentFactors cf{fx, fy, r};
            render_into(glyph, y, cf, st, spec, ds.pixels.data() + ds.size() * numel);
            ds.classes.push_back(y);
            ds.labels.push_back(y);
            ds.styles.push_back(st);
            ds.content.push_back(cf);
          }
  }

  // Held-out classes first, then a fraction of the remaining samples.
  std::mt19937_64 rng(mix_seed(spec.seed, 0x5911175));
  std::vector<std::size_t> classes(spec.k_classes);
  for (std::size_t i = 0; i < classes.size(); ++i) classes[i] = i;
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<bool> held_class(spec.k_classes, false);
  for (std::size_t i = 0; i < spec.holdout_classes; ++i) held_class[classes[i]] = true;

  ds.split.assign(n, Split::kTrain);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (held_class[ds.classes[i]]) ds.split[i] = Split::kHeldOutClass;
    else pool.push_back(i);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto n_held = static_cast<std::size_t>(std::llround(spec.holdout_fraction * pool.size()));
  for (std::size_t i = 0; i < n_held; ++i) ds.split[pool[i]] = Split::kHeldOutSample;
  return ds;
}

// ---------------------------------------------------------------------------
// FactorDataset

Tensor FactorDataset::image(std::size_t i) const {
  const std::size_t numel = image_numel();
  return Tensor(image_shape(), std::vector<double>(pixels.begin() + i * numel, pixels.begin() + (i + 1) * numel));
}

Tensor FactorDataset::batch(std::span<const std::size_t> idx) const {
  if (idx.empty()) throw std::invalid_argument("batch: empty index list");
  const std::size_t numel = image_numel();
  std::vector<double> out(idx.size() * numel);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= size()) throw std::out_of_range("batch: sample index out of range");
    std::copy_n(pixels.begin() + idx[b] * numel, numel, out.begin() + b * numel);
  }
  return Tensor({idx.size(), spec.channels, spec.image_size, spec.image_size}, std::move(out));
}

std::vector<std::size_t> FactorDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::size_t FactorDataset::content_cell(std::size_t i) const {
  const auto& c = content[i];
  return (c.fx * spec.grid_y + c.fy) * spec.grid_rot + c.rot;
}

std::array<double, 3> FactorDataset::content_real(std::size_t i) const {
  auto scale = [](std::size_t v, std::size_t n) { return n > 1 ? static_cast<double>(v) / (n - 1) : 0.0; };
  const auto& c = content[i];
  return {scale(c.fx, spec.grid_x), scale(c.fy, spec.grid_y), scale(c.rot, spec.grid_rot)};
}

std::size_t FactorDataset::num_labels() const {
  std::size_t m = 0;
  for (std::size_t y : labels) m = std::max(m, y + 1);
  return m;
}

FactorDataset relabel(const FactorDataset& ds, const std::vector<std::size_t>& labels) {
  if (labels.size() != ds.size()) throw std::invalid_argument("relabel: label count mismatch");
  FactorDataset out = ds;
  out.labels = labels;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

void save_dataset(const std::string& path, const FactorDataset& ds) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kDatasetMagic), 4});
  w.u32(kDatasetVersion);
  w.str(ds.spec.to_text());
  w.u64(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(ds.classes[i]));
    w.u32(static_cast<std::uint32_t>(ds.labels[i]));
    w.u32(static_cast<std::uint32_t>(ds.styles[i]));
    w.u32(static_cast<std::uint32_t>(ds.content[i].fx));
    w.u32(static_cast<std::uint32_t>(ds.content[i].fy));
    w.u32(static_cast<std::uint32_t>(ds.content[i].rot));
    w.u8(static_cast<std::uint8_t>(ds.split[i]));
  }
  auto& bytes = w.bytes();
  bytes.reserve(bytes.size() + ds.pixels.size() + 4);
  for (double v : ds.pixels) bytes.push_back(to_byte(v));
  w.u32(crc32_of(bytes));
  write_file_bytes(path, bytes);
}

FactorDataset load_dataset(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    throw std::runtime_error(path + ": not a dataset file (bad magic)");
  }
  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - 4);
  if (crc32_of(body) != stored) throw std::runtime_error(path + ": checksum mismatch");
  ByteReader r(body.subspan(4));
  if (const auto v = r.u32(); v != kDatasetVersion) {
    throw std::runtime_error(path + ": unsupported dataset version " + std::to_string(v));
  }
  FactorDataset ds;
  ds.spec = FactorSpec::from_key_values(parse_key_values(r.str()));
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    ds.classes.push_back(r.u32());
    ds.labels.push_back(r.u32());
    ds.styles.push_back(r.u32());
    if (ds.classes.back() >= ds.spec.k_classes || ds.styles.back() >= ds.spec.style_variants) {
      throw std::runtime_error(path + ": factor out of range for the stored spec");
    }
    ContentFactors cf;
    cf.fx = r.u32();
    cf.fy = r.u32();
    cf.rot = r.u32();
    ds.content.push_back(cf);
    const std::uint8_t s = r.u8();
    if (s > 2) throw std::runtime_error(path + ": bad split tag");
    ds.split.push_back(static_cast<Split>(s));
  }
  const std::size_t total = n * ds.image_numel();
  auto payload = r.raw(total);
  if (r.remaining() != 0) throw std::runtime_error(path + ": trailing bytes");
  ds.pixels.resize(total);
  for (std::size_t i = 0; i < total; ++i) ds.pixels[i] = payload[i] / 255.0;
  return ds;
}

void export_png_folder(const FactorDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(std::filesystem::path(dir) / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "filename,class,style,fx,fy,rot\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    write_png((std::filesystem::path(dir) / name).string(), to_raster(ds.image(i)));
    const auto& c = ds.content[i];
    manifest << name << ',' << ds.classes[i] << ',' << ds.styles[i] << ',' << c.fx << ',' << c.fy << ',' << c.rot
             << '\n';
  }
}

}  // namespace lord
