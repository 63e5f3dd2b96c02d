// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0

#include "lord/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "lord/serialize.hpp"

namespace lord {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, std::span<const std::uint8_t> data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  put_be32(out, crc32_of({out.data() + start, out.size() - start}));
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RasterImage& image) {
  if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("png: 1 or 3 channels supported");
  const std::size_t stride = image.width * image.channels;
  if (image.pixels.size() != stride * image.height || image.width == 0 || image.height == 0) {
    throw std::invalid_argument("png: pixel buffer does not match dimensions");
  }
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), image.pixels.begin() + y * stride, image.pixels.begin() + (y + 1) * stride);
  }
  uLongf zlen = compressBound(raw.size());
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), raw.size(), 6) != Z_OK) throw std::runtime_error("png: deflate failed");
  z.resize(zlen);

  std::vector<std::uint8_t> out(kSignature, kSignature + 8);
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(image.width));
  put_be32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.push_back(8);                                // bit depth
  ihdr.push_back(image.channels == 3 ? 2 : 0);      // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", z);
  put_chunk(out, "IEND", {});
  return out;
}

RasterImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) throw std::runtime_error("png: bad signature");
  RasterImage img;
  std::vector<std::uint8_t> z;
  std::size_t pos = 8;
  bool have_header = false;
  while (pos + 12 <= bytes.size()) {
    const std::uint32_t len = get_be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw std::runtime_error("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const std::uint8_t* data = bytes.data() + pos + 8;
    if (get_be32(data + len) != crc32_of({bytes.data() + pos + 4, len + 4})) throw std::runtime_error("png: chunk crc");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("png: bad IHDR");
      img.width = get_be32(data);
      img.height = get_be32(data + 4);
      if (data[8] != 8 || (data[9] != 0 && data[9] != 2) || data[12] != 0) {
        throw std::runtime_error("png: only 8-bit non-interlaced gray/RGB is supported");
      }
      img.channels = data[9] == 2 ? 3 : 1;
      have_header = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      z.insert(z.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!have_header) throw std::runtime_error("png: missing IHDR");
  const std::size_t stride = img.width * img.channels;
  std::vector<std::uint8_t> raw((stride + 1) * img.height);
  uLongf rlen = raw.size();
  if (uncompress(raw.data(), &rlen, z.data(), z.size()) != Z_OK || rlen != raw.size()) {
    throw std::runtime_error("png: inflate failed");
  }
  img.pixels.resize(stride * img.height);
  const std::size_t bpp = img.channels;
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* row = img.pixels.data() + y * stride;
    const std::uint8_t* prev = y ? row - stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? row[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
      int pred = 0;
      switch (filter) {
        case 0: pred = 0; break;
        case 1: pred = a; break;
        case 2: pred = b; break;
        case 3: pred = (a + b) / 2; break;
        case 4: pred = paeth(a, b, c); break;
        default: throw std::runtime_error("png: bad filter type");
      }
      row[i] = static_cast<std::uint8_t>(src[i] + pred);
    }
  }
  return img;
}

void write_png(const std::string& path, const RasterImage& image) { write_file_bytes(path, encode_png(image)); }

RasterImage read_png(const std::string& path) { return decode_png(read_file_bytes(path)); }

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

RasterImage to_raster(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("to_raster: expected [C x H x W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw ShapeError("to_raster: 1 or 3 channels supported");
  RasterImage out{w, h, c, std::vector<std::uint8_t>(c * h * w)};
  auto d = image.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p) out.pixels[p * c + ch] = to_byte(d[ch * h * w + p]);
  return out;
}

void paste(RasterImage& canvas, const RasterImage& tile, std::size_t x, std::size_t y) {
  if (tile.channels != canvas.channels || x + tile.width > canvas.width || y + tile.height > canvas.height) {
    throw std::invalid_argument("paste: tile does not fit canvas");
  }
  const std::size_t c = canvas.channels;
  for (std::size_t r = 0; r < tile.height; ++r) {
    std::copy_n(tile.pixels.data() + r * tile.width * c, tile.width * c,
                canvas.pixels.data() + ((y + r) * canvas.width + x) * c);
  }
}

}  // namespace lord
