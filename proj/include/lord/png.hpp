// Copyright 2026 The LORD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal 8-bit grayscale / RGB PNG encoding and decoding (zlib-backed).

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;           // 1 or 3
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  bool operator==(const RasterImage&) const = default;
};

std::vector<std::uint8_t> encode_png(const RasterImage& image);
RasterImage decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::string& path, const RasterImage& image);
RasterImage read_png(const std::string& path);

// [C x H x W] tensor with values in [0, 1] -> raster (values rounded).
RasterImage to_raster(const Tensor& image);
std::uint8_t to_byte(double v);

// Pastes `tile` with its top-left corner at (x, y).
void paste(RasterImage& canvas, const RasterImage& tile, std::size_t x, std::size_t y);

}  // namespace lord
