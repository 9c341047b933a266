#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tancount/tensor.hpp"

namespace tancount {

/// 8-bit interleaved image, c in {1, 3}.
struct ImageU8 {
  int64_t h = 0, w = 0, c = 0;
  std::vector<uint8_t> pix;

  uint8_t& at(int64_t y, int64_t x, int64_t ch) {
    return pix[static_cast<size_t>((y * w + x) * c + ch)];
  }
  uint8_t at(int64_t y, int64_t x, int64_t ch) const {
    return pix[static_cast<size_t>((y * w + x) * c + ch)];
  }
};

/// Reads an 8-bit non-interlaced PNG (gray, gray+alpha, RGB or RGBA; alpha
/// is dropped).
ImageU8 read_png(const std::filesystem::path& path);

struct PngHeader {
  int64_t h = 0, w = 0, c = 0;
};

/// Parses only the IHDR chunk; cheap enough to validate whole sequences.
PngHeader read_png_header(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const ImageU8& img);

/// [0,1]-scaled HxWxC float tensor; single-channel images are replicated to
/// three channels when replicate_gray is set (the canonical network input).
Tensor<float> image_to_tensor(const ImageU8& img, bool replicate_gray = true);

/// Max-normalized 8-bit rendering of a density grid for visual inspection.
ImageU8 heatmap_u8(const Tensor<float>& grid);

}  // namespace tancount
