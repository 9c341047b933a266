#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "tancount/tensor.hpp"

namespace tancount {

/// Sub-pixel head positions for one frame; every point lies in
/// [0, image_w) x [0, image_h).
struct HeadAnnotations {
  std::vector<std::array<double, 2>> points;  // (x, y)
  int64_t image_w = 0;
  int64_t image_h = 0;
};

/// Non-negative density grid whose integral approximates the head count.
/// scale is the downsample factor relative to the source image (1 for full
/// resolution ground truth, 8 for network output).
struct DensityMap {
  Tensor<float> grid;  // rows x cols = H x W
  int scale = 1;

  double count() const { return grid.sum(); }
};

/// Binary region-of-interest mask at source resolution.
struct RoiMask {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> inside;  // 0 or 1, row-major
};

struct SigmaOptions {
  int k_nn = 3;
  double beta = 0.3;
  double fallback = 15.0;  // used when there are too few neighbors
  double floor = 0.5;      // keeps coincident points from degenerating
};

/// Geometry-adaptive spreads: sigma_i = beta * mean distance to the k_nn
/// nearest other points. Sets with fewer than k_nn + 1 points fall back to
/// opt.fallback; every sigma is floored at opt.floor.
std::vector<double> adaptive_sigmas(const HeadAnnotations& ann,
                                    const SigmaOptions& opt);

/// Sum of per-head Gaussians truncated at radius 4*sigma, each stamp
/// renormalized to unit mass after truncation and boundary clipping, sampled
/// at integer pixel coordinates. Output grid is image_h x image_w.
DensityMap render_density(const HeadAnnotations& ann,
                          const std::vector<double>& sigmas);

/// Same with one spread for every head (the fixed-kernel mode).
DensityMap render_density_fixed(const HeadAnnotations& ann, double sigma);

/// Zeroes grid cells outside the ROI; the mask is nearest-resampled to the
/// grid resolution first. Idempotent.
void apply_roi(Tensor<float>* grid, const RoiMask& roi);
void apply_roi(DensityMap* map, const RoiMask& roi);

/// Count-preserving downsample to the network's output grid: sum pooling by
/// `factor` with floor cropping.
DensityMap downsample_gt(const DensityMap& map, int factor = 8);

}  // namespace tancount
