#include "tancount/density.hpp"

#include <algorithm>
#include <cmath>

#include "tancount/ops.hpp"

namespace tancount {

std::vector<double> adaptive_sigmas(const HeadAnnotations& ann,
                                    const SigmaOptions& opt) {
  check(opt.k_nn >= 1, "adaptive_sigmas: k_nn must be >= 1");
  check(opt.beta > 0.0, "adaptive_sigmas: beta must be > 0");
  const auto& pts = ann.points;
  const size_t n = pts.size();
  std::vector<double> sigmas(n);
  if (n == 0) return sigmas;
  if (n < static_cast<size_t>(opt.k_nn) + 1) {
    std::fill(sigmas.begin(), sigmas.end(),
              std::max(opt.fallback, opt.floor));
    return sigmas;
  }
  std::vector<double> d2(n - 1);
  for (size_t i = 0; i < n; ++i) {
    size_t m = 0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dx = pts[i][0] - pts[j][0];
      double dy = pts[i][1] - pts[j][1];
      d2[m++] = dx * dx + dy * dy;
    }
    std::partial_sort(d2.begin(), d2.begin() + opt.k_nn, d2.end());
    double mean = 0.0;
    for (int k = 0; k < opt.k_nn; ++k) mean += std::sqrt(d2[static_cast<size_t>(k)]);
    mean /= opt.k_nn;
    sigmas[i] = std::max(opt.beta * mean, opt.floor);
  }
  return sigmas;
}

namespace {

void stamp_gaussian(Tensor<float>* grid, double cx, double cy, double sigma) {
  const int64_t h = grid->extent(0), w = grid->extent(1);
  // Real-distance truncation keeps the sampled cell set mirror-equivariant.
  const double radius = 4.0 * sigma;
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(cx - radius)));
  const int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::floor(cx + radius)));
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(cy - radius)));
  const int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::floor(cy + radius)));
  if (x1 < x0 || y1 < y0) return;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const int64_t sw = x1 - x0 + 1, sh = y1 - y0 + 1;
  std::vector<double> stamp(static_cast<size_t>(sw * sh));
  double total = 0.0;
  for (int64_t y = y0; y <= y1; ++y) {
    double dy = static_cast<double>(y) - cy;
    for (int64_t x = x0; x <= x1; ++x) {
      double dx = static_cast<double>(x) - cx;
      double g = std::exp(-(dx * dx + dy * dy) * inv);
      stamp[static_cast<size_t>((y - y0) * sw + (x - x0))] = g;
      total += g;
    }
  }
  if (total <= 0.0) {
    // Degenerate spread: all mass on the nearest cell.
    int64_t xc = std::clamp<int64_t>(static_cast<int64_t>(std::lround(cx)), 0, w - 1);
    int64_t yc = std::clamp<int64_t>(static_cast<int64_t>(std::lround(cy)), 0, h - 1);
    (*grid)[yc * w + xc] += 1.0f;
    return;
  }
  const double norm = 1.0 / total;
  for (int64_t y = y0; y <= y1; ++y) {
    float* row = grid->data() + y * w;
    const double* srow = stamp.data() + (y - y0) * sw;
    for (int64_t x = x0; x <= x1; ++x)
      row[x] += static_cast<float>(srow[x - x0] * norm);
  }
}

}  // namespace

DensityMap render_density(const HeadAnnotations& ann,
                          const std::vector<double>& sigmas) {
  check(ann.image_w > 0 && ann.image_h > 0,
        "render_density: annotation set has no image size");
  check(sigmas.size() == ann.points.size(),
        "render_density: sigma count does not match point count");
  DensityMap map;
  map.grid = Tensor<float>({ann.image_h, ann.image_w});
  map.scale = 1;
  for (size_t i = 0; i < ann.points.size(); ++i) {
    check(sigmas[i] > 0.0, "render_density: sigma must be > 0");
    stamp_gaussian(&map.grid, ann.points[i][0], ann.points[i][1], sigmas[i]);
  }
  return map;
}

DensityMap render_density_fixed(const HeadAnnotations& ann, double sigma) {
  return render_density(
      ann, std::vector<double>(ann.points.size(), sigma));
}

void apply_roi(Tensor<float>* grid, const RoiMask& roi) {
  check(grid->rank() == 2, "apply_roi: grid must be HxW");
  check(roi.h > 0 && roi.w > 0 &&
            static_cast<int64_t>(roi.inside.size()) == roi.h * roi.w,
        "apply_roi: malformed mask");
  const int64_t h = grid->extent(0), w = grid->extent(1);
  for (int64_t y = 0; y < h; ++y) {
    // Nearest-neighbor resample of the mask to the grid resolution.
    int64_t sy = std::min<int64_t>(roi.h - 1, y * roi.h / h);
    float* row = grid->data() + y * w;
    const uint8_t* mrow = roi.inside.data() + sy * roi.w;
    for (int64_t x = 0; x < w; ++x) {
      int64_t sx = std::min<int64_t>(roi.w - 1, x * roi.w / w);
      if (!mrow[sx]) row[x] = 0.0f;
    }
  }
}

void apply_roi(DensityMap* map, const RoiMask& roi) {
  apply_roi(&map->grid, roi);
}

DensityMap downsample_gt(const DensityMap& map, int factor) {
  check(factor >= 1, "downsample_gt: factor must be >= 1");
  DensityMap out;
  out.grid = ops::sum_pool(map.grid, factor);
  out.scale = map.scale * factor;
  return out;
}

}  // namespace tancount
