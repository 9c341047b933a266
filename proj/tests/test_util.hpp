#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tancount/rng.hpp"
#include "tancount/tensor.hpp"

namespace tancount::testutil {

template <typename T>
Tensor<T> random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b,
                    double floor = 1e-6) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
    double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

/// Largest difference normalized by the peak magnitude; the right metric for
/// long accumulations where cancellation shrinks individual entries.
template <typename T>
double peak_rel_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double peak = 1e-30, worst = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    peak = std::max({peak, std::abs(double(a[i])), std::abs(double(b[i]))});
  for (int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst / peak;
}

/// Central finite-difference check of one parameter tensor against its
/// analytic gradient. eval() recomputes the scalar loss at the current
/// parameter values; grad holds d(loss)/d(param). Checks up to max_coords
/// coordinates (all when the tensor is small). Returns the worst relative
/// error over the checked coordinates.
inline double fd_check(Tensor<double>& param,
                       const std::vector<double>& analytic,
                       const std::function<double()>& eval, double h,
                       int64_t max_coords, Rng& rng) {
  std::vector<int64_t> coords;
  if (param.size() <= max_coords) {
    for (int64_t i = 0; i < param.size(); ++i) coords.push_back(i);
  } else {
    for (int64_t i = 0; i < max_coords; ++i)
      coords.push_back(
          static_cast<int64_t>(rng.below(static_cast<uint64_t>(param.size()))));
  }
  double worst = 0.0;
  for (int64_t i : coords) {
    double saved = param[i];
    param[i] = saved + h;
    double fp = eval();
    param[i] = saved - h;
    double fm = eval();
    param[i] = saved;
    double numeric = (fp - fm) / (2.0 * h);
    double a = analytic[static_cast<size_t>(i)];
    double denom = std::max(std::abs(a), std::abs(numeric));
    if (denom < 1e-7) continue;  // both effectively zero
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

struct GatedFdResult {
  double worst = 0.0;      // max relative error over valid coordinates
  int64_t checked = 0;     // coordinates where the FD secant was consistent
  int64_t skipped = 0;     // coordinates straddling a kink of the piecewise
                           // composition (FD invalid there, by construction)
};

/// Central-difference check that first validates each coordinate: the secant
/// at h must agree with the secant at h/8, otherwise the interval crosses a
/// ReLU/argmax/|.| kink and the difference quotient does not estimate the
/// one-sided derivative. A wrong analytic gradient still fails: both secants
/// agree with each other and disagree with it.
inline GatedFdResult fd_check_gated(Tensor<double>& param,
                                    const std::vector<double>& analytic,
                                    const std::function<double()>& eval,
                                    double h, int64_t max_coords, Rng& rng) {
  std::vector<int64_t> coords;
  if (param.size() <= max_coords) {
    for (int64_t i = 0; i < param.size(); ++i) coords.push_back(i);
  } else {
    for (int64_t i = 0; i < max_coords; ++i)
      coords.push_back(
          static_cast<int64_t>(rng.below(static_cast<uint64_t>(param.size()))));
  }
  GatedFdResult res;
  for (int64_t i : coords) {
    double saved = param[i];
    auto secant = [&](double step) {
      param[i] = saved + step;
      double fp = eval();
      param[i] = saved - step;
      double fm = eval();
      param[i] = saved;
      return (fp - fm) / (2.0 * step);
    };
    double big = secant(h);
    double small = secant(h / 8.0);
    // Smooth coordinates agree to ~1e-9; any visible disagreement marks a
    // kink inside the +/-h interval.
    double scale = std::max({std::abs(big), std::abs(small), 1e-7});
    if (std::abs(big - small) / scale > 3e-5) {
      ++res.skipped;
      continue;
    }
    ++res.checked;
    double a = analytic[static_cast<size_t>(i)];
    double denom = std::max(std::abs(a), std::abs(big));
    if (denom < 1e-7) continue;
    res.worst = std::max(res.worst, std::abs(a - big) / denom);
  }
  return res;
}

}  // namespace tancount::testutil
