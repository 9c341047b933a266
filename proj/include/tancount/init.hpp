#pragma once

#include "tancount/rng.hpp"
#include "tancount/tensor.hpp"

namespace tancount {

/// I.i.d. zero-mean Gaussian tensor; identical for identical seeds.
template <typename T>
Tensor<T> gaussian_init(std::vector<int64_t> shape, double stddev, Rng& rng) {
  check(stddev > 0.0, "gaussian_init: stddev must be > 0");
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace tancount
