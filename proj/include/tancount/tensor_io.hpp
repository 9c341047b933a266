#pragma once

#include <filesystem>
#include <string>

#include "tancount/tensor.hpp"

namespace tancount {

// Flat binary tensor container used for all checkpoints: magic "TAN1",
// one byte element width (4 = f32, 8 = f64), then rank and extents as
// little-endian u64, then the row-major payload in little-endian order.

template <typename T>
void save_tensor(const Tensor<T>& t, const std::filesystem::path& path);

/// Loads a container, converting element precision to T when they differ.
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

extern template void save_tensor<float>(const Tensor<float>&,
                                        const std::filesystem::path&);
extern template void save_tensor<double>(const Tensor<double>&,
                                         const std::filesystem::path&);
extern template Tensor<float> load_tensor<float>(const std::filesystem::path&);
extern template Tensor<double> load_tensor<double>(
    const std::filesystem::path&);

}  // namespace tancount
