#pragma once

#include <type_traits>

#include "tancount/kernels.hpp"
#include "tancount/parallel.hpp"
#include "tancount/tensor.hpp"

// Shape-checked tensor operations. Float routes through the runtime-dispatched
// kernels; double always takes the scalar reference path (the verification
// precision). Backward variants accumulate into caller-provided gradients.

namespace tancount::ops {

namespace detail {

constexpr int64_t kParallelMinWork = 1 << 14;

inline void maybe_parallel(int64_t rows, int64_t work,
                           const std::function<void(int64_t, int64_t)>& fn) {
  if (work >= kParallelMinWork && rows > 1) {
    parallel_for(0, rows, fn);
  } else {
    fn(0, rows);
  }
}

}  // namespace detail

/// 2D convolution with zero "same" padding, kernel size 1 or 3.
/// in: HxWxCin, w: kxkxCinxCout, b: Cout. pad must be (k-1)/2.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b,
                 int pad) {
  check(in.rank() == 3, "conv2d: input must be HxWxC, got " + in.shape_string());
  check(w.rank() == 4, "conv2d: weights must be kxkxCinxCout, got " +
                           w.shape_string());
  const int64_t k = w.extent(0);
  check(k == w.extent(1) && (k == 1 || k == 3),
        "conv2d: kernel must be 1x1 or 3x3, got " + w.shape_string());
  check(pad == (k - 1) / 2, "conv2d: pad must preserve spatial size");
  const int64_t h = in.extent(0), wd = in.extent(1), cin = in.extent(2);
  const int64_t cout = w.extent(3);
  check(w.extent(2) == cin, "conv2d: weight Cin " + w.shape_string() +
                                " does not match input " + in.shape_string());
  check(b.rank() == 1 && b.extent(0) == cout,
        "conv2d: bias " + b.shape_string() + " does not match Cout");
  Tensor<T> out({h, wd, cout});
  if (k == 1) {
    const int64_t n = h * wd;
    auto run = [&](int64_t p0, int64_t p1) {
      if constexpr (std::is_same_v<T, float>) {
        kern::conv1x1_f32(in.data(), cin, w.data(), b.data(), cout, out.data(),
                          p0, p1);
      } else {
        kern::scalar::conv1x1(in.data(), cin, w.data(), b.data(), cout,
                              out.data(), p0, p1);
      }
    };
    detail::maybe_parallel(n, n * cin * cout, run);
    return out;
  }
  auto run = [&](int64_t y0, int64_t y1) {
    if constexpr (std::is_same_v<T, float>) {
      kern::conv2d3x3_f32(in.data(), h, wd, cin, w.data(), b.data(), cout,
                          out.data(), y0, y1);
    } else {
      kern::scalar::conv2d3x3(in.data(), h, wd, cin, w.data(), b.data(), cout,
                              out.data(), y0, y1);
    }
  };
  detail::maybe_parallel(h, h * wd * cin * cout * 9, run);
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& w,
                     const Tensor<T>& gout, Tensor<T>* gin, Tensor<T>* gw,
                     Tensor<T>* gb) {
  const int64_t k = w.extent(0);
  const int64_t h = in.extent(0), wd = in.extent(1), cin = in.extent(2);
  const int64_t cout = w.extent(3);
  if (k == 1) {
    kern::scalar::conv1x1_bwd(in.data(), gout.data(), h * wd, cin, w.data(),
                              cout, gin ? gin->data() : nullptr,
                              gw ? gw->data() : nullptr,
                              gb ? gb->data() : nullptr);
    return;
  }
  if (gin) {
    if constexpr (std::is_same_v<T, float>) {
      kern::conv2d3x3_bwd_input_f32(gout.data(), h, wd, cin, w.data(), cout,
                                    gin->data());
    } else {
      kern::scalar::conv2d3x3_bwd_input(gout.data(), h, wd, cin, w.data(),
                                        cout, gin->data());
    }
  }
  if (gw && gb) {
    if constexpr (std::is_same_v<T, float>) {
      kern::conv2d3x3_bwd_params_f32(in.data(), gout.data(), h, wd, cin, cout,
                                     gw->data(), gb->data());
    } else {
      kern::scalar::conv2d3x3_bwd_params(in.data(), gout.data(), h, wd, cin,
                                         cout, gw->data(), gb->data());
    }
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& in) {
  Tensor<T> out(in.shape());
  auto run = [&](int64_t i0, int64_t i1) {
    if constexpr (std::is_same_v<T, float>) {
      kern::relu_f32(in.data(), out.data(), i0, i1);
    } else {
      kern::scalar::relu(in.data(), out.data(), i0, i1);
    }
  };
  detail::maybe_parallel(in.size(), in.size(), run);
  return out;
}

template <typename T>
void relu_backward(const Tensor<T>& in, const Tensor<T>& gout, Tensor<T>* gin) {
  kern::scalar::relu_bwd(in.data(), gout.data(), gin->data(), in.size());
}

/// 2x2 max pool with floor semantics; input HxWxC (or HxW treated as C=1).
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& in) {
  check(in.rank() == 3 || in.rank() == 2,
        "maxpool2: input must be HxWxC or HxW, got " + in.shape_string());
  const int64_t h = in.extent(0), w = in.extent(1);
  const int64_t c = in.rank() == 3 ? in.extent(2) : 1;
  check(h >= 2 && w >= 2,
        "maxpool2: degenerate extent " + in.shape_string() + ", need >= 2x2");
  const int64_t oh = h / 2, ow = w / 2;
  Tensor<T> out(in.rank() == 3 ? std::vector<int64_t>{oh, ow, c}
                               : std::vector<int64_t>{oh, ow});
  auto run = [&](int64_t y0, int64_t y1) {
    if constexpr (std::is_same_v<T, float>) {
      kern::maxpool2_f32(in.data(), w, c, out.data(), ow, y0, y1);
    } else {
      kern::scalar::maxpool2(in.data(), w, c, out.data(), ow, y0, y1);
    }
  };
  detail::maybe_parallel(oh, oh * ow * c, run);
  return out;
}

template <typename T>
void maxpool2_backward(const Tensor<T>& in, const Tensor<T>& gout,
                       Tensor<T>* gin) {
  const int64_t h = in.extent(0), w = in.extent(1);
  const int64_t c = in.rank() == 3 ? in.extent(2) : 1;
  kern::scalar::maxpool2_bwd(in.data(), gout.data(), w, c, h / 2, w / 2,
                             gin->data());
}

/// Kernel-3 dilated 1D convolution over an LxC sequence, taps {-d, 0, +d},
/// zero padded so the length is preserved. w: 3xCinxCout, b: Cout.
template <typename T>
Tensor<T> dilated_conv1d(const Tensor<T>& in, const Tensor<T>& w,
                         const Tensor<T>& b, int d) {
  check(in.rank() == 2, "dilated_conv1d: input must be LxC, got " +
                            in.shape_string());
  check(d >= 1, "dilated_conv1d: dilation must be >= 1, got " +
                    std::to_string(d));
  const int64_t len = in.extent(0), cin = in.extent(1);
  check(len > 0, "dilated_conv1d: empty sequence");
  check(w.rank() == 3 && w.extent(0) == 3 && w.extent(1) == cin,
        "dilated_conv1d: weights must be 3x" + std::to_string(cin) +
            "xCout, got " + w.shape_string());
  const int64_t cout = w.extent(2);
  check(b.rank() == 1 && b.extent(0) == cout,
        "dilated_conv1d: bias " + b.shape_string() + " does not match Cout");
  Tensor<T> out({len, cout});
  auto run = [&](int64_t l0, int64_t l1) {
    if constexpr (std::is_same_v<T, float>) {
      kern::dconv1d_f32(in.data(), len, cin, w.data(), b.data(), d, cout,
                        out.data(), l0, l1);
    } else {
      kern::scalar::dconv1d(in.data(), len, cin, w.data(), b.data(), d, cout,
                            out.data(), l0, l1);
    }
  };
  detail::maybe_parallel(len, len * cin * cout * 3, run);
  return out;
}

template <typename T>
void dilated_conv1d_backward(const Tensor<T>& in, const Tensor<T>& w,
                             const Tensor<T>& gout, int d, Tensor<T>* gin,
                             Tensor<T>* gw, Tensor<T>* gb) {
  kern::scalar::dconv1d_bwd(in.data(), gout.data(), in.extent(0), in.extent(1),
                            w.data(), d, w.extent(2),
                            gin ? gin->data() : nullptr,
                            gw ? gw->data() : nullptr,
                            gb ? gb->data() : nullptr);
}

/// Pointwise channel mix over a sequence: LxCin -> LxCout. w: CinxCout.
template <typename T>
Tensor<T> conv1x1_seq(const Tensor<T>& in, const Tensor<T>& w,
                      const Tensor<T>& b) {
  check(in.rank() == 2, "conv1x1_seq: input must be LxC, got " +
                            in.shape_string());
  const int64_t len = in.extent(0), cin = in.extent(1);
  check(w.rank() == 2 && w.extent(0) == cin,
        "conv1x1_seq: weights " + w.shape_string() + " do not match input " +
            in.shape_string());
  const int64_t cout = w.extent(1);
  check(b.rank() == 1 && b.extent(0) == cout,
        "conv1x1_seq: bias " + b.shape_string() + " does not match Cout");
  Tensor<T> out({len, cout});
  auto run = [&](int64_t p0, int64_t p1) {
    if constexpr (std::is_same_v<T, float>) {
      kern::conv1x1_f32(in.data(), cin, w.data(), b.data(), cout, out.data(),
                        p0, p1);
    } else {
      kern::scalar::conv1x1(in.data(), cin, w.data(), b.data(), cout,
                            out.data(), p0, p1);
    }
  };
  detail::maybe_parallel(len, len * cin * cout, run);
  return out;
}

template <typename T>
void conv1x1_seq_backward(const Tensor<T>& in, const Tensor<T>& w,
                          const Tensor<T>& gout, Tensor<T>* gin, Tensor<T>* gw,
                          Tensor<T>* gb) {
  kern::scalar::conv1x1_bwd(in.data(), gout.data(), in.extent(0), in.extent(1),
                            w.data(), w.extent(1),
                            gin ? gin->data() : nullptr,
                            gw ? gw->data() : nullptr,
                            gb ? gb->data() : nullptr);
}

/// Sum pooling by an f x f window with floor cropping; preserves total mass
/// when f divides both extents. Input HxW.
template <typename T>
Tensor<T> sum_pool(const Tensor<T>& in, int factor) {
  check(in.rank() == 2, "sum_pool: input must be HxW, got " +
                            in.shape_string());
  check(factor >= 1, "sum_pool: factor must be >= 1");
  const int64_t h = in.extent(0), w = in.extent(1), f = factor;
  const int64_t oh = h / f, ow = w / f;
  Tensor<T> out({oh, ow});
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t dy = 0; dy < f; ++dy) {
        const T* row = in.data() + (y * f + dy) * w + x * f;
        for (int64_t dx = 0; dx < f; ++dx) acc += static_cast<double>(row[dx]);
      }
      out[y * ow + x] = static_cast<T>(acc);
    }
  }
  return out;
}

}  // namespace tancount::ops
