#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

// Inner-loop kernels in two flavors: portable scalar reference templates
// (instantiated for float and double) and AVX2 float variants selected at
// runtime. Layouts are row-major throughout: images are HxWxC, image weights
// [kh][kw][Cin][Cout], sequences LxC, sequence weights [tap][Cin][Cout].
// Backward kernels accumulate (+=) into their gradient outputs.

namespace tancount::kern {

enum class Isa { scalar, avx2 };

/// Best instruction set the host supports.
Isa detected_isa();
/// Currently selected implementation (defaults to detected; env TANCOUNT_ISA
/// or set_isa() override it, clamped to what the host can run).
Isa active_isa();
void set_isa(Isa isa);
std::string isa_name(Isa isa);

namespace scalar {

// 3x3 convolution with zero "same" padding; computes output rows [y0, y1).
template <typename T>
void conv2d3x3(const T* in, int64_t h, int64_t w, int64_t cin, const T* wt,
               const T* bias, int64_t cout, T* out, int64_t y0, int64_t y1) {
  for (int64_t y = y0; y < y1; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      T* op = out + (y * w + x) * cout;
      for (int64_t co = 0; co < cout; ++co) op[co] = bias[co];
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const T* ip = in + (yy * w + xx) * cin;
          const T* wp = wt + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t ci = 0; ci < cin; ++ci) {
            T iv = ip[ci];
            const T* wr = wp + ci * cout;
            for (int64_t co = 0; co < cout; ++co) op[co] += iv * wr[co];
          }
        }
      }
    }
  }
}

// Pointwise channel mix over n positions (1x1 convolution).
template <typename T>
void conv1x1(const T* in, int64_t cin, const T* wt, const T* bias,
             int64_t cout, T* out, int64_t p0, int64_t p1) {
  for (int64_t p = p0; p < p1; ++p) {
    const T* ip = in + p * cin;
    T* op = out + p * cout;
    for (int64_t co = 0; co < cout; ++co) op[co] = bias[co];
    for (int64_t ci = 0; ci < cin; ++ci) {
      T iv = ip[ci];
      const T* wr = wt + ci * cout;
      for (int64_t co = 0; co < cout; ++co) op[co] += iv * wr[co];
    }
  }
}

// Kernel-3 dilated 1D convolution with taps at {-d, 0, +d} and zero padding;
// computes output positions [l0, l1).
template <typename T>
void dconv1d(const T* in, int64_t len, int64_t cin, const T* wt, const T* bias,
             int64_t d, int64_t cout, T* out, int64_t l0, int64_t l1) {
  for (int64_t l = l0; l < l1; ++l) {
    T* op = out + l * cout;
    for (int64_t co = 0; co < cout; ++co) op[co] = bias[co];
    for (int t = 0; t < 3; ++t) {
      int64_t ll = l + (t - 1) * d;
      if (ll < 0 || ll >= len) continue;
      const T* ip = in + ll * cin;
      const T* wp = wt + t * cin * cout;
      for (int64_t ci = 0; ci < cin; ++ci) {
        T iv = ip[ci];
        const T* wr = wp + ci * cout;
        for (int64_t co = 0; co < cout; ++co) op[co] += iv * wr[co];
      }
    }
  }
}

template <typename T>
void relu(const T* in, T* out, int64_t i0, int64_t i1) {
  for (int64_t i = i0; i < i1; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

// Disjoint 2x2 window max; trailing odd row/column dropped. Computes output
// rows [y0, y1) of an (h/2)x(w/2)xC grid.
template <typename T>
void maxpool2(const T* in, int64_t w, int64_t c, T* out, int64_t ow,
              int64_t y0, int64_t y1) {
  for (int64_t y = y0; y < y1; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      const T* r0 = in + ((2 * y) * w + 2 * x) * c;
      const T* r1 = in + ((2 * y + 1) * w + 2 * x) * c;
      T* op = out + (y * ow + x) * c;
      for (int64_t ch = 0; ch < c; ++ch) {
        T m = r0[ch];
        if (r0[c + ch] > m) m = r0[c + ch];
        if (r1[ch] > m) m = r1[ch];
        if (r1[c + ch] > m) m = r1[c + ch];
        op[ch] = m;
      }
    }
  }
}

// ---- backward kernels (single-range, accumulate into gradients) ----

template <typename T>
void conv2d3x3_bwd_input(const T* gout, int64_t h, int64_t w, int64_t cin,
                         const T* wt, int64_t cout, T* gin) {
  // Transposed weights [dy][dx][co][ci] turn the gather into the same
  // broadcast-accumulate pattern as the forward pass.
  std::vector<T> wtr(static_cast<size_t>(9 * cin * cout));
  for (int64_t k = 0; k < 9; ++k)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t co = 0; co < cout; ++co)
        wtr[(k * cout + co) * cin + ci] = wt[(k * cin + ci) * cout + co];
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const T* gp = gout + (y * w + x) * cout;
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          T* gi = gin + (yy * w + xx) * cin;
          const T* wp = wtr.data() + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t co = 0; co < cout; ++co) {
            T gv = gp[co];
            const T* wr = wp + co * cin;
            for (int64_t ci = 0; ci < cin; ++ci) gi[ci] += gv * wr[ci];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d3x3_bwd_params(const T* in, const T* gout, int64_t h, int64_t w,
                          int64_t cin, int64_t cout, T* gw, T* gb) {
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const T* gp = gout + (y * w + x) * cout;
      for (int64_t co = 0; co < cout; ++co) gb[co] += gp[co];
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const T* ip = in + (yy * w + xx) * cin;
          T* gwp = gw + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t ci = 0; ci < cin; ++ci) {
            T iv = ip[ci];
            T* gwr = gwp + ci * cout;
            for (int64_t co = 0; co < cout; ++co) gwr[co] += iv * gp[co];
          }
        }
      }
    }
  }
}

template <typename T>
void conv1x1_bwd(const T* in, const T* gout, int64_t n, int64_t cin,
                 const T* wt, int64_t cout, T* gin, T* gw, T* gb) {
  // Any of gin/gw/gb may be null when that gradient is not tracked.
  for (int64_t p = 0; p < n; ++p) {
    const T* ip = in + p * cin;
    const T* gp = gout + p * cout;
    if (gb)
      for (int64_t co = 0; co < cout; ++co) gb[co] += gp[co];
    for (int64_t ci = 0; ci < cin; ++ci) {
      T iv = ip[ci];
      const T* wr = wt + ci * cout;
      if (gw) {
        T* gwr = gw + ci * cout;
        for (int64_t co = 0; co < cout; ++co) gwr[co] += iv * gp[co];
      }
      if (gin) {
        T acc = T(0);
        for (int64_t co = 0; co < cout; ++co) acc += gp[co] * wr[co];
        gin[p * cin + ci] += acc;
      }
    }
  }
}

template <typename T>
void dconv1d_bwd(const T* in, const T* gout, int64_t len, int64_t cin,
                 const T* wt, int64_t d, int64_t cout, T* gin, T* gw, T* gb) {
  for (int64_t l = 0; l < len; ++l) {
    const T* gp = gout + l * cout;
    if (gb)
      for (int64_t co = 0; co < cout; ++co) gb[co] += gp[co];
    for (int t = 0; t < 3; ++t) {
      int64_t ll = l + (t - 1) * d;
      if (ll < 0 || ll >= len) continue;
      const T* ip = in + ll * cin;
      const T* wp = wt + t * cin * cout;
      for (int64_t ci = 0; ci < cin; ++ci) {
        T iv = ip[ci];
        if (gw) {
          T* gwr = gw + t * cin * cout + ci * cout;
          for (int64_t co = 0; co < cout; ++co) gwr[co] += iv * gp[co];
        }
        if (gin) {
          const T* wr = wp + ci * cout;
          T acc = T(0);
          for (int64_t co = 0; co < cout; ++co) acc += gp[co] * wr[co];
          gin[ll * cin + ci] += acc;
        }
      }
    }
  }
}

template <typename T>
void relu_bwd(const T* in, const T* gout, T* gin, int64_t n) {
  // Gradient at exactly zero is defined as zero.
  for (int64_t i = 0; i < n; ++i)
    if (in[i] > T(0)) gin[i] += gout[i];
}

template <typename T>
void maxpool2_bwd(const T* in, const T* gout, int64_t w, int64_t c, int64_t oh,
                  int64_t ow, T* gin) {
  // Ties resolve to the first maximum in fixed (dy, dx) scan order.
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      const T* gp = gout + (y * ow + x) * c;
      for (int64_t ch = 0; ch < c; ++ch) {
        int64_t best = ((2 * y) * w + 2 * x) * c + ch;
        T m = in[best];
        const int64_t cand[3] = {((2 * y) * w + 2 * x + 1) * c + ch,
                                 ((2 * y + 1) * w + 2 * x) * c + ch,
                                 ((2 * y + 1) * w + 2 * x + 1) * c + ch};
        for (int64_t idx : cand) {
          if (in[idx] > m) {
            m = in[idx];
            best = idx;
          }
        }
        gin[best] += gp[ch];
      }
    }
  }
}

}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define TANCOUNT_HAVE_AVX2_BUILD 1
namespace avx2 {
void conv2d3x3(const float* in, int64_t h, int64_t w, int64_t cin,
               const float* wt, const float* bias, int64_t cout, float* out,
               int64_t y0, int64_t y1);
void conv1x1(const float* in, int64_t cin, const float* wt, const float* bias,
             int64_t cout, float* out, int64_t p0, int64_t p1);
void dconv1d(const float* in, int64_t len, int64_t cin, const float* wt,
             const float* bias, int64_t d, int64_t cout, float* out,
             int64_t l0, int64_t l1);
void relu(const float* in, float* out, int64_t i0, int64_t i1);
void maxpool2(const float* in, int64_t w, int64_t c, float* out, int64_t ow,
              int64_t y0, int64_t y1);
void conv2d3x3_bwd_input(const float* gout, int64_t h, int64_t w, int64_t cin,
                         const float* wt, int64_t cout, float* gin);
void conv2d3x3_bwd_params(const float* in, const float* gout, int64_t h,
                          int64_t w, int64_t cin, int64_t cout, float* gw,
                          float* gb);
}  // namespace avx2
#else
#define TANCOUNT_HAVE_AVX2_BUILD 0
#endif

// Dispatched float entry points; double always takes the scalar path.
void conv2d3x3_f32(const float* in, int64_t h, int64_t w, int64_t cin,
                   const float* wt, const float* bias, int64_t cout,
                   float* out, int64_t y0, int64_t y1);
void conv1x1_f32(const float* in, int64_t cin, const float* wt,
                 const float* bias, int64_t cout, float* out, int64_t p0,
                 int64_t p1);
void dconv1d_f32(const float* in, int64_t len, int64_t cin, const float* wt,
                 const float* bias, int64_t d, int64_t cout, float* out,
                 int64_t l0, int64_t l1);
void relu_f32(const float* in, float* out, int64_t i0, int64_t i1);
void maxpool2_f32(const float* in, int64_t w, int64_t c, float* out,
                  int64_t ow, int64_t y0, int64_t y1);
void conv2d3x3_bwd_input_f32(const float* gout, int64_t h, int64_t w,
                             int64_t cin, const float* wt, int64_t cout,
                             float* gin);
void conv2d3x3_bwd_params_f32(const float* in, const float* gout, int64_t h,
                              int64_t w, int64_t cin, int64_t cout, float* gw,
                              float* gb);

}  // namespace tancount::kern
