#include "tancount/kernels.hpp"

#if TANCOUNT_HAVE_AVX2_BUILD

#include <immintrin.h>

// AVX2/FMA float kernels. Accumulation order per output element matches the
// scalar reference (taps outer, input channels inner); lanes differ only in
// which output channel they hold, so each output element still sees one fixed
// reduction order.

namespace tancount::kern::avx2 {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

// Register-tiled 3x3 conv body for cout = 8 * NB.
template <int NB>
void conv2d3x3_tiled(const float* in, int64_t h, int64_t w, int64_t cin,
                     const float* wt, const float* bias, float* out,
                     int64_t y0, int64_t y1) {
  const int64_t cout = 8 * NB;
  for (int64_t y = y0; y < y1; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      __m256 acc[NB];
      for (int b = 0; b < NB; ++b) acc[b] = _mm256_loadu_ps(bias + 8 * b);
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const float* ip = in + (yy * w + xx) * cin;
          const float* wp = wt + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t ci = 0; ci < cin; ++ci) {
            __m256 iv = _mm256_broadcast_ss(ip + ci);
            const float* wr = wp + ci * cout;
            for (int b = 0; b < NB; ++b)
              acc[b] = _mm256_fmadd_ps(iv, _mm256_loadu_ps(wr + 8 * b), acc[b]);
          }
        }
      }
      float* op = out + (y * w + x) * cout;
      for (int b = 0; b < NB; ++b) _mm256_storeu_ps(op + 8 * b, acc[b]);
    }
  }
}

inline void init_bias_row(const float* bias, int64_t cout, float* op) {
  int64_t co = 0;
  for (; co + 8 <= cout; co += 8)
    _mm256_storeu_ps(op + co, _mm256_loadu_ps(bias + co));
  for (; co < cout; ++co) op[co] = bias[co];
}

inline void axpy_row(float iv, const float* wr, int64_t cout, float* op) {
  __m256 v = _mm256_set1_ps(iv);
  int64_t co = 0;
  for (; co + 8 <= cout; co += 8)
    _mm256_storeu_ps(
        op + co,
        _mm256_fmadd_ps(v, _mm256_loadu_ps(wr + co), _mm256_loadu_ps(op + co)));
  for (; co < cout; ++co) op[co] += iv * wr[co];
}

}  // namespace

void conv2d3x3(const float* in, int64_t h, int64_t w, int64_t cin,
               const float* wt, const float* bias, int64_t cout, float* out,
               int64_t y0, int64_t y1) {
  switch (cout) {
    case 8: conv2d3x3_tiled<1>(in, h, w, cin, wt, bias, out, y0, y1); return;
    case 16: conv2d3x3_tiled<2>(in, h, w, cin, wt, bias, out, y0, y1); return;
    case 24: conv2d3x3_tiled<3>(in, h, w, cin, wt, bias, out, y0, y1); return;
    case 32: conv2d3x3_tiled<4>(in, h, w, cin, wt, bias, out, y0, y1); return;
    default: break;
  }
  for (int64_t y = y0; y < y1; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      float* op = out + (y * w + x) * cout;
      init_bias_row(bias, cout, op);
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const float* ip = in + (yy * w + xx) * cin;
          const float* wp = wt + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t ci = 0; ci < cin; ++ci)
            axpy_row(ip[ci], wp + ci * cout, cout, op);
        }
      }
    }
  }
}

void conv1x1(const float* in, int64_t cin, const float* wt, const float* bias,
             int64_t cout, float* out, int64_t p0, int64_t p1) {
  if (cout == 1) {
    // Dot product over input channels per position.
    float b0 = bias[0];
    for (int64_t p = p0; p < p1; ++p) {
      const float* ip = in + p * cin;
      __m256 acc = _mm256_setzero_ps();
      int64_t ci = 0;
      for (; ci + 8 <= cin; ci += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(ip + ci),
                              _mm256_loadu_ps(wt + ci), acc);
      float s = hsum8(acc);
      for (; ci < cin; ++ci) s += ip[ci] * wt[ci];
      out[p] = b0 + s;
    }
    return;
  }
  for (int64_t p = p0; p < p1; ++p) {
    const float* ip = in + p * cin;
    float* op = out + p * cout;
    init_bias_row(bias, cout, op);
    for (int64_t ci = 0; ci < cin; ++ci)
      axpy_row(ip[ci], wt + ci * cout, cout, op);
  }
}

void dconv1d(const float* in, int64_t len, int64_t cin, const float* wt,
             const float* bias, int64_t d, int64_t cout, float* out,
             int64_t l0, int64_t l1) {
  for (int64_t l = l0; l < l1; ++l) {
    float* op = out + l * cout;
    init_bias_row(bias, cout, op);
    for (int t = 0; t < 3; ++t) {
      int64_t ll = l + (t - 1) * d;
      if (ll < 0 || ll >= len) continue;
      const float* ip = in + ll * cin;
      const float* wp = wt + t * cin * cout;
      for (int64_t ci = 0; ci < cin; ++ci)
        axpy_row(ip[ci], wp + ci * cout, cout, op);
    }
  }
}

void relu(const float* in, float* out, int64_t i0, int64_t i1) {
  __m256 zero = _mm256_setzero_ps();
  int64_t i = i0;
  for (; i + 8 <= i1; i += 8)
    _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(in + i), zero));
  for (; i < i1; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
}

void maxpool2(const float* in, int64_t w, int64_t c, float* out, int64_t ow,
              int64_t y0, int64_t y1) {
  for (int64_t y = y0; y < y1; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      const float* r0 = in + ((2 * y) * w + 2 * x) * c;
      const float* r1 = in + ((2 * y + 1) * w + 2 * x) * c;
      float* op = out + (y * ow + x) * c;
      int64_t ch = 0;
      for (; ch + 8 <= c; ch += 8) {
        __m256 m = _mm256_max_ps(_mm256_loadu_ps(r0 + ch),
                                 _mm256_loadu_ps(r0 + c + ch));
        m = _mm256_max_ps(m, _mm256_loadu_ps(r1 + ch));
        m = _mm256_max_ps(m, _mm256_loadu_ps(r1 + c + ch));
        _mm256_storeu_ps(op + ch, m);
      }
      for (; ch < c; ++ch) {
        float m = r0[ch];
        if (r0[c + ch] > m) m = r0[c + ch];
        if (r1[ch] > m) m = r1[ch];
        if (r1[c + ch] > m) m = r1[c + ch];
        op[ch] = m;
      }
    }
  }
}

void conv2d3x3_bwd_input(const float* gout, int64_t h, int64_t w, int64_t cin,
                         const float* wt, int64_t cout, float* gin) {
  std::vector<float> wtr(static_cast<size_t>(9 * cin * cout));
  for (int64_t k = 0; k < 9; ++k)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t co = 0; co < cout; ++co)
        wtr[(k * cout + co) * cin + ci] = wt[(k * cin + ci) * cout + co];
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const float* gp = gout + (y * w + x) * cout;
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          float* gi = gin + (yy * w + xx) * cin;
          const float* wp =
              wtr.data() + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t co = 0; co < cout; ++co)
            axpy_row(gp[co], wp + co * cin, cin, gi);
        }
      }
    }
  }
}

void conv2d3x3_bwd_params(const float* in, const float* gout, int64_t h,
                          int64_t w, int64_t cin, int64_t cout, float* gw,
                          float* gb) {
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const float* gp = gout + (y * w + x) * cout;
      int64_t co = 0;
      for (; co + 8 <= cout; co += 8)
        _mm256_storeu_ps(gb + co, _mm256_add_ps(_mm256_loadu_ps(gb + co),
                                                _mm256_loadu_ps(gp + co)));
      for (; co < cout; ++co) gb[co] += gp[co];
      for (int64_t dy = -1; dy <= 1; ++dy) {
        int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          const float* ip = in + (yy * w + xx) * cin;
          float* gwp = gw + ((dy + 1) * 3 + (dx + 1)) * cin * cout;
          for (int64_t ci = 0; ci < cin; ++ci)
            axpy_row(ip[ci], gp, cout, gwp + ci * cout);
        }
      }
    }
  }
}

}  // namespace tancount::kern::avx2

#endif  // TANCOUNT_HAVE_AVX2_BUILD
