#include "tancount/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>

namespace tancount::kern {

namespace {

Isa probe() {
#if TANCOUNT_HAVE_AVX2_BUILD
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return Isa::avx2;
#endif
  return Isa::scalar;
}

Isa initial_isa() {
  Isa best = probe();
  if (const char* env = std::getenv("TANCOUNT_ISA")) {
    std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && best == Isa::avx2) return Isa::avx2;
  }
  return best;
}

std::atomic<Isa> g_active{initial_isa()};

}  // namespace

Isa detected_isa() {
  static Isa d = probe();
  return d;
}

Isa active_isa() { return g_active.load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2)
    throw std::runtime_error("kernels: avx2 not supported on this host");
  g_active.store(isa, std::memory_order_relaxed);
}

std::string isa_name(Isa isa) {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

#if TANCOUNT_HAVE_AVX2_BUILD
#define TANCOUNT_DISPATCH(fn, ...)                  \
  do {                                              \
    if (active_isa() == Isa::avx2) {                \
      avx2::fn(__VA_ARGS__);                        \
    } else {                                        \
      scalar::fn<float>(__VA_ARGS__);               \
    }                                               \
  } while (0)
#else
#define TANCOUNT_DISPATCH(fn, ...) scalar::fn<float>(__VA_ARGS__)
#endif

void conv2d3x3_f32(const float* in, int64_t h, int64_t w, int64_t cin,
                   const float* wt, const float* bias, int64_t cout,
                   float* out, int64_t y0, int64_t y1) {
  TANCOUNT_DISPATCH(conv2d3x3, in, h, w, cin, wt, bias, cout, out, y0, y1);
}

void conv1x1_f32(const float* in, int64_t cin, const float* wt,
                 const float* bias, int64_t cout, float* out, int64_t p0,
                 int64_t p1) {
  TANCOUNT_DISPATCH(conv1x1, in, cin, wt, bias, cout, out, p0, p1);
}

void dconv1d_f32(const float* in, int64_t len, int64_t cin, const float* wt,
                 const float* bias, int64_t d, int64_t cout, float* out,
                 int64_t l0, int64_t l1) {
  TANCOUNT_DISPATCH(dconv1d, in, len, cin, wt, bias, d, cout, out, l0, l1);
}

void relu_f32(const float* in, float* out, int64_t i0, int64_t i1) {
  TANCOUNT_DISPATCH(relu, in, out, i0, i1);
}

void maxpool2_f32(const float* in, int64_t w, int64_t c, float* out,
                  int64_t ow, int64_t y0, int64_t y1) {
  TANCOUNT_DISPATCH(maxpool2, in, w, c, out, ow, y0, y1);
}

void conv2d3x3_bwd_input_f32(const float* gout, int64_t h, int64_t w,
                             int64_t cin, const float* wt, int64_t cout,
                             float* gin) {
  TANCOUNT_DISPATCH(conv2d3x3_bwd_input, gout, h, w, cin, wt, cout, gin);
}

void conv2d3x3_bwd_params_f32(const float* in, const float* gout, int64_t h,
                              int64_t w, int64_t cin, int64_t cout, float* gw,
                              float* gb) {
  TANCOUNT_DISPATCH(conv2d3x3_bwd_params, in, gout, h, w, cin, cout, gw, gb);
}

}  // namespace tancount::kern
