#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tancount/adam.hpp"
#include "tancount/init.hpp"
#include "tancount/tape.hpp"
#include "test_util.hpp"

using namespace tancount;
using testutil::fd_check;
using testutil::random_tensor;

namespace {

constexpr double kH = 1e-3;
constexpr double kTol = 1e-4;

std::vector<double> grad_of(const Tensor<double>& t) {
  return t.grad_vec();
}

}  // namespace

TEST_CASE("backward: sum of relu matches the piecewise-linear gradient") {
  Tensor<double> x({2}, {-1.0, 2.0});
  Tape<double> tape;
  auto xi = tape.input(x);
  auto loss = tape.sum(tape.relu(xi));
  tape.backward(loss);
  CHECK(tape.grad(xi)[0] == 0.0);
  CHECK(tape.grad(xi)[1] == 1.0);
}

TEST_CASE("backward: relu gradient at exactly zero is zero") {
  Tensor<double> x({3}, {-0.5, 0.0, 0.5});
  Tape<double> tape;
  auto xi = tape.input(x);
  auto loss = tape.sum(tape.relu(xi));
  tape.backward(loss);
  CHECK(tape.grad(xi)[0] == 0.0);
  CHECK(tape.grad(xi)[1] == 0.0);  // convention: subgradient 0 at the kink
  CHECK(tape.grad(xi)[2] == 1.0);
}

TEST_CASE("backward: constant-output graph has zero gradients") {
  Rng rng(5);
  Tensor<double> x = random_tensor<double>({4, 3}, rng);
  Tape<double> tape;
  auto xi = tape.input(x);
  auto zero = tape.scale(xi, 0.0);
  auto loss = tape.sum(zero);
  tape.backward(loss);
  for (int64_t i = 0; i < x.size(); ++i) CHECK(tape.grad(xi)[i] == 0.0);
}

TEST_CASE("backward: error paths") {
  Tape<double> tape;
  auto xi = tape.input(Tensor<double>({2}, {1.0, 2.0}));
  CHECK_THROWS_WITH_AS(tape.grad(xi), doctest::Contains("run backward"),
                       std::runtime_error);
  CHECK_THROWS_AS(tape.backward(945), std::runtime_error);
  CHECK_THROWS_AS(tape.backward(xi), std::runtime_error);  // non-scalar root
  CHECK_THROWS_AS(tape.backward(xi, Tensor<double>({3})), std::runtime_error);
}

TEST_CASE("gradient check: conv2d against central finite differences") {
  Rng rng(101);
  Tensor<double> x = random_tensor<double>({6, 6, 2}, rng);
  Tensor<double> w = random_tensor<double>({3, 3, 2, 3}, rng);
  Tensor<double> b = random_tensor<double>({3}, rng);
  Tensor<double> target = random_tensor<double>({6, 6, 3}, rng);

  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto xi = tape.param(&x);
    auto wi = tape.param(&w);
    auto bi = tape.param(&b);
    auto loss = tape.sq_diff_sum_half(tape.conv2d(xi, wi, bi, 1), target);
    double v = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return v;
  };
  for (auto* t : {&x, &w, &b}) {
    t->alloc_grad();
    t->zero_grad();
  }
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(7);
  CHECK(fd_check(x, grad_of(x), eval, kH, 40, pick) < kTol);
  CHECK(fd_check(w, grad_of(w), eval, kH, 40, pick) < kTol);
  CHECK(fd_check(b, grad_of(b), eval, kH, 40, pick) < kTol);
}

TEST_CASE("gradient check: conv2d 1x1 path") {
  Rng rng(103);
  Tensor<double> x = random_tensor<double>({5, 4, 8}, rng);
  Tensor<double> w = random_tensor<double>({1, 1, 8, 1}, rng);
  Tensor<double> b = random_tensor<double>({1}, rng);
  Tensor<double> target = random_tensor<double>({5, 4, 1}, rng);
  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto loss = tape.sq_diff_sum_half(
        tape.conv2d(tape.param(&x), tape.param(&w), tape.param(&b), 0),
        target);
    double v = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return v;
  };
  for (auto* t : {&x, &w, &b}) t->alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(9);
  CHECK(fd_check(x, grad_of(x), eval, kH, 40, pick) < kTol);
  CHECK(fd_check(w, grad_of(w), eval, kH, 40, pick) < kTol);
  CHECK(fd_check(b, grad_of(b), eval, kH, 40, pick) < kTol);
}

TEST_CASE("gradient check: maxpool2 and relu chain") {
  Rng rng(107);
  // Keep window entries separated so the argmax is FD-stable, and
  // pre-activations away from the ReLU kink.
  Tensor<double> x({6, 6, 2});
  for (int64_t i = 0; i < x.size(); ++i)
    x[i] = rng.uniform(-1.0, 1.0) + 0.021 * double(i % 89) *
                                        (rng.uniform() < 0.5 ? 1.0 : -1.0);
  Tensor<double> target = random_tensor<double>({3, 3, 2}, rng);
  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto loss = tape.sq_diff_sum_half(
        tape.maxpool2(tape.relu(tape.param(&x))), target);
    double v = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return v;
  };
  x.alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(11);
  CHECK(fd_check(x, grad_of(x), eval, kH, 72, pick) < kTol);
}

TEST_CASE("gradient check: dilated_conv1d and conv1x1_seq") {
  Rng rng(109);
  Tensor<double> x = random_tensor<double>({24, 4}, rng);
  Tensor<double> w1 = random_tensor<double>({3, 4, 4}, rng);
  Tensor<double> b1 = random_tensor<double>({4}, rng);
  Tensor<double> w2 = random_tensor<double>({4, 2}, rng);
  Tensor<double> b2 = random_tensor<double>({2}, rng);
  Tensor<double> target = random_tensor<double>({24, 2}, rng);
  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto h = tape.dilated_conv1d(tape.param(&x), tape.param(&w1),
                                 tape.param(&b1), 2);
    auto y = tape.conv1x1_seq(h, tape.param(&w2), tape.param(&b2));
    auto loss = tape.sq_diff_sum_half(y, target);
    double v = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return v;
  };
  for (auto* t : {&x, &w1, &b1, &w2, &b2}) t->alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(13);
  for (auto* t : {&x, &w1, &b1, &w2, &b2})
    CHECK(fd_check(*t, grad_of(*t), eval, kH, 30, pick) < kTol);
}

TEST_CASE("gradient check: fusion weights and weighted sum") {
  Rng rng(113);
  // Keep entries away from |v| = 0 where the L1 norm has its kink.
  Tensor<double> v({30, 1});
  for (int64_t i = 0; i < v.size(); ++i) {
    double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v[i] = s * rng.uniform(0.2, 1.0);
  }
  std::vector<Tensor<double>> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(random_tensor<double>({2, 3}, rng));
  Tensor<double> target = random_tensor<double>({2, 3}, rng, 2.0, 3.0);
  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto vi = tape.param(&v);
    auto weights = tape.segment_l1_weights(vi, 5);
    std::vector<Tape<double>::Id> map_ids;
    for (auto& m : maps) map_ids.push_back(tape.constant(m));
    auto fused = tape.weighted_sum(weights, map_ids);
    auto loss = tape.sq_diff_sum_half(fused, target);
    double val = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return val;
  };
  v.alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(17);
  CHECK(fd_check(v, grad_of(v), eval, kH, 30, pick) < kTol);
}

TEST_CASE("gradient check: weighted_sum map inputs and smooth-L1") {
  Rng rng(127);
  std::vector<Tensor<double>> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(random_tensor<double>({3, 3}, rng));
  Tensor<double> wv({3}, {0.2, 0.5, 0.3});
  // Differences straddle both smooth-L1 branches but stay off |d| = 1.
  Tensor<double> target = random_tensor<double>({3, 3}, rng, 2.0, 4.0);
  for (int64_t i = 0; i < target.size(); ++i)
    if (i % 2 == 0) target[i] = maps[0][i] * 0.2 + maps[1][i] * 0.5 +
                                maps[2][i] * 0.3 + 0.4;
  auto forward = [&](bool backward) {
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    for (auto& m : maps) ids.push_back(tape.param(&m));
    auto fused = tape.weighted_sum(tape.constant(wv), ids);
    auto loss = tape.smooth_l1_mean(fused, target);
    double val = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return val;
  };
  for (auto& m : maps) m.alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(19);
  for (auto& m : maps)
    CHECK(fd_check(m, grad_of(m), eval, kH, 9, pick) < kTol);
}

TEST_CASE("gradient check: residual add, scale, square, mul_const, reshape") {
  Rng rng(131);
  Tensor<double> x = random_tensor<double>({12, 1}, rng);
  Tensor<double> mask({12, 1});
  for (int64_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 0.0 : 1.0;
  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto xi = tape.param(&x);
    auto masked = tape.mul_const(xi, mask);
    auto doubled = tape.add(masked, masked);
    auto flat = tape.reshape(tape.scale(doubled, 1.5), {12});
    auto sq = tape.square(flat);
    auto loss = tape.sum(sq);
    double v = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return v;
  };
  x.alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(23);
  CHECK(fd_check(x, grad_of(x), eval, kH, 12, pick) < kTol);
  // Analytic form: d/dx of sum((3 m x)^2) = 18 m^2 x.
  for (int64_t i = 0; i < x.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(18.0 * mask[i] * x[i]));
}

TEST_CASE("gradient check: concat_flatten routes slices back") {
  Rng rng(137);
  Tensor<double> a = random_tensor<double>({2, 2}, rng);
  Tensor<double> b = random_tensor<double>({2, 2}, rng);
  Tensor<double> target = random_tensor<double>({8}, rng);
  auto forward = [&](bool backward) {
    Tape<double> tape;
    auto v = tape.concat_flatten({tape.param(&a), tape.param(&b)});
    auto loss = tape.sq_diff_sum_half(v, target);
    double val = tape.value(loss)[0];
    if (backward) tape.backward(loss);
    return val;
  };
  a.alloc_grad();
  b.alloc_grad();
  forward(true);
  auto eval = [&] { return forward(false); };
  Rng pick(29);
  CHECK(fd_check(a, grad_of(a), eval, kH, 4, pick) < kTol);
  CHECK(fd_check(b, grad_of(b), eval, kH, 4, pick) < kTol);
}

TEST_CASE("adam: bias-corrected first step moves by about -lr") {
  Tensor<double> p({1});
  AdamState<double> st(p.shape());
  double g = 1.0;
  adam_step(p, &g, st, 0.01);
  CHECK(st.step == 1);
  CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  Tensor<double> p({3}, {0.5, -0.25, 1.0});
  AdamState<double> st(p.shape());
  std::vector<double> zeros(3, 0.0);
  adam_step(p, zeros.data(), st, 0.1);
  CHECK(st.step == 1);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == -0.25);
  CHECK(p[2] == 1.0);
}

TEST_CASE("adam: two steps match the scalar recurrence to 1e-12") {
  Tensor<double> p({1});
  AdamState<double> st(p.shape());
  double g = 1.0;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam_step(p, &g, st, lr);
  adam_step(p, &g, st, lr);

  double m = 0.0, v = 0.0, x = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  CHECK(std::abs(p[0] - x) < 1e-12);
}

TEST_CASE("gaussian_init: sample statistics, determinism, preconditions") {
  Rng rng(211);
  auto t = gaussian_init<double>({100000}, 0.01, rng);
  double mean = t.sum() / double(t.size());
  double var = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) {
    double d = t[i] - mean;
    var += d * d;
  }
  double sd = std::sqrt(var / double(t.size() - 1));
  CHECK(sd > 0.009);
  CHECK(sd < 0.011);

  Rng r1(42), r2(42);
  auto a = gaussian_init<float>({257}, 0.5, r1);
  auto b = gaussian_init<float>({257}, 0.5, r2);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  Rng r3(1);
  CHECK_THROWS(gaussian_init<float>({4}, 0.0, r3));
}
