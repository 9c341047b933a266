#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tancount/bench.hpp"
#include "tancount/init.hpp"

using namespace tancount;

TEST_CASE("mae and mse worked examples") {
  std::vector<double> p = {10, 20}, g = {12, 16};
  CHECK(mae(p, g) == doctest::Approx(3.0));
  CHECK(mse(p, g) == doctest::Approx(std::sqrt(10.0)));
  CHECK(mae(g, g) == 0.0);
  std::vector<double> one_p = {7}, one_g = {2};
  CHECK(mse(one_p, one_g) == doctest::Approx(5.0));
  std::vector<double> empty;
  CHECK_THROWS(mae(empty, empty));
  CHECK_THROWS(mse(empty, empty));
}

TEST_CASE("mae/mse agree with brute-force loops; MAE never exceeds MSE") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 1 + rng.below(200);
    std::vector<double> p(n), g(n);
    for (size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.0, 60.0);
      g[i] = rng.uniform(0.0, 60.0);
    }
    double abs_acc = 0.0, sq_acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      abs_acc += std::abs(p[i] - g[i]);
      sq_acc += (p[i] - g[i]) * (p[i] - g[i]);
    }
    CHECK(std::abs(mae(p, g) - abs_acc / double(n)) < 1e-12);
    CHECK(std::abs(mse(p, g) - std::sqrt(sq_acc / double(n))) < 1e-12);
    CHECK(mae(p, g) <= mse(p, g) + 1e-12);
  }
}

namespace {

Dataset small_synth(uint64_t seed) {
  SynthSpec spec;
  spec.walkers = 5;
  spec.frames = 8;
  spec.width = spec.height = 48;
  spec.seed = seed;
  return synth_video(spec);
}

}  // namespace

TEST_CASE("evaluate_counts: perfect and constant-zero predictors") {
  auto ds = small_synth(7);
  std::vector<double> perfect(8, 5.0);
  auto report = evaluate_counts(ds, perfect);
  CHECK(report.mae == 0.0);
  CHECK(report.mse == 0.0);
  CHECK(report.rows.size() == 8);
  CHECK(report.per_scene.size() == 1);
  CHECK(report.per_scene[0].frames == 8);

  std::vector<double> zeros(8, 0.0);
  auto zr = evaluate_counts(ds, zeros);
  CHECK(zr.mae == doctest::Approx(5.0));
  CHECK(zr.mse == doctest::Approx(5.0));

  CHECK_THROWS(evaluate_counts(ds, std::vector<double>(3, 0.0)));
}

TEST_CASE("evaluate: modes run and report per-scene stats") {
  auto ds = small_synth(11);
  Rng rng(13);
  auto lcn = LcnModel<float>::random_init(3, 0.05, rng);
  TanConfig cfg;
  auto tan = TanModel<float>::random_init(cfg, rng);

  auto r1 = evaluate(ds, lcn, nullptr, EvalMode::lcn_single, cfg.k);
  auto r2 = evaluate(ds, lcn, nullptr, EvalMode::uniform_avg, cfg.k);
  auto r3 = evaluate(ds, lcn, &tan, EvalMode::tan, cfg.k);
  for (const auto* r : {&r1, &r2, &r3}) {
    CHECK(r->rows.size() == 8);
    CHECK(r->mae >= 0.0);
    CHECK(r->mae <= r->mse + 1e-12);
  }
  CHECK(r1.model_id == "lcn");
  CHECK(r3.model_id == "tan");

  // Deterministic: a second run reproduces every prediction.
  auto r3b = evaluate(ds, lcn, &tan, EvalMode::tan, cfg.k);
  for (size_t i = 0; i < r3.rows.size(); ++i)
    CHECK(r3.rows[i].pred == r3b.rows[i].pred);
}

TEST_CASE("evaluate applies the ROI mask to predictions") {
  auto ds = small_synth(17);
  RoiMask none{48, 48, std::vector<uint8_t>(48 * 48, 0)};
  ds.sequences[0].roi = none;
  Rng rng(19);
  auto lcn = LcnModel<float>::random_init(3, 0.05, rng);
  auto masked = evaluate(ds, lcn, nullptr, EvalMode::lcn_single, 2, true);
  for (const auto& row : masked.rows) CHECK(row.pred == 0.0);
  auto unmasked = evaluate(ds, lcn, nullptr, EvalMode::lcn_single, 2, false);
  bool any_nonzero = false;
  for (const auto& row : unmasked.rows) any_nonzero |= row.pred != 0.0;
  CHECK(any_nonzero);
}

TEST_CASE("count_params: defaults match the reported budgets") {
  auto lcn = LcnModel<float>::zeros(3);
  TanConfig cfg;
  auto tan = TanModel<float>::zeros(cfg);
  auto r = count_params(lcn, tan);
  CHECK(r.lcn == 32641);
  CHECK(r.tan == 14943);
  CHECK(r.combined == 47584);
  // Within 5% of the paper-scale 0.047M budget.
  CHECK(std::abs(double(r.combined) - 47000.0) / 47000.0 < 0.05);
}

TEST_CASE("fps_bench: reports fields, rejects empty runs, scales with work") {
  Rng rng(23);
  auto lcn = LcnModel<float>::random_init(3, 0.05, rng);
  TanConfig cfg;
  auto tan = TanModel<float>::random_init(cfg, rng);

  CHECK_THROWS(fps_bench(lcn, tan, 64, 48, 0, 1));

  auto full = fps_bench(lcn, tan, 128, 96, 24, 1, 4, 3);
  CHECK(full.frames == 24);
  CHECK(full.fps > 0.0);
  CHECK(full.fps == doctest::Approx(24.0 / full.wall_seconds));
  CHECK(full.threads == 1);
  CHECK(full.precision == "f32");
  CHECK(!full.isa.empty());

  auto half = fps_bench(lcn, tan, 64, 48, 24, 1, 4, 3);
  CHECK(half.fps > full.fps);  // quarter of the work per frame
}

TEST_CASE("streaming bench outputs equal one-shot forward outputs") {
  // The cache is a performance device only: counts from the benchmark path
  // must match direct per-window inference bit for bit.
  Rng rng(29);
  auto lcn = LcnModel<float>::random_init(3, 0.05, rng);
  TanConfig cfg;
  auto tan = TanModel<float>::random_init(cfg, rng);
  SynthSpec spec;
  spec.walkers = 4;
  spec.frames = 7;
  spec.width = 64;
  spec.height = 48;
  spec.seed = 31;
  auto ds = synth_video(spec);
  std::vector<Tensor<float>> frames;
  for (const auto& f : ds.sequences[0].frames)
    frames.push_back(image_to_tensor(f.image()));

  StreamingCounter sc(&lcn, &tan, cfg.k);
  std::vector<double> streamed;
  for (const auto& f : frames)
    for (auto& r : sc.push(f)) streamed.push_back(r.count);
  for (auto& r : sc.finish()) streamed.push_back(r.count);

  std::vector<Tensor<float>> maps;
  for (const auto& f : frames) maps.push_back(lcn_forward_grid(f, lcn));
  for (size_t t = 0; t < frames.size(); ++t) {
    FrameWindow w;
    w.center = cfg.k;
    for (int64_t i : window_indices(int64_t(t), int64_t(frames.size()), cfg.k))
      w.maps.push_back(maps[size_t(i)]);
    CHECK(streamed[t] == tan_forward_maps(w, tan).count);
  }
}
