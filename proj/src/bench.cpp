#include "tancount/bench.hpp"

#include <chrono>
#include <cmath>

#include "tancount/kernels.hpp"
#include "tancount/parallel.hpp"
#include "tancount/rng.hpp"

namespace tancount {

double mae(std::span<const double> preds, std::span<const double> gts) {
  check(!preds.empty(), "mae: empty input");
  check(preds.size() == gts.size(), "mae: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - gts[i]);
  return acc / static_cast<double>(preds.size());
}

double mse(std::span<const double> preds, std::span<const double> gts) {
  check(!preds.empty(), "mse: empty input");
  check(preds.size() == gts.size(), "mse: length mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    double d = preds[i] - gts[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

namespace {

void finalize_report(EvalReport* report) {
  std::vector<double> preds, gts;
  for (const auto& r : report->rows) {
    preds.push_back(r.pred);
    gts.push_back(r.gt);
  }
  report->mae = mae(preds, gts);
  report->mse = mse(preds, gts);
  std::string current;
  std::vector<double> sp, sg;
  auto flush = [&]() {
    if (current.empty()) return;
    report->per_scene.push_back(
        {current, mae(sp, sg), mse(sp, sg), static_cast<int64_t>(sp.size())});
    sp.clear();
    sg.clear();
  };
  for (const auto& r : report->rows) {
    if (r.sequence != current) {
      flush();
      current = r.sequence;
    }
    sp.push_back(r.pred);
    sg.push_back(r.gt);
  }
  flush();
}

}  // namespace

EvalReport evaluate(const Dataset& ds, const LcnModel<float>& lcn,
                    const TanModel<float>* tan, EvalMode mode, int k,
                    bool use_roi) {
  check(mode == EvalMode::lcn_single || k >= 1,
        "evaluate: window modes need k >= 1");
  check(mode != EvalMode::tan || tan != nullptr,
        "evaluate: tan mode needs a TAN model");
  EvalReport report;
  switch (mode) {
    case EvalMode::lcn_single: report.model_id = "lcn"; break;
    case EvalMode::uniform_avg: report.model_id = "lcn-uniform-avg"; break;
    case EvalMode::tan: report.model_id = "tan"; break;
  }
  for (const auto& seq : ds.sequences) {
    const int64_t total = static_cast<int64_t>(seq.frames.size());
    std::vector<double> frame_counts(static_cast<size_t>(total), 0.0);
    std::vector<DensityMap> maps;
    maps.reserve(static_cast<size_t>(total));
    for (int64_t t = 0; t < total; ++t) {
      Tensor<float> frame =
          image_to_tensor(seq.frames[static_cast<size_t>(t)].image());
      DensityMap map = lcn_forward(frame, lcn);
      if (use_roi && seq.roi) apply_roi(&map, *seq.roi);
      frame_counts[static_cast<size_t>(t)] = map.count();
      if (mode == EvalMode::tan) maps.push_back(std::move(map));
    }
    for (int64_t t = 0; t < total; ++t) {
      double pred = 0.0;
      switch (mode) {
        case EvalMode::lcn_single:
          pred = frame_counts[static_cast<size_t>(t)];
          break;
        case EvalMode::uniform_avg: {
          auto idx = window_indices(t, total, k);
          for (int64_t i : idx) pred += frame_counts[static_cast<size_t>(i)];
          pred /= static_cast<double>(idx.size());
          break;
        }
        case EvalMode::tan: {
          FrameWindow window;
          window.center = k;
          for (int64_t i : window_indices(t, total, k))
            window.maps.push_back(maps[static_cast<size_t>(i)].grid);
          pred = tan_forward_maps(window, *tan).count;
          break;
        }
      }
      const Frame& f = seq.frames[static_cast<size_t>(t)];
      report.rows.push_back({seq.name, f.name, pred,
                             static_cast<double>(f.ann.points.size())});
    }
  }
  check(!report.rows.empty(), "evaluate: dataset has no frames");
  finalize_report(&report);
  return report;
}

EvalReport evaluate_counts(const Dataset& ds,
                           const std::vector<double>& counts) {
  check(static_cast<int64_t>(counts.size()) == ds.total_frames(),
        "evaluate: supplied counts cover " + std::to_string(counts.size()) +
            " frames, dataset has " + std::to_string(ds.total_frames()));
  EvalReport report;
  report.model_id = "counts-file";
  size_t i = 0;
  for (const auto& seq : ds.sequences)
    for (const auto& f : seq.frames)
      report.rows.push_back({seq.name, f.name, counts[i++],
                             static_cast<double>(f.ann.points.size())});
  check(!report.rows.empty(), "evaluate: dataset has no frames");
  finalize_report(&report);
  return report;
}

TimingReport fps_bench(const LcnModel<float>& lcn, const TanModel<float>& tan,
                       int64_t width, int64_t height, int64_t n_frames,
                       int threads, int64_t warmup, uint64_t seed) {
  check(n_frames >= 1, "fps_bench: need at least one frame");
  check(width >= 8 && height >= 8, "fps_bench: resolution too small");
  ThreadPool::instance().set_threads(threads);

  // Pre-generate input frames outside the timed region.
  Rng rng(seed);
  const int64_t distinct = std::min<int64_t>(n_frames + warmup, 32);
  std::vector<Tensor<float>> pool;
  for (int64_t i = 0; i < distinct; ++i) {
    Tensor<float> f({height, width, lcn.in_channels});
    for (int64_t j = 0; j < f.size(); ++j)
      f[j] = static_cast<float>(rng.uniform());
    pool.push_back(std::move(f));
  }

  StreamingCounter counter(&lcn, &tan, tan.k);
  for (int64_t i = 0; i < warmup; ++i)
    counter.push(pool[static_cast<size_t>(i % distinct)]);

  auto start = std::chrono::steady_clock::now();
  for (int64_t i = 0; i < n_frames; ++i)
    counter.push(pool[static_cast<size_t>((warmup + i) % distinct)]);
  auto stop = std::chrono::steady_clock::now();

  TimingReport report;
  report.width = width;
  report.height = height;
  report.frames = n_frames;
  report.wall_seconds = std::chrono::duration<double>(stop - start).count();
  report.fps = static_cast<double>(n_frames) / report.wall_seconds;
  report.threads = threads;
  report.precision = "f32";
  report.isa = kern::isa_name(kern::active_isa());
  return report;
}

ParamReport count_params(const LcnModel<float>& lcn,
                         const TanModel<float>& tan) {
  ParamReport r;
  r.lcn = lcn.param_count();
  r.tan = tan.param_count();
  r.combined = r.lcn + r.tan;
  return r;
}

}  // namespace tancount
