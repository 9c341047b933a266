#pragma once

#include <span>
#include <string>
#include <vector>

#include "tancount/dataset.hpp"
#include "tancount/tan.hpp"

namespace tancount {

/// Mean absolute error over per-frame counts.
double mae(std::span<const double> preds, std::span<const double> gts);

/// Root of the mean squared count error (the benchmark tables' "MSE" carries
/// the square root).
double mse(std::span<const double> preds, std::span<const double> gts);

struct EvalRow {
  std::string sequence;
  std::string frame;
  double pred = 0.0;
  double gt = 0.0;
};

struct EvalReport {
  std::string model_id;
  std::string config_hash;
  std::vector<EvalRow> rows;
  double mae = 0.0;
  double mse = 0.0;
  struct SceneStats {
    std::string sequence;
    double mae = 0.0, mse = 0.0;
    int64_t frames = 0;
  };
  std::vector<SceneStats> per_scene;
};

enum class EvalMode {
  lcn_single,   // single-frame LCN counts
  uniform_avg,  // naive 2k+1-frame average of LCN counts
  tan,          // trained temporal fusion
};

/// Per-frame counts against annotation ground truth. ROI masks (when the
/// sequence carries one) zero predictions outside the monitored region.
EvalReport evaluate(const Dataset& ds, const LcnModel<float>& lcn,
                    const TanModel<float>* tan, EvalMode mode, int k,
                    bool use_roi = true);

/// Report for externally supplied per-frame counts (oracle predictors).
EvalReport evaluate_counts(const Dataset& ds,
                           const std::vector<double>& counts);

struct TimingReport {
  int64_t width = 0, height = 0;
  int64_t frames = 0;
  double wall_seconds = 0.0;
  double fps = 0.0;
  int threads = 1;
  std::string precision = "f32";
  std::string isa;
};

/// Steady-state streaming throughput at the given resolution: each step pays
/// one LCN forward plus one TAN window pass, with warmup frames excluded.
TimingReport fps_bench(const LcnModel<float>& lcn, const TanModel<float>& tan,
                       int64_t width, int64_t height, int64_t n_frames,
                       int threads, int64_t warmup = 16, uint64_t seed = 1);

struct ParamReport {
  int64_t lcn = 0;
  int64_t tan = 0;
  int64_t combined = 0;
};

ParamReport count_params(const LcnModel<float>& lcn,
                         const TanModel<float>& tan);

}  // namespace tancount
