#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>

#include "tancount/density.hpp"
#include "tancount/rng.hpp"
#include "tancount/tape.hpp"
#include "tancount/tensor.hpp"

namespace tancount {

/// One row of the lightweight counting network: kernel size, channels and
/// whether a 2x2 max pool follows.
struct LcnLayerSpec {
  int kernel;
  int64_t cin;
  int64_t cout;
  bool pool_after;
};

/// The 9-conv / 3-pool configuration; in_channels parameterizes the first
/// layer (3 canonical, 1 for grayscale-native use).
std::array<LcnLayerSpec, 9> lcn_layer_table(int64_t in_channels = 3);

int64_t lcn_param_count(int64_t in_channels = 3);

template <typename T>
struct LcnModel {
  struct Layer {
    Tensor<T> w;  // k x k x cin x cout
    Tensor<T> b;  // cout
  };
  int64_t in_channels = 3;
  std::array<Layer, 9> conv;

  static LcnModel zeros(int64_t in_channels = 3);
  /// Gaussian weights (given stddev), zero biases.
  static LcnModel random_init(int64_t in_channels, double stddev, Rng& rng);

  int64_t param_count() const;
  std::vector<std::pair<std::string, Tensor<T>*>> params();
  std::vector<std::pair<std::string, const Tensor<T>*>> params() const;

  template <typename U>
  LcnModel<U> cast() const {
    LcnModel<U> out;
    out.in_channels = in_channels;
    for (size_t i = 0; i < conv.size(); ++i) {
      out.conv[i].w = conv[i].w.template cast<U>();
      out.conv[i].b = conv[i].b.template cast<U>();
    }
    return out;
  }
};

/// Forward pass on a HxWxC frame; returns the (H/8)x(W/8) density grid.
/// Requires H, W >= 8.
template <typename T>
Tensor<T> lcn_forward_grid(const Tensor<T>& frame, const LcnModel<T>& model);

/// Convenience wrapper producing a DensityMap at scale 8.
DensityMap lcn_forward(const Tensor<float>& frame, const LcnModel<float>& model);

/// Ids of the registered parameters of one model on a tape.
template <typename T>
struct LcnTapeParams {
  std::array<typename Tape<T>::Id, 9> w, b;
};

template <typename T>
LcnTapeParams<T> lcn_register_params(Tape<T>& tape, LcnModel<T>& model);

/// Records the forward pass on the tape; returns the (H/8)x(W/8) grid node.
template <typename T>
typename Tape<T>::Id lcn_tape_forward(Tape<T>& tape, typename Tape<T>::Id frame,
                                      const LcnTapeParams<T>& params,
                                      const LcnModel<T>& model);

/// Per-image squared-L2 density loss, (1/2N) sum over the batch of
/// ||pred - gt||^2 with N = batch size; here for a single pair (N = 1).
double lcn_loss(const Tensor<float>& pred, const Tensor<float>& gt);
double lcn_loss(const DensityMap& pred, const DensityMap& gt);

/// Head count of a density map: plain sum of all cells.
inline double count(const DensityMap& map) { return map.count(); }

// ---- training ----

struct LcnTrainConfig {
  double lr = 1e-5;
  double init_std = 0.01;
  int batch = 1;
  int64_t iters = 0;
  uint64_t seed = 0;
  int64_t ckpt_interval = 0;          // 0: only the final checkpoint
  std::filesystem::path ckpt_dir;     // empty: keep everything in memory
  bool resume = false;                // continue from ckpt_dir
};

struct TrainSample {
  Tensor<float> frame;                // HxWxC
  Tensor<float> gt;                   // (H/8)x(W/8), ROI already applied
  std::optional<Tensor<float>> roi;   // mask on the /8 grid for predictions
};

struct LcnTrainResult {
  LcnModel<float> model;
  std::vector<double> loss_curve;
};

/// Adam training of the LCN under the squared-L2 loss. Deterministic per
/// seed; aborts with a diagnostic if the loss goes non-finite.
LcnTrainResult lcn_train(
    const std::vector<TrainSample>& data, const LcnTrainConfig& cfg,
    const std::function<void(int64_t, double)>& on_iter = {});

// ---- checkpoints ----

void save_lcn_checkpoint(const LcnModel<float>& model,
                         const std::filesystem::path& dir);
LcnModel<float> load_lcn_checkpoint(const std::filesystem::path& dir);

}  // namespace tancount
