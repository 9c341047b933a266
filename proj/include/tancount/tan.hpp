#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <optional>

#include "tancount/density.hpp"
#include "tancount/lcn.hpp"
#include "tancount/rng.hpp"
#include "tancount/tape.hpp"

namespace tancount {

struct TanConfig {
  int k = 2;               // frames on each side; window = 2k + 1
  int blocks = 3;          // S
  int layers_per_block = 3;
  int hidden = 20;         // channel width inside a block
  double lambda = 0.15;    // smooth-L1 mix in the block loss
  double lr = 5e-4;
  double init_std = 0.01;
  int64_t iters = 0;
  uint64_t seed = 0;
  int64_t ckpt_interval = 0;
  std::filesystem::path ckpt_dir;
  bool resume = false;
  bool finetune_lcn = false;  // joint fine-tuning, off by default
  double finetune_lr = 1e-5;

  int window() const { return 2 * k + 1; }
  void validate() const;
};

/// 2k+1 equally shaped density maps for frames t-k .. t+k.
struct FrameWindow {
  std::vector<Tensor<float>> maps;
  int64_t center = 0;
};

template <typename T>
struct TanModel {
  struct Layer {
    Tensor<T> w1;  // 3 x H x H, taps {-d, 0, +d}
    Tensor<T> b1;  // H
    Tensor<T> w2;  // H x H, pointwise
    Tensor<T> b2;  // H
  };
  struct Block {
    Tensor<T> in_w;   // 1 x H projection
    Tensor<T> in_b;   // H
    std::vector<Layer> layers;
    Tensor<T> out_w;  // H x 1 projection
    Tensor<T> out_b;  // 1
  };
  int k = 2;
  int hidden = 20;
  int layers_per_block = 3;
  std::vector<Block> blocks;

  static TanModel zeros(const TanConfig& cfg);
  static TanModel random_init(const TanConfig& cfg, Rng& rng);

  int64_t param_count() const;
  std::vector<std::pair<std::string, Tensor<T>*>> params();
  std::vector<std::pair<std::string, const Tensor<T>*>> params() const;

  /// Dilation of layer i (1-based) is 2^(i-1).
  static int dilation_of(int layer_index) { return 1 << (layer_index - 1); }
};

/// Row-major flatten of each map, concatenated in temporal order -> {L, 1}.
Tensor<float> reshape_concat(const FrameWindow& window);

/// Inverse of reshape_concat given the window geometry.
std::vector<Tensor<float>> split_concat(const Tensor<float>& v, int64_t frames,
                                        int64_t m, int64_t n);

/// v + w2 . ReLU(dconv(v, w1, b1, d)) + b2 with d = 2^(i-1).
template <typename T>
Tensor<T> dilated_residual_layer(const Tensor<T>& v,
                                 const typename TanModel<T>::Layer& layer,
                                 int layer_index);

/// 1x1 in-projection, the dilated residual layers, 1x1 out-projection.
template <typename T>
Tensor<T> dilated_residual_block(const Tensor<T>& v,
                                 const typename TanModel<T>::Block& block);

/// L1-segment-normalized fusion weights of a refined {L} or {L,1} vector;
/// an all-zero vector yields uniform 1/(2k+1) weights.
std::vector<double> fusion_weights(const Tensor<float>& v_out, int64_t segments);

/// f'(x_t) = sum of w_dt * f(x_{t+dt}), elementwise.
DensityMap fuse_density(const std::vector<double>& weights,
                        const FrameWindow& window);

/// Count-MSE plus lambda times the pixelwise smooth-L1 term for one window.
double block_loss(const DensityMap& fused, const DensityMap& gt, double lambda);

struct TanForwardResult {
  DensityMap fused;
  double count = 0.0;
  std::vector<double> weights;                    // final block
  std::vector<std::vector<double>> block_weights; // deep-supervision view
};

/// Full pipeline on precomputed per-frame density maps.
TanForwardResult tan_forward_maps(const FrameWindow& window,
                                  const TanModel<float>& tan);

/// Full pipeline from raw frames: LCN per frame, then temporal fusion.
TanForwardResult tan_forward(const std::vector<Tensor<float>>& frames,
                             const LcnModel<float>& lcn,
                             const TanModel<float>& tan);

// ---- training ----

/// Per-sequence training inputs. lcn_maps are the frozen per-frame LCN
/// outputs; frames are only consulted when fine-tuning the LCN jointly.
struct VideoTrainSequence {
  std::vector<Tensor<float>> lcn_maps;
  std::vector<Tensor<float>> gt_maps;  // /8 grid, ROI applied
  std::vector<double> gt_counts;
  std::vector<Tensor<float>> frames;
};

/// Ids of one TAN model's parameters registered on a tape.
template <typename T>
struct TanTapeParams {
  struct Layer {
    typename Tape<T>::Id w1, b1, w2, b2;
  };
  struct Block {
    typename Tape<T>::Id in_w, in_b, out_w, out_b;
    std::vector<Layer> layers;
  };
  std::vector<Block> blocks;
};

template <typename T>
TanTapeParams<T> tan_register_params(Tape<T>& tape, TanModel<T>& model);

/// Records one window's deep-supervised loss: the sum over blocks of
/// (count(fused_s) - C_gt)^2 + lambda * smoothL1(fused_s, gt).
template <typename T>
typename Tape<T>::Id tan_tape_window_loss(
    Tape<T>& tape, const std::vector<typename Tape<T>::Id>& maps,
    const TanTapeParams<T>& ids, const Tensor<T>& gt_map, double gt_count,
    double lambda);

struct TanTrainResult {
  TanModel<float> model;
  std::vector<double> loss_curve;
};

TanTrainResult tan_train(
    const std::vector<VideoTrainSequence>& seqs, const TanConfig& cfg,
    LcnModel<float>* lcn = nullptr,
    const std::function<void(int64_t, double)>& on_iter = {});

// ---- checkpoints ----

void save_tan_checkpoint(const TanModel<float>& model,
                         const std::filesystem::path& dir);
TanModel<float> load_tan_checkpoint(const std::filesystem::path& dir);

// ---- streaming inference ----

/// Sliding-window inference that pays one LCN forward per new frame; emitted
/// results are bit-identical to running tan_forward per frame. Windows clamp
/// by edge replication at both sequence ends.
class StreamingCounter {
 public:
  struct FrameResult {
    int64_t frame_index = 0;
    double count = 0.0;
    std::vector<double> weights;
    DensityMap fused;
  };

  StreamingCounter(const LcnModel<float>* lcn, const TanModel<float>* tan,
                   int k);

  /// Feeds one frame; returns any results that became available.
  std::vector<FrameResult> push(const Tensor<float>& frame);
  /// Flushes the tail windows at end of stream.
  std::vector<FrameResult> finish();

 private:
  FrameResult result_for(int64_t t);

  const LcnModel<float>* lcn_;
  const TanModel<float>* tan_;
  int k_;
  int64_t pushed_ = 0;
  int64_t emitted_ = 0;
  std::deque<Tensor<float>> maps_;  // last 2k+1 per-frame maps
};

}  // namespace tancount
