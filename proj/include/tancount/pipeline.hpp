#pragma once

#include "tancount/dataset.hpp"
#include "tancount/lcn.hpp"
#include "tancount/tan.hpp"

namespace tancount {

/// Ground-truth generation knobs shared by the CLI and training pipelines.
struct GtOptions {
  bool adaptive = false;     // geometry-adaptive sigmas vs a fixed kernel
  double fixed_sigma = 15.0;
  SigmaOptions sigma;        // k_nn / beta / fallback / floor
  int downsample = 8;        // network output grid factor
};

/// Full-resolution ground-truth density for one frame.
DensityMap make_gt(const HeadAnnotations& ann, const GtOptions& opt);

/// ROI as a {h, w} float mask, nearest-resampled from the stored resolution.
Tensor<float> roi_mask_tensor(const RoiMask& roi, int64_t h, int64_t w);

/// Per-frame training pairs at the /8 grid, ROI applied to the target and
/// kept for masking predictions. Image datasets are expanded with the
/// nine-patch + mirror augmentation; video datasets are used as-is.
std::vector<TrainSample> make_lcn_training_set(const Dataset& ds,
                                               const GtOptions& opt,
                                               uint64_t seed);

/// Frozen per-frame LCN maps plus /8 ground truth per sequence; frames are
/// retained only when the joint fine-tuning path needs them.
std::vector<VideoTrainSequence> make_tan_training_set(
    const Dataset& ds, const LcnModel<float>& lcn, const GtOptions& opt,
    bool keep_frames = false);

}  // namespace tancount
