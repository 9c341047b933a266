#include "tancount/pipeline.hpp"

#include "tancount/ops.hpp"

namespace tancount {

DensityMap make_gt(const HeadAnnotations& ann, const GtOptions& opt) {
  if (opt.adaptive)
    return render_density(ann, adaptive_sigmas(ann, opt.sigma));
  return render_density_fixed(ann, opt.fixed_sigma);
}

Tensor<float> roi_mask_tensor(const RoiMask& roi, int64_t h, int64_t w) {
  Tensor<float> mask = Tensor<float>::full({h, w}, 1.0f);
  apply_roi(&mask, roi);
  return mask;
}

namespace {

TrainSample make_sample(const Tensor<float>& frame, const HeadAnnotations& ann,
                        const std::optional<RoiMask>& roi,
                        const GtOptions& opt) {
  TrainSample s;
  s.frame = frame;
  DensityMap gt = make_gt(ann, opt);
  if (roi) apply_roi(&gt, *roi);
  DensityMap small = downsample_gt(gt, opt.downsample);
  s.gt = std::move(small.grid);
  if (roi) {
    s.roi = roi_mask_tensor(*roi, s.gt.extent(0), s.gt.extent(1));
    for (int64_t i = 0; i < s.gt.size(); ++i) s.gt[i] *= (*s.roi)[i];
  }
  return s;
}

}  // namespace

std::vector<TrainSample> make_lcn_training_set(const Dataset& ds,
                                               const GtOptions& opt,
                                               uint64_t seed) {
  std::vector<TrainSample> out;
  Rng rng(seed);
  for (const auto& seq : ds.sequences) {
    for (const auto& f : seq.frames) {
      if (ds.is_video) {
        out.push_back(
            make_sample(image_to_tensor(f.image()), f.ann, seq.roi, opt));
      } else {
        for (const auto& patch : augment_patches(f.image(), f.ann, rng))
          out.push_back(make_sample(image_to_tensor(patch.patch), patch.ann,
                                    std::nullopt, opt));
      }
    }
  }
  return out;
}

std::vector<VideoTrainSequence> make_tan_training_set(
    const Dataset& ds, const LcnModel<float>& lcn, const GtOptions& opt,
    bool keep_frames) {
  std::vector<VideoTrainSequence> out;
  for (const auto& seq : ds.sequences) {
    VideoTrainSequence v;
    for (const auto& f : seq.frames) {
      Tensor<float> frame = image_to_tensor(f.image());
      v.lcn_maps.push_back(lcn_forward_grid(frame, lcn));
      DensityMap gt = make_gt(f.ann, opt);
      if (seq.roi) apply_roi(&gt, *seq.roi);
      DensityMap small = downsample_gt(gt, opt.downsample);
      if (seq.roi) {
        auto mask =
            roi_mask_tensor(*seq.roi, small.grid.extent(0), small.grid.extent(1));
        for (int64_t i = 0; i < small.grid.size(); ++i)
          small.grid[i] *= mask[i];
      }
      v.gt_counts.push_back(small.count());
      v.gt_maps.push_back(std::move(small.grid));
      if (keep_frames) v.frames.push_back(std::move(frame));
    }
    if (!v.lcn_maps.empty()) out.push_back(std::move(v));
  }
  return out;
}

}  // namespace tancount
