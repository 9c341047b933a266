#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tancount/density.hpp"
#include "tancount/image.hpp"
#include "tancount/rng.hpp"

namespace tancount {

/// One annotated frame. Synthetic datasets keep pixels in memory; on-disk
/// datasets decode lazily from image_path.
struct Frame {
  std::string name;  // file stem, e.g. "000042"
  std::filesystem::path image_path;
  HeadAnnotations ann;
  std::shared_ptr<const ImageU8> cached;

  ImageU8 image() const;
};

struct Sequence {
  std::string name;
  int64_t width = 0, height = 0;
  std::vector<Frame> frames;
  std::optional<RoiMask> roi;
};

struct Dataset {
  std::string name;
  std::vector<Sequence> sequences;
  bool is_video = true;
  double fps = 0.0;

  int64_t total_frames() const;
};

/// Loads the canonical layout: root/<sequence>/frames/*.png plus
/// annotations.jsonl (one {"frame": ..., "points": [[x, y], ...]} record per
/// frame) and an optional roi.png. Every structural defect gets its own
/// diagnostic.
Dataset load_dataset(const std::filesystem::path& root);

/// Writes a dataset back out in the canonical layout.
void write_dataset(const Dataset& ds, const std::filesystem::path& root);

// ---- splits ----

struct SplitSpec {
  struct Range {
    int64_t begin = 0, end = 0;  // half-open frame indices
  };
  std::vector<Range> train, test;
  bool test_is_rest = false;  // test = complement of train

  static SplitSpec mall_paper();   // frames [0,800) train, rest test
  static SplitSpec ucsd_paper();   // frames [600,1400) train, rest test
  static SplitSpec all_train();
  /// Builtin name (MALL_PAPER, UCSD_PAPER, ALL_TRAIN) or a JSON file path.
  static SplitSpec parse(const std::string& name_or_path);
};

std::pair<Dataset, Dataset> apply_split(const Dataset& ds,
                                        const SplitSpec& spec);

// ---- augmentation ----

struct AugmentSample {
  ImageU8 patch;
  HeadAnnotations ann;
};

/// Nine quarter-area patches (4 quadrants + 5 random) and their horizontal
/// mirrors: 18 samples, annotations re-indexed per patch. Intended for image
/// datasets only; video training bypasses augmentation.
std::vector<AugmentSample> augment_patches(const ImageU8& img,
                                           const HeadAnnotations& ann,
                                           Rng& rng);

// ---- windows ----

/// The 2k+1 frame indices around t, clamp-replicated at sequence ends.
std::vector<int64_t> window_indices(int64_t t, int64_t total, int k);

// ---- synthetic video ----

struct SynthSpec {
  int64_t walkers = 5;
  int64_t frames = 30;
  int64_t width = 128, height = 128;
  double speed = 1.5;       // pixels per frame
  double noise = 0.0;       // additive pixel noise stddev, [0,1] scale
  double blob_sigma = 3.0;  // rendered pedestrian size
  double gain_drop_prob = 0.0;  // chance a frame is photometrically dimmed
  double gain_lo = 0.5, gain_hi = 0.75;
  int64_t margin = 16;      // walkers bounce inside this border
  uint64_t seed = 0;

  static SynthSpec from_json_file(const std::filesystem::path& path);
};

/// Gaussian-blob walkers on bouncing linear trajectories with exact
/// annotations; reproducible per seed. Frames stay in memory.
Dataset synth_video(const SynthSpec& spec);

}  // namespace tancount
