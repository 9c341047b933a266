#include "tancount/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

namespace tancount {

using nlohmann::json;
namespace fs = std::filesystem;

ImageU8 Frame::image() const {
  if (cached) return *cached;
  return read_png(image_path);
}

int64_t Dataset::total_frames() const {
  int64_t n = 0;
  for (const auto& s : sequences) n += static_cast<int64_t>(s.frames.size());
  return n;
}

// ---- loading ----

namespace {

RoiMask load_roi(const fs::path& path) {
  ImageU8 img = read_png(path);
  RoiMask roi;
  roi.h = img.h;
  roi.w = img.w;
  roi.inside.resize(static_cast<size_t>(img.h * img.w));
  for (int64_t i = 0; i < img.h * img.w; ++i) {
    // Any nonzero channel marks the pixel as inside.
    uint8_t v = 0;
    for (int64_t ch = 0; ch < img.c; ++ch)
      v |= img.pix[static_cast<size_t>(i * img.c + ch)];
    roi.inside[static_cast<size_t>(i)] = v ? 1 : 0;
  }
  return roi;
}

Sequence load_sequence(const fs::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  const fs::path frames_dir = dir / "frames";
  if (!fs::is_directory(frames_dir))
    throw std::runtime_error("dataset: missing frames directory " +
                             frames_dir.string());

  std::map<std::string, fs::path> frame_files;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    if (!entry.is_regular_file()) continue;
    fs::path p = entry.path();
    if (p.extension() != ".png") continue;
    frame_files[p.stem().string()] = p;
  }

  const fs::path ann_path = dir / "annotations.jsonl";
  std::ifstream is(ann_path);
  if (!is)
    throw std::runtime_error("dataset: missing annotations file " +
                             ann_path.string());

  std::map<std::string, std::vector<std::array<double, 2>>> records;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("dataset: malformed annotation at " +
                               ann_path.string() + ":" +
                               std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.contains("frame") || !rec.contains("points") ||
        !rec["points"].is_array())
      throw std::runtime_error("dataset: malformed annotation record at " +
                               ann_path.string() + ":" +
                               std::to_string(line_no));
    std::vector<std::array<double, 2>> pts;
    for (const auto& p : rec["points"]) {
      if (!p.is_array() || p.size() != 2)
        throw std::runtime_error("dataset: malformed point at " +
                                 ann_path.string() + ":" +
                                 std::to_string(line_no));
      pts.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    records[rec["frame"].get<std::string>()] = std::move(pts);
  }

  for (const auto& [stem, pts] : records)
    if (!frame_files.count(stem))
      throw std::runtime_error("dataset: missing frame '" + stem +
                               "' referenced by " + ann_path.string());

  if (frame_files.empty()) return seq;  // a valid, empty video
  PngHeader first = read_png_header(frame_files.begin()->second);
  seq.width = first.w;
  seq.height = first.h;

  for (const auto& [stem, path] : frame_files) {
    auto it = records.find(stem);
    if (it == records.end())
      throw std::runtime_error("dataset: missing annotation for frame '" +
                               stem + "' in " + ann_path.string());
    PngHeader hdr = read_png_header(path);
    if (hdr.w != seq.width || hdr.h != seq.height)
      throw std::runtime_error("dataset: frame '" + stem +
                               "' resolution differs within sequence " +
                               seq.name);
    Frame f;
    f.name = stem;
    f.image_path = path;
    f.ann.image_w = seq.width;
    f.ann.image_h = seq.height;
    for (const auto& p : it->second) {
      if (p[0] < 0.0 || p[0] >= double(seq.width) || p[1] < 0.0 ||
          p[1] >= double(seq.height))
        throw std::runtime_error(
            "dataset: point (" + std::to_string(p[0]) + ", " +
            std::to_string(p[1]) + ") out of bounds for frame '" + stem +
            "' (" + std::to_string(seq.width) + "x" +
            std::to_string(seq.height) + ", half-open)");
      f.ann.points.push_back(p);
    }
    seq.frames.push_back(std::move(f));
  }

  const fs::path roi_path = dir / "roi.png";
  if (fs::exists(roi_path)) seq.roi = load_roi(roi_path);
  return seq;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset: not a directory: " + root.string());
  Dataset ds;
  ds.name = root.filename().string();
  if (fs::exists(root / "dataset.json")) {
    std::ifstream is(root / "dataset.json");
    json meta = json::parse(is);
    ds.name = meta.value("name", ds.name);
    ds.is_video = meta.value("video", true);
    ds.fps = meta.value("fps", 0.0);
  }
  std::vector<fs::path> seq_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) seq_dirs.push_back(entry.path());
  std::sort(seq_dirs.begin(), seq_dirs.end());
  if (seq_dirs.empty())
    throw std::runtime_error("dataset: no sequences under " + root.string());
  for (const auto& dir : seq_dirs) ds.sequences.push_back(load_sequence(dir));
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& root) {
  fs::create_directories(root);
  {
    std::ofstream meta(root / "dataset.json");
    meta << json{{"name", ds.name}, {"video", ds.is_video}, {"fps", ds.fps}}
                .dump(2)
         << '\n';
  }
  for (const auto& seq : ds.sequences) {
    fs::path dir = root / seq.name;
    fs::create_directories(dir / "frames");
    std::ofstream ann(dir / "annotations.jsonl");
    for (const auto& f : seq.frames) {
      write_png(dir / "frames" / (f.name + ".png"), f.image());
      json pts = json::array();
      for (const auto& p : f.ann.points) pts.push_back({p[0], p[1]});
      ann << json{{"frame", f.name}, {"points", pts}}.dump() << '\n';
    }
    if (!ann) throw std::runtime_error("dataset: write failed in " + dir.string());
    if (seq.roi) {
      ImageU8 img;
      img.h = seq.roi->h;
      img.w = seq.roi->w;
      img.c = 1;
      img.pix.resize(static_cast<size_t>(img.h * img.w));
      for (size_t i = 0; i < img.pix.size(); ++i)
        img.pix[i] = seq.roi->inside[i] ? 255 : 0;
      write_png(dir / "roi.png", img);
    }
  }
}

// ---- splits ----

SplitSpec SplitSpec::mall_paper() {
  SplitSpec s;
  s.train.push_back({0, 800});
  s.test_is_rest = true;
  return s;
}

SplitSpec SplitSpec::ucsd_paper() {
  // Benchmark convention: frames 601..1400 (1-indexed) train, rest test.
  SplitSpec s;
  s.train.push_back({600, 1400});
  s.test_is_rest = true;
  return s;
}

SplitSpec SplitSpec::all_train() {
  SplitSpec s;
  s.train.push_back({0, std::numeric_limits<int64_t>::max()});
  return s;
}

SplitSpec SplitSpec::parse(const std::string& name_or_path) {
  if (name_or_path == "MALL_PAPER") return mall_paper();
  if (name_or_path == "UCSD_PAPER") return ucsd_paper();
  if (name_or_path == "ALL_TRAIN") return all_train();
  std::ifstream is(name_or_path);
  if (!is)
    throw std::runtime_error("split: unknown builtin and unreadable file: " +
                             name_or_path);
  json j = json::parse(is);
  SplitSpec s;
  for (const auto& r : j.value("train", json::array()))
    s.train.push_back({r[0].get<int64_t>(), r[1].get<int64_t>()});
  if (j.contains("test") && j["test"].is_string() &&
      j["test"].get<std::string>() == "rest") {
    s.test_is_rest = true;
  } else {
    for (const auto& r : j.value("test", json::array()))
      s.test.push_back({r[0].get<int64_t>(), r[1].get<int64_t>()});
  }
  return s;
}

namespace {

bool in_ranges(const std::vector<SplitSpec::Range>& ranges, int64_t i) {
  for (const auto& r : ranges)
    if (i >= r.begin && i < r.end) return true;
  return false;
}

}  // namespace

std::pair<Dataset, Dataset> apply_split(const Dataset& ds,
                                        const SplitSpec& spec) {
  Dataset train = ds, test = ds;
  train.sequences.clear();
  test.sequences.clear();
  for (const auto& seq : ds.sequences) {
    Sequence tr = seq, te = seq;
    tr.frames.clear();
    te.frames.clear();
    for (int64_t i = 0; i < static_cast<int64_t>(seq.frames.size()); ++i) {
      bool in_train = in_ranges(spec.train, i);
      bool in_test = spec.test_is_rest ? !in_train : in_ranges(spec.test, i);
      if (in_train && in_test)
        throw std::runtime_error("split: frame " + std::to_string(i) +
                                 " of sequence " + seq.name +
                                 " is in both partitions");
      if (in_train) tr.frames.push_back(seq.frames[static_cast<size_t>(i)]);
      if (in_test) te.frames.push_back(seq.frames[static_cast<size_t>(i)]);
    }
    if (!tr.frames.empty()) train.sequences.push_back(std::move(tr));
    if (!te.frames.empty()) test.sequences.push_back(std::move(te));
  }
  return {std::move(train), std::move(test)};
}

// ---- augmentation ----

namespace {

ImageU8 crop(const ImageU8& img, int64_t ox, int64_t oy, int64_t pw,
             int64_t ph) {
  ImageU8 out;
  out.h = ph;
  out.w = pw;
  out.c = img.c;
  out.pix.resize(static_cast<size_t>(ph * pw * img.c));
  for (int64_t y = 0; y < ph; ++y)
    std::copy(img.pix.data() + ((oy + y) * img.w + ox) * img.c,
              img.pix.data() + ((oy + y) * img.w + ox + pw) * img.c,
              out.pix.data() + y * pw * img.c);
  return out;
}

HeadAnnotations crop_points(const HeadAnnotations& ann, int64_t ox, int64_t oy,
                            int64_t pw, int64_t ph) {
  HeadAnnotations out;
  out.image_w = pw;
  out.image_h = ph;
  for (const auto& p : ann.points) {
    double x = p[0] - double(ox), y = p[1] - double(oy);
    if (x >= 0.0 && x < double(pw) && y >= 0.0 && y < double(ph))
      out.points.push_back({x, y});
  }
  return out;
}

AugmentSample mirror(const AugmentSample& s) {
  AugmentSample out;
  out.patch.h = s.patch.h;
  out.patch.w = s.patch.w;
  out.patch.c = s.patch.c;
  out.patch.pix.resize(s.patch.pix.size());
  for (int64_t y = 0; y < s.patch.h; ++y)
    for (int64_t x = 0; x < s.patch.w; ++x)
      for (int64_t ch = 0; ch < s.patch.c; ++ch)
        out.patch.at(y, x, ch) = s.patch.at(y, s.patch.w - 1 - x, ch);
  out.ann.image_w = s.ann.image_w;
  out.ann.image_h = s.ann.image_h;
  for (const auto& p : s.ann.points) {
    double mx = double(s.ann.image_w - 1) - p[0];
    if (mx < 0.0) mx = 0.0;  // sub-pixel heads inside the last column
    out.ann.points.push_back({mx, p[1]});
  }
  return out;
}

}  // namespace

std::vector<AugmentSample> augment_patches(const ImageU8& img,
                                           const HeadAnnotations& ann,
                                           Rng& rng) {
  check(img.w >= 2 && img.h >= 2, "augment: image must be at least 2x2");
  const int64_t cx = img.w / 2, cy = img.h / 2;
  const int64_t pw = img.w / 2, ph = img.h / 2;
  std::vector<AugmentSample> out;
  out.reserve(18);
  // Four non-overlapping quadrants partition the image.
  const int64_t qx[4] = {0, cx, 0, cx};
  const int64_t qy[4] = {0, 0, cy, cy};
  const int64_t qw[4] = {cx, img.w - cx, cx, img.w - cx};
  const int64_t qh[4] = {cy, cy, img.h - cy, img.h - cy};
  for (int q = 0; q < 4; ++q)
    out.push_back({crop(img, qx[q], qy[q], qw[q], qh[q]),
                   crop_points(ann, qx[q], qy[q], qw[q], qh[q])});
  for (int r = 0; r < 5; ++r) {
    int64_t ox = static_cast<int64_t>(rng.below(uint64_t(img.w - pw + 1)));
    int64_t oy = static_cast<int64_t>(rng.below(uint64_t(img.h - ph + 1)));
    out.push_back(
        {crop(img, ox, oy, pw, ph), crop_points(ann, ox, oy, pw, ph)});
  }
  const size_t base = out.size();
  for (size_t i = 0; i < base; ++i) out.push_back(mirror(out[i]));
  return out;
}

// ---- windows ----

std::vector<int64_t> window_indices(int64_t t, int64_t total, int k) {
  check(total > 0, "window_indices: empty sequence");
  check(t >= 0 && t < total, "window_indices: center out of range");
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(2 * k + 1));
  for (int64_t j = -k; j <= k; ++j)
    idx.push_back(std::clamp<int64_t>(t + j, 0, total - 1));
  return idx;
}

// ---- synthetic video ----

SynthSpec SynthSpec::from_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("synth: cannot open spec " + path.string());
  json j = json::parse(is);
  SynthSpec s;
  s.walkers = j.value("walkers", s.walkers);
  s.frames = j.value("frames", s.frames);
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.speed = j.value("speed", s.speed);
  s.noise = j.value("noise", s.noise);
  s.blob_sigma = j.value("blob_sigma", s.blob_sigma);
  s.gain_drop_prob = j.value("gain_drop_prob", s.gain_drop_prob);
  s.gain_lo = j.value("gain_lo", s.gain_lo);
  s.gain_hi = j.value("gain_hi", s.gain_hi);
  s.margin = j.value("margin", s.margin);
  s.seed = j.value("seed", s.seed);
  return s;
}

Dataset synth_video(const SynthSpec& spec) {
  check(spec.frames >= 1, "synth: need at least one frame");
  check(spec.width > 2 * spec.margin && spec.height > 2 * spec.margin,
        "synth: margin leaves no interior");
  Rng rng(spec.seed);

  struct Walker {
    double x, y, vx, vy;
  };
  std::vector<Walker> walkers;
  const double lo_x = double(spec.margin), hi_x = double(spec.width - spec.margin);
  const double lo_y = double(spec.margin), hi_y = double(spec.height - spec.margin);
  for (int64_t i = 0; i < spec.walkers; ++i) {
    double angle = rng.uniform(0.0, 6.283185307179586);
    walkers.push_back({rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y),
                       spec.speed * std::cos(angle),
                       spec.speed * std::sin(angle)});
  }

  Sequence seq;
  seq.name = "synth";
  seq.width = spec.width;
  seq.height = spec.height;

  const double amp = 200.0;
  const int64_t rad = static_cast<int64_t>(std::ceil(3.0 * spec.blob_sigma));
  const double inv = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);

  for (int64_t t = 0; t < spec.frames; ++t) {
    Rng frame_rng(mix_seed(spec.seed, uint64_t(t) + 1));
    std::vector<double> canvas(
        static_cast<size_t>(spec.width * spec.height), 38.0);
    Frame f;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(t));
    f.name = buf;
    f.ann.image_w = spec.width;
    f.ann.image_h = spec.height;
    for (const auto& wk : walkers) {
      f.ann.points.push_back({wk.x, wk.y});
      int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(wk.x)) - rad);
      int64_t x1 = std::min<int64_t>(spec.width - 1, int64_t(std::floor(wk.x)) + rad);
      int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(wk.y)) - rad);
      int64_t y1 = std::min<int64_t>(spec.height - 1, int64_t(std::floor(wk.y)) + rad);
      for (int64_t y = y0; y <= y1; ++y) {
        double dy = double(y) - wk.y;
        for (int64_t x = x0; x <= x1; ++x) {
          double dx = double(x) - wk.x;
          canvas[static_cast<size_t>(y * spec.width + x)] +=
              amp * std::exp(-(dx * dx + dy * dy) * inv);
        }
      }
    }
    double gain = 1.0;
    if (spec.gain_drop_prob > 0.0 &&
        frame_rng.uniform() < spec.gain_drop_prob)
      gain = frame_rng.uniform(spec.gain_lo, spec.gain_hi);
    auto img = std::make_shared<ImageU8>();
    img->h = spec.height;
    img->w = spec.width;
    img->c = 1;
    img->pix.resize(canvas.size());
    for (size_t i = 0; i < canvas.size(); ++i) {
      double v = canvas[i] * gain;
      if (spec.noise > 0.0) v += frame_rng.normal(0.0, spec.noise * 255.0);
      img->pix[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    f.cached = std::move(img);
    seq.frames.push_back(std::move(f));

    for (auto& wk : walkers) {
      wk.x += wk.vx;
      wk.y += wk.vy;
      if (wk.x < lo_x) { wk.x = 2 * lo_x - wk.x; wk.vx = -wk.vx; }
      if (wk.x > hi_x) { wk.x = 2 * hi_x - wk.x; wk.vx = -wk.vx; }
      if (wk.y < lo_y) { wk.y = 2 * lo_y - wk.y; wk.vy = -wk.vy; }
      if (wk.y > hi_y) { wk.y = 2 * hi_y - wk.y; wk.vy = -wk.vy; }
    }
  }

  Dataset ds;
  ds.name = "synth";
  ds.is_video = true;
  ds.sequences.push_back(std::move(seq));
  return ds;
}

}  // namespace tancount
