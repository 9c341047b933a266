#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "tancount/bench.hpp"
#include "tancount/kernels.hpp"
#include "tancount/parallel.hpp"
#include "tancount/pipeline.hpp"
#include "tancount/tensor_io.hpp"

using namespace tancount;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---- config plumbing: CLI flags > --config json > built-in defaults ----

/// Overlays values from a JSON config file onto options the user did not set
/// on the command line.
struct ConfigOverlay {
  json cfg = json::object();

  void load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    cfg = json::parse(is);
  }

  template <typename T>
  void apply(const CLI::Option* opt, const std::string& key, T* value) const {
    if (opt->count() > 0) return;  // explicit flag wins
    if (cfg.contains(key)) *value = cfg[key].get<T>();
  }
};

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash(const json& cfg) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(cfg.dump())));
  return buf;
}

std::string timestamp_utc() {
  char buf[32];
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("TANCOUNT_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void announce(const std::string& cmd, const json& cfg) {
  std::cerr << cmd << " config " << config_hash(cfg) << ": " << cfg.dump()
            << "\n";
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::pair<int64_t, int64_t> parse_resolution(const std::string& s) {
  auto x = s.find('x');
  if (x == std::string::npos)
    throw std::runtime_error("resolution must look like 320x240, got " + s);
  return {std::stoll(s.substr(0, x)), std::stoll(s.substr(x + 1))};
}

/// "fixed:15" or "adaptive".
void parse_sigma_mode(const std::string& s, GtOptions* gt) {
  if (s == "adaptive") {
    gt->adaptive = true;
    return;
  }
  if (s.rfind("fixed:", 0) == 0) {
    gt->adaptive = false;
    gt->fixed_sigma = std::stod(s.substr(6));
    if (gt->fixed_sigma <= 0.0)
      throw std::runtime_error("sigma must be positive");
    return;
  }
  throw std::runtime_error("--sigma expects 'adaptive' or 'fixed:<px>', got " +
                           s);
}

json eval_report_json(const EvalReport& r, const json& cfg,
                      bool no_timestamp) {
  json scenes = json::array();
  for (const auto& s : r.per_scene)
    scenes.push_back({{"sequence", s.sequence},
                      {"mae", s.mae},
                      {"mse", s.mse},
                      {"frames", s.frames}});
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"sequence", row.sequence},
                    {"frame", row.frame},
                    {"pred", row.pred},
                    {"gt", row.gt}});
  json out{{"model_id", r.model_id}, {"config_hash", config_hash(cfg)},
           {"config", cfg},          {"mae", r.mae},
           {"mse", r.mse},           {"per_scene", scenes},
           {"frames", rows}};
  if (!no_timestamp) out["timestamp"] = timestamp_utc();
  return out;
}

// ---- subcommand state ----

struct SynthArgs {
  std::string out, spec_file, size = "128x128";
  int64_t walkers = 5, frames = 30;
  double speed = 1.5, noise = 0.0, blob_sigma = 3.0, gain_drop = 0.0;
  uint64_t seed = 0;
};

struct GenDensityArgs {
  std::string data, out, sigma = "fixed:15";
  double beta = 0.3;
  int knn = 3;
  int downsample = 1;
  bool heatmaps = false;
  uint64_t seed = 0;
};

struct TrainLcnArgs {
  std::string data, out, split = "ALL_TRAIN", sigma = "fixed:15";
  double beta = 0.3;
  int knn = 3;
  double lr = 1e-5, init_std = 0.01;
  int batch = 1;
  int64_t iters = 1000, ckpt_interval = 0;
  uint64_t seed = 0;
  bool resume = false;
};

struct TrainTanArgs {
  std::string data, out, lcn, split = "ALL_TRAIN", sigma = "fixed:15";
  double beta = 0.3;
  int knn = 3;
  int k = 2, blocks = 3, hidden = 20;
  double lambda = 0.15, lr = 5e-4, init_std = 0.01;
  int64_t iters = 1000, ckpt_interval = 0;
  uint64_t seed = 0;
  bool resume = false, finetune_lcn = false;
};

struct InferArgs {
  std::string data, lcn, tan, out, heatmap_dir;
  bool single_frame = false;
};

struct EvalArgs {
  std::string data, lcn, tan, out, csv, counts_file, split;
  std::string mode = "auto";  // auto|tan|lcn|avg
  int k = 2;
  bool no_roi = false;
};

struct BenchArgs {
  std::string resolution = "320x240", lcn, tan, out;
  int64_t frames = 200, warmup = 16;
  int k = 2, blocks = 3, hidden = 20;
  uint64_t seed = 1;
};

struct ParamsArgs {
  int k = 2, blocks = 3, hidden = 20, in_channels = 3;
  std::string out;
};

// ---- command bodies ----

int run_synth(const SynthArgs& a, const json& cfg) {
  SynthSpec spec;
  if (!a.spec_file.empty()) spec = SynthSpec::from_json_file(a.spec_file);
  auto [w, h] = parse_resolution(a.size);
  spec.width = w;
  spec.height = h;
  spec.walkers = a.walkers;
  spec.frames = a.frames;
  spec.speed = a.speed;
  spec.noise = a.noise;
  spec.blob_sigma = a.blob_sigma;
  spec.gain_drop_prob = a.gain_drop;
  spec.seed = a.seed;
  Dataset ds = synth_video(spec);
  write_dataset(ds, a.out);
  write_json(fs::path(a.out) / "synth_spec.json", cfg);
  std::cout << "wrote " << ds.total_frames() << " frames to " << a.out << "\n";
  return 0;
}

int run_gen_density(const GenDensityArgs& a, const json& cfg) {
  Dataset ds = load_dataset(a.data);
  GtOptions gt;
  parse_sigma_mode(a.sigma, &gt);
  gt.sigma.beta = a.beta;
  gt.sigma.k_nn = a.knn;
  gt.sigma.fallback = gt.fixed_sigma;
  fs::create_directories(a.out);
  int64_t written = 0;
  for (const auto& seq : ds.sequences) {
    fs::path seq_dir = fs::path(a.out) / seq.name;
    fs::create_directories(seq_dir);
    for (const auto& f : seq.frames) {
      DensityMap map = make_gt(f.ann, gt);
      if (seq.roi) apply_roi(&map, *seq.roi);
      if (a.downsample > 1) map = downsample_gt(map, a.downsample);
      save_tensor(map.grid, seq_dir / (f.name + ".tan"));
      if (a.heatmaps)
        write_png(seq_dir / (f.name + "_heat.png"), heatmap_u8(map.grid));
      ++written;
    }
  }
  write_json(fs::path(a.out) / "gen_density.json",
             json{{"config", cfg}, {"config_hash", config_hash(cfg)},
                  {"files", written}});
  std::cout << "wrote " << written << " density maps to " << a.out << "\n";
  return 0;
}

GtOptions gt_from(const std::string& sigma, double beta, int knn) {
  GtOptions gt;
  parse_sigma_mode(sigma, &gt);
  gt.sigma.beta = beta;
  gt.sigma.k_nn = knn;
  gt.sigma.fallback = gt.fixed_sigma;
  return gt;
}

int run_train_lcn(const TrainLcnArgs& a, const json& cfg) {
  Dataset full = load_dataset(a.data);
  auto [train, test] = apply_split(full, SplitSpec::parse(a.split));
  auto data = make_lcn_training_set(train, gt_from(a.sigma, a.beta, a.knn),
                                    a.seed);
  LcnTrainConfig tc;
  tc.lr = a.lr;
  tc.init_std = a.init_std;
  tc.batch = a.batch;
  tc.iters = a.iters;
  tc.seed = a.seed;
  tc.ckpt_interval = a.ckpt_interval;
  tc.ckpt_dir = a.out;
  tc.resume = a.resume;
  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "loss.jsonl",
                    a.resume ? std::ios::app : std::ios::trunc);
  auto result = lcn_train(data, tc, [&](int64_t iter, double loss) {
    log << json{{"iter", iter}, {"loss", loss}}.dump() << '\n';
  });
  write_json(fs::path(a.out) / "train_config.json",
             json{{"config", cfg}, {"config_hash", config_hash(cfg)}});
  double last = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
  std::cout << "trained " << a.iters << " iterations over " << data.size()
            << " samples; final loss " << last << "; checkpoint in " << a.out
            << "\n";
  return 0;
}

int run_train_tan(const TrainTanArgs& a, const json& cfg) {
  Dataset full = load_dataset(a.data);
  auto [train, test] = apply_split(full, SplitSpec::parse(a.split));
  LcnModel<float> lcn = load_lcn_checkpoint(a.lcn);
  auto seqs = make_tan_training_set(train, lcn,
                                    gt_from(a.sigma, a.beta, a.knn),
                                    a.finetune_lcn);
  TanConfig tc;
  tc.k = a.k;
  tc.blocks = a.blocks;
  tc.hidden = a.hidden;
  tc.lambda = a.lambda;
  tc.lr = a.lr;
  tc.init_std = a.init_std;
  tc.iters = a.iters;
  tc.seed = a.seed;
  tc.ckpt_interval = a.ckpt_interval;
  tc.ckpt_dir = a.out;
  tc.resume = a.resume;
  tc.finetune_lcn = a.finetune_lcn;
  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "loss.jsonl",
                    a.resume ? std::ios::app : std::ios::trunc);
  auto result = tan_train(seqs, tc, &lcn, [&](int64_t iter, double loss) {
    log << json{{"iter", iter}, {"loss", loss}}.dump() << '\n';
  });
  if (a.finetune_lcn) save_lcn_checkpoint(lcn, fs::path(a.out) / "lcn");
  write_json(fs::path(a.out) / "train_config.json",
             json{{"config", cfg}, {"config_hash", config_hash(cfg)}});
  double last = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
  std::cout << "trained " << a.iters << " iterations; final loss " << last
            << "; checkpoint in " << a.out << "\n";
  return 0;
}

int run_infer(const InferArgs& a) {
  Dataset ds = load_dataset(a.data);
  LcnModel<float> lcn = load_lcn_checkpoint(a.lcn);
  std::optional<TanModel<float>> tan;
  if (!a.tan.empty() && !a.single_frame) tan = load_tan_checkpoint(a.tan);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw std::runtime_error("cannot write " + a.out);
    out = &file;
  }
  if (!a.heatmap_dir.empty()) fs::create_directories(a.heatmap_dir);

  for (const auto& seq : ds.sequences) {
    StreamingCounter counter(&lcn, tan ? &*tan : nullptr, tan ? tan->k : 0);
    auto emit = [&](const StreamingCounter::FrameResult& r) {
      const Frame& f = seq.frames[static_cast<size_t>(r.frame_index)];
      json rec{{"sequence", seq.name}, {"frame", f.name}, {"count", r.count}};
      if (!r.weights.empty()) rec["weights"] = r.weights;
      *out << rec.dump() << '\n';
      if (!a.heatmap_dir.empty())
        write_png(fs::path(a.heatmap_dir) / (seq.name + "_" + f.name + ".png"),
                  heatmap_u8(r.fused.grid));
    };
    for (const auto& f : seq.frames) {
      Tensor<float> frame = image_to_tensor(f.image());
      for (const auto& r : counter.push(frame)) emit(r);
    }
    for (const auto& r : counter.finish()) emit(r);
  }
  return 0;
}

std::vector<double> read_counts_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open counts file " + path);
  std::vector<double> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(std::stod(line));
  }
  return out;
}

int run_eval(const EvalArgs& a, const json& cfg, bool no_timestamp) {
  Dataset ds = load_dataset(a.data);
  if (!a.split.empty()) {
    auto [train, test] = apply_split(ds, SplitSpec::parse(a.split));
    ds = std::move(test);
  }
  EvalReport report;
  if (!a.counts_file.empty()) {
    report = evaluate_counts(ds, read_counts_file(a.counts_file));
  } else {
    if (a.lcn.empty())
      throw std::runtime_error("eval needs --lcn (or --counts-file)");
    LcnModel<float> lcn = load_lcn_checkpoint(a.lcn);
    std::optional<TanModel<float>> tan;
    if (!a.tan.empty()) tan = load_tan_checkpoint(a.tan);
    std::string mode = a.mode;
    if (mode == "auto") mode = tan ? "tan" : "lcn";
    EvalMode m;
    if (mode == "tan") m = EvalMode::tan;
    else if (mode == "lcn") m = EvalMode::lcn_single;
    else if (mode == "avg") m = EvalMode::uniform_avg;
    else throw std::runtime_error("unknown eval mode " + mode);
    int k = tan ? tan->k : a.k;
    report = evaluate(ds, lcn, tan ? &*tan : nullptr, m, k, !a.no_roi);
  }
  json j = eval_report_json(report, cfg, no_timestamp);
  if (!a.out.empty()) write_json(a.out, j);
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    csv << "sequence,frame,pred,gt\n";
    for (const auto& row : report.rows)
      csv << row.sequence << ',' << row.frame << ',' << row.pred << ','
          << row.gt << '\n';
  }
  std::cout << "model " << report.model_id << "  MAE " << report.mae
            << "  MSE " << report.mse << "  frames " << report.rows.size()
            << "\n";
  for (const auto& s : report.per_scene)
    std::cout << "  scene " << s.sequence << ": MAE " << s.mae << "  MSE "
              << s.mse << "  frames " << s.frames << "\n";
  return 0;
}

int run_bench(const BenchArgs& a, const json& cfg, int threads,
              bool no_timestamp) {
  auto [w, h] = parse_resolution(a.resolution);
  LcnModel<float> lcn;
  TanModel<float> tan;
  if (!a.lcn.empty()) {
    lcn = load_lcn_checkpoint(a.lcn);
  } else {
    Rng rng(a.seed);
    lcn = LcnModel<float>::random_init(3, 0.01, rng);
  }
  if (!a.tan.empty()) {
    tan = load_tan_checkpoint(a.tan);
  } else {
    TanConfig tc;
    tc.k = a.k;
    tc.blocks = a.blocks;
    tc.hidden = a.hidden;
    Rng rng(a.seed + 1);
    tan = TanModel<float>::random_init(tc, rng);
  }
  TimingReport r =
      fps_bench(lcn, tan, w, h, a.frames, threads, a.warmup, a.seed);
  json j{{"config", cfg},
         {"config_hash", config_hash(cfg)},
         {"resolution",
          std::to_string(r.width) + "x" + std::to_string(r.height)},
         {"frames", r.frames},
         {"wall_seconds", r.wall_seconds},
         {"fps", r.fps},
         {"threads", r.threads},
         {"precision", r.precision},
         {"isa", r.isa}};
  if (!no_timestamp) j["timestamp"] = timestamp_utc();
  if (!a.out.empty()) write_json(a.out, j);
  std::cout << "streaming " << r.width << "x" << r.height << " over "
            << r.frames << " frames: " << r.fps << " FPS (" << r.threads
            << " threads, " << r.precision << ", " << r.isa << ")\n";
  return 0;
}

int run_params(const ParamsArgs& a, const json& cfg) {
  auto lcn = LcnModel<float>::zeros(a.in_channels);
  TanConfig tc;
  tc.k = a.k;
  tc.blocks = a.blocks;
  tc.hidden = a.hidden;
  auto tan = TanModel<float>::zeros(tc);
  auto r = count_params(lcn, tan);
  json j{{"config", cfg},
         {"config_hash", config_hash(cfg)},
         {"lcn", r.lcn},
         {"tan", r.tan},
         {"combined", r.combined}};
  if (!a.out.empty()) write_json(a.out, j);
  std::cout << "lcn " << r.lcn << "  tan " << r.tan << "  combined "
            << r.combined << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tancount: video crowd counting with temporal density fusion"};
  app.require_subcommand(1);

  int threads_flag = 0;
  bool no_timestamp = false;
  std::string config_path;
  app.add_option("--threads", threads_flag,
                 "worker threads (default: TANCOUNT_THREADS or hardware)");
  app.add_flag("--no-timestamp", no_timestamp,
               "omit timestamps from reports (reproducible output)");
  app.add_option("--config", config_path, "JSON config file; flags override");

  SynthArgs synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic video dataset");
  auto* sy_out =
      synth_cmd->add_option("--out", synth.out, "output dataset root")
          ->required();
  auto* sy_spec =
      synth_cmd->add_option("--spec", synth.spec_file, "synthetic spec JSON");
  auto* sy_walkers = synth_cmd->add_option("--walkers", synth.walkers);
  auto* sy_frames = synth_cmd->add_option("--frames", synth.frames);
  auto* sy_size = synth_cmd->add_option("--size", synth.size, "WxH");
  auto* sy_speed = synth_cmd->add_option("--speed", synth.speed);
  auto* sy_noise = synth_cmd->add_option("--noise", synth.noise);
  auto* sy_blob = synth_cmd->add_option("--blob-sigma", synth.blob_sigma);
  auto* sy_gain = synth_cmd->add_option("--gain-drop-prob", synth.gain_drop);
  auto* sy_seed = synth_cmd->add_option("--seed", synth.seed);

  GenDensityArgs gen;
  auto* gen_cmd =
      app.add_subcommand("gen-density", "render ground-truth density maps");
  auto* gd_data =
      gen_cmd->add_option("--data", gen.data, "dataset root")->required();
  auto* gd_out = gen_cmd->add_option("--out", gen.out)->required();
  auto* gd_sigma =
      gen_cmd->add_option("--sigma", gen.sigma, "adaptive | fixed:<px>");
  auto* gd_beta = gen_cmd->add_option("--beta", gen.beta);
  auto* gd_knn = gen_cmd->add_option("--knn", gen.knn);
  auto* gd_down = gen_cmd->add_option("--downsample", gen.downsample);
  auto* gd_heat = gen_cmd->add_flag("--heatmaps", gen.heatmaps);
  auto* gd_seed = gen_cmd->add_option("--seed", gen.seed);

  TrainLcnArgs tl;
  auto* tl_cmd =
      app.add_subcommand("train-lcn", "train the per-frame counting network");
  auto* tl_data = tl_cmd->add_option("--data", tl.data)->required();
  auto* tl_out =
      tl_cmd->add_option("--out", tl.out, "checkpoint directory")->required();
  auto* tl_split = tl_cmd->add_option(
      "--split", tl.split, "MALL_PAPER | UCSD_PAPER | ALL_TRAIN | json file");
  auto* tl_sigma = tl_cmd->add_option("--sigma", tl.sigma);
  auto* tl_beta = tl_cmd->add_option("--beta", tl.beta);
  auto* tl_knn = tl_cmd->add_option("--knn", tl.knn);
  auto* tl_lr = tl_cmd->add_option("--lr", tl.lr);
  auto* tl_std = tl_cmd->add_option("--init-std", tl.init_std);
  auto* tl_batch = tl_cmd->add_option("--batch", tl.batch);
  auto* tl_iters = tl_cmd->add_option("--iters", tl.iters);
  auto* tl_ck = tl_cmd->add_option("--ckpt-interval", tl.ckpt_interval);
  auto* tl_seed = tl_cmd->add_option("--seed", tl.seed);
  auto* tl_resume = tl_cmd->add_flag("--resume", tl.resume);

  TrainTanArgs tt;
  auto* tt_cmd =
      app.add_subcommand("train-tan", "train the temporal fusion network");
  auto* tt_data = tt_cmd->add_option("--data", tt.data)->required();
  auto* tt_out = tt_cmd->add_option("--out", tt.out)->required();
  auto* tt_lcn =
      tt_cmd->add_option("--lcn", tt.lcn, "trained LCN checkpoint")
          ->required();
  auto* tt_split = tt_cmd->add_option("--split", tt.split);
  auto* tt_sigma = tt_cmd->add_option("--sigma", tt.sigma);
  auto* tt_beta = tt_cmd->add_option("--beta", tt.beta);
  auto* tt_knn = tt_cmd->add_option("--knn", tt.knn);
  auto* tt_k = tt_cmd->add_option("--k", tt.k, "frames on each side");
  auto* tt_blocks = tt_cmd->add_option("--blocks", tt.blocks);
  auto* tt_hidden = tt_cmd->add_option("--hidden", tt.hidden);
  auto* tt_lambda = tt_cmd->add_option("--lambda", tt.lambda);
  auto* tt_lr = tt_cmd->add_option("--lr", tt.lr);
  auto* tt_std = tt_cmd->add_option("--init-std", tt.init_std);
  auto* tt_iters = tt_cmd->add_option("--iters", tt.iters);
  auto* tt_ck = tt_cmd->add_option("--ckpt-interval", tt.ckpt_interval);
  auto* tt_seed = tt_cmd->add_option("--seed", tt.seed);
  auto* tt_resume = tt_cmd->add_flag("--resume", tt.resume);
  auto* tt_ft = tt_cmd->add_flag("--finetune-lcn", tt.finetune_lcn);

  InferArgs inf;
  auto* inf_cmd = app.add_subcommand("infer", "streaming per-frame counts");
  inf_cmd->add_option("--data", inf.data)->required();
  inf_cmd->add_option("--lcn", inf.lcn)->required();
  inf_cmd->add_option("--tan", inf.tan);
  inf_cmd->add_option("--out", inf.out, "JSONL output (default stdout)");
  inf_cmd->add_option("--heatmaps", inf.heatmap_dir,
                      "directory for PNG heatmaps");
  inf_cmd->add_flag("--single-frame", inf.single_frame,
                    "bypass temporal fusion");

  EvalArgs ev;
  auto* ev_cmd =
      app.add_subcommand("eval", "MAE/MSE report against annotations");
  ev_cmd->add_option("--data", ev.data)->required();
  ev_cmd->add_option("--lcn", ev.lcn);
  ev_cmd->add_option("--tan", ev.tan);
  ev_cmd->add_option("--split", ev.split, "evaluate the split's test part");
  ev_cmd->add_option("--mode", ev.mode, "auto | tan | lcn | avg");
  ev_cmd->add_option("--k", ev.k);
  ev_cmd->add_option("--counts-file", ev.counts_file,
                     "external per-frame counts");
  ev_cmd->add_option("--out", ev.out, "report JSON path");
  ev_cmd->add_option("--csv", ev.csv, "per-frame CSV path");
  ev_cmd->add_flag("--no-roi", ev.no_roi);

  BenchArgs be;
  auto* be_cmd =
      app.add_subcommand("bench", "streaming throughput benchmark");
  auto* be_res = be_cmd->add_option("--resolution", be.resolution, "WxH");
  auto* be_frames = be_cmd->add_option("--frames", be.frames);
  auto* be_warm = be_cmd->add_option("--warmup", be.warmup);
  be_cmd->add_option("--lcn", be.lcn,
                     "checkpoint (random weights if omitted)");
  be_cmd->add_option("--tan", be.tan);
  auto* be_k = be_cmd->add_option("--k", be.k);
  auto* be_blocks = be_cmd->add_option("--blocks", be.blocks);
  auto* be_hidden = be_cmd->add_option("--hidden", be.hidden);
  auto* be_seed = be_cmd->add_option("--seed", be.seed);
  be_cmd->add_option("--out", be.out, "report JSON path");

  ParamsArgs pa;
  auto* pa_cmd = app.add_subcommand("params", "parameter-count report");
  auto* pa_k = pa_cmd->add_option("--k", pa.k);
  auto* pa_blocks = pa_cmd->add_option("--blocks", pa.blocks);
  auto* pa_hidden = pa_cmd->add_option("--hidden", pa.hidden);
  auto* pa_in = pa_cmd->add_option("--in-channels", pa.in_channels);
  pa_cmd->add_option("--out", pa.out, "report JSON path");

  // Global flags (--threads, --config, --no-timestamp) may follow the
  // subcommand name.
  for (auto* sc : app.get_subcommands([](const CLI::App*) { return true; }))
    sc->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    ConfigOverlay overlay;
    if (!config_path.empty()) overlay.load(config_path);

    int threads = resolve_threads(threads_flag);
    ThreadPool::instance().set_threads(threads);

    if (synth_cmd->parsed()) {
      overlay.apply(sy_out, "out", &synth.out);
      overlay.apply(sy_spec, "spec", &synth.spec_file);
      overlay.apply(sy_walkers, "walkers", &synth.walkers);
      overlay.apply(sy_frames, "frames", &synth.frames);
      overlay.apply(sy_size, "size", &synth.size);
      overlay.apply(sy_speed, "speed", &synth.speed);
      overlay.apply(sy_noise, "noise", &synth.noise);
      overlay.apply(sy_blob, "blob_sigma", &synth.blob_sigma);
      overlay.apply(sy_gain, "gain_drop_prob", &synth.gain_drop);
      overlay.apply(sy_seed, "seed", &synth.seed);
      json cfg{{"command", "synth"},       {"out", synth.out},
               {"walkers", synth.walkers}, {"frames", synth.frames},
               {"size", synth.size},       {"speed", synth.speed},
               {"noise", synth.noise},     {"blob_sigma", synth.blob_sigma},
               {"gain_drop_prob", synth.gain_drop},
               {"seed", synth.seed}};
      announce("synth", cfg);
      return run_synth(synth, cfg);
    }
    if (gen_cmd->parsed()) {
      overlay.apply(gd_data, "data", &gen.data);
      overlay.apply(gd_out, "out", &gen.out);
      overlay.apply(gd_sigma, "sigma", &gen.sigma);
      overlay.apply(gd_beta, "beta", &gen.beta);
      overlay.apply(gd_knn, "knn", &gen.knn);
      overlay.apply(gd_down, "downsample", &gen.downsample);
      overlay.apply(gd_heat, "heatmaps", &gen.heatmaps);
      overlay.apply(gd_seed, "seed", &gen.seed);
      json cfg{{"command", "gen-density"},     {"data", gen.data},
               {"out", gen.out},               {"sigma", gen.sigma},
               {"beta", gen.beta},             {"knn", gen.knn},
               {"downsample", gen.downsample}, {"seed", gen.seed}};
      announce("gen-density", cfg);
      return run_gen_density(gen, cfg);
    }
    if (tl_cmd->parsed()) {
      overlay.apply(tl_data, "data", &tl.data);
      overlay.apply(tl_out, "out", &tl.out);
      overlay.apply(tl_split, "split", &tl.split);
      overlay.apply(tl_sigma, "sigma", &tl.sigma);
      overlay.apply(tl_beta, "beta", &tl.beta);
      overlay.apply(tl_knn, "knn", &tl.knn);
      overlay.apply(tl_lr, "lr", &tl.lr);
      overlay.apply(tl_std, "init_std", &tl.init_std);
      overlay.apply(tl_batch, "batch", &tl.batch);
      overlay.apply(tl_iters, "iters", &tl.iters);
      overlay.apply(tl_ck, "ckpt_interval", &tl.ckpt_interval);
      overlay.apply(tl_seed, "seed", &tl.seed);
      overlay.apply(tl_resume, "resume", &tl.resume);
      json cfg{{"command", "train-lcn"},  {"data", tl.data},
               {"out", tl.out},           {"split", tl.split},
               {"sigma", tl.sigma},       {"beta", tl.beta},
               {"knn", tl.knn},           {"lr", tl.lr},
               {"init_std", tl.init_std}, {"batch", tl.batch},
               {"iters", tl.iters},       {"seed", tl.seed}};
      announce("train-lcn", cfg);
      return run_train_lcn(tl, cfg);
    }
    if (tt_cmd->parsed()) {
      overlay.apply(tt_data, "data", &tt.data);
      overlay.apply(tt_out, "out", &tt.out);
      overlay.apply(tt_lcn, "lcn", &tt.lcn);
      overlay.apply(tt_split, "split", &tt.split);
      overlay.apply(tt_sigma, "sigma", &tt.sigma);
      overlay.apply(tt_beta, "beta", &tt.beta);
      overlay.apply(tt_knn, "knn", &tt.knn);
      overlay.apply(tt_k, "k", &tt.k);
      overlay.apply(tt_blocks, "blocks", &tt.blocks);
      overlay.apply(tt_hidden, "hidden", &tt.hidden);
      overlay.apply(tt_lambda, "lambda", &tt.lambda);
      overlay.apply(tt_lr, "lr", &tt.lr);
      overlay.apply(tt_std, "init_std", &tt.init_std);
      overlay.apply(tt_iters, "iters", &tt.iters);
      overlay.apply(tt_ck, "ckpt_interval", &tt.ckpt_interval);
      overlay.apply(tt_seed, "seed", &tt.seed);
      overlay.apply(tt_resume, "resume", &tt.resume);
      overlay.apply(tt_ft, "finetune_lcn", &tt.finetune_lcn);
      json cfg{{"command", "train-tan"}, {"data", tt.data},
               {"out", tt.out},          {"lcn", tt.lcn},
               {"split", tt.split},      {"sigma", tt.sigma},
               {"k", tt.k},              {"blocks", tt.blocks},
               {"hidden", tt.hidden},    {"lambda", tt.lambda},
               {"lr", tt.lr},            {"iters", tt.iters},
               {"seed", tt.seed},        {"finetune_lcn", tt.finetune_lcn}};
      announce("train-tan", cfg);
      return run_train_tan(tt, cfg);
    }
    if (inf_cmd->parsed()) {
      json cfg{{"command", "infer"},
               {"data", inf.data},
               {"lcn", inf.lcn},
               {"tan", inf.tan},
               {"single_frame", inf.single_frame}};
      announce("infer", cfg);
      return run_infer(inf);
    }
    if (ev_cmd->parsed()) {
      json cfg{{"command", "eval"}, {"data", ev.data},
               {"lcn", ev.lcn},     {"tan", ev.tan},
               {"split", ev.split}, {"mode", ev.mode},
               {"k", ev.k},         {"counts_file", ev.counts_file},
               {"no_roi", ev.no_roi}};
      announce("eval", cfg);
      return run_eval(ev, cfg, no_timestamp);
    }
    if (be_cmd->parsed()) {
      overlay.apply(be_res, "resolution", &be.resolution);
      overlay.apply(be_frames, "frames", &be.frames);
      overlay.apply(be_warm, "warmup", &be.warmup);
      overlay.apply(be_k, "k", &be.k);
      overlay.apply(be_blocks, "blocks", &be.blocks);
      overlay.apply(be_hidden, "hidden", &be.hidden);
      overlay.apply(be_seed, "seed", &be.seed);
      json cfg{{"command", "bench"},
               {"resolution", be.resolution},
               {"frames", be.frames},
               {"warmup", be.warmup},
               {"threads", threads},
               {"k", be.k},
               {"blocks", be.blocks},
               {"hidden", be.hidden},
               {"seed", be.seed}};
      announce("bench", cfg);
      return run_bench(be, cfg, threads, no_timestamp);
    }
    if (pa_cmd->parsed()) {
      overlay.apply(pa_k, "k", &pa.k);
      overlay.apply(pa_blocks, "blocks", &pa.blocks);
      overlay.apply(pa_hidden, "hidden", &pa.hidden);
      overlay.apply(pa_in, "in_channels", &pa.in_channels);
      json cfg{{"command", "params"},
               {"k", pa.k},
               {"blocks", pa.blocks},
               {"hidden", pa.hidden},
               {"in_channels", pa.in_channels}};
      announce("params", cfg);
      return run_params(pa, cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
