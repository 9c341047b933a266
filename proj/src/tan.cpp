#include "tancount/tan.hpp"

#include <fstream>

#include "json.hpp"
#include "tancount/adam.hpp"
#include "tancount/init.hpp"
#include "tancount/ops.hpp"
#include "tancount/tensor_io.hpp"

namespace tancount {

void TanConfig::validate() const {
  check(k >= 1, "tan config: k must be >= 1");
  check(blocks >= 1, "tan config: block count must be >= 1");
  check(hidden >= 1, "tan config: hidden width must be >= 1");
  check(layers_per_block >= 1, "tan config: layers_per_block must be >= 1");
  check(lambda >= 0.0, "tan config: lambda must be >= 0");
}

template <typename T>
TanModel<T> TanModel<T>::zeros(const TanConfig& cfg) {
  cfg.validate();
  TanModel<T> m;
  m.k = cfg.k;
  m.hidden = cfg.hidden;
  m.layers_per_block = cfg.layers_per_block;
  const int64_t H = cfg.hidden;
  m.blocks.resize(cfg.blocks);
  for (auto& blk : m.blocks) {
    blk.in_w = Tensor<T>({1, H});
    blk.in_b = Tensor<T>({H});
    blk.layers.resize(cfg.layers_per_block);
    for (auto& layer : blk.layers) {
      layer.w1 = Tensor<T>({3, H, H});
      layer.b1 = Tensor<T>({H});
      layer.w2 = Tensor<T>({H, H});
      layer.b2 = Tensor<T>({H});
    }
    blk.out_w = Tensor<T>({H, 1});
    blk.out_b = Tensor<T>({1});
  }
  return m;
}

template <typename T>
TanModel<T> TanModel<T>::random_init(const TanConfig& cfg, Rng& rng) {
  TanModel<T> m = zeros(cfg);
  for (auto& blk : m.blocks) {
    blk.in_w = gaussian_init<T>(blk.in_w.shape(), cfg.init_std, rng);
    for (auto& layer : blk.layers) {
      layer.w1 = gaussian_init<T>(layer.w1.shape(), cfg.init_std, rng);
      layer.w2 = gaussian_init<T>(layer.w2.shape(), cfg.init_std, rng);
    }
    blk.out_w = gaussian_init<T>(blk.out_w.shape(), cfg.init_std, rng);
  }
  return m;
}

template <typename T>
int64_t TanModel<T>::param_count() const {
  int64_t total = 0;
  for (const auto& blk : blocks) {
    total += blk.in_w.size() + blk.in_b.size();
    for (const auto& layer : blk.layers)
      total += layer.w1.size() + layer.b1.size() + layer.w2.size() +
               layer.b2.size();
    total += blk.out_w.size() + blk.out_b.size();
  }
  return total;
}

namespace {

template <typename M, typename TensorPtr>
std::vector<std::pair<std::string, TensorPtr>> tan_param_list(M& model) {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (size_t b = 0; b < model.blocks.size(); ++b) {
    auto& blk = model.blocks[b];
    std::string prefix = "block" + std::to_string(b + 1) + "_";
    out.emplace_back(prefix + "in_w", &blk.in_w);
    out.emplace_back(prefix + "in_b", &blk.in_b);
    for (size_t l = 0; l < blk.layers.size(); ++l) {
      std::string lp = prefix + "l" + std::to_string(l + 1) + "_";
      out.emplace_back(lp + "w1", &blk.layers[l].w1);
      out.emplace_back(lp + "b1", &blk.layers[l].b1);
      out.emplace_back(lp + "w2", &blk.layers[l].w2);
      out.emplace_back(lp + "b2", &blk.layers[l].b2);
    }
    out.emplace_back(prefix + "out_w", &blk.out_w);
    out.emplace_back(prefix + "out_b", &blk.out_b);
  }
  return out;
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> TanModel<T>::params() {
  return tan_param_list<TanModel<T>, Tensor<T>*>(*this);
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> TanModel<T>::params()
    const {
  return tan_param_list<const TanModel<T>, const Tensor<T>*>(*this);
}

template struct TanModel<float>;
template struct TanModel<double>;

// ---- window plumbing ----

namespace {

void check_window(const FrameWindow& window) {
  check(!window.maps.empty(), "frame window: empty");
  check(window.maps.size() % 2 == 1, "frame window: length must be 2k+1");
  for (const auto& m : window.maps)
    check(m.same_shape(window.maps[0]),
          "frame window: map shapes differ, " + m.shape_string() + " vs " +
              window.maps[0].shape_string());
}

}  // namespace

Tensor<float> reshape_concat(const FrameWindow& window) {
  check_window(window);
  int64_t per = window.maps[0].size();
  int64_t total = per * static_cast<int64_t>(window.maps.size());
  Tensor<float> v({total, 1});
  int64_t off = 0;
  for (const auto& m : window.maps) {
    std::copy(m.data(), m.data() + per, v.data() + off);
    off += per;
  }
  return v;
}

std::vector<Tensor<float>> split_concat(const Tensor<float>& v, int64_t frames,
                                        int64_t m, int64_t n) {
  check(v.size() == frames * m * n, "split_concat: size mismatch");
  std::vector<Tensor<float>> maps;
  maps.reserve(static_cast<size_t>(frames));
  for (int64_t f = 0; f < frames; ++f) {
    Tensor<float> t({m, n});
    std::copy(v.data() + f * m * n, v.data() + (f + 1) * m * n, t.data());
    maps.push_back(std::move(t));
  }
  return maps;
}

// ---- block forward (inference path) ----

template <typename T>
Tensor<T> dilated_residual_layer(const Tensor<T>& v,
                                 const typename TanModel<T>::Layer& layer,
                                 int layer_index) {
  check(layer_index >= 1, "dilated_residual_layer: layer index is 1-based");
  const int d = TanModel<T>::dilation_of(layer_index);
  Tensor<T> hidden = ops::dilated_conv1d(v, layer.w1, layer.b1, d);
  hidden = ops::relu(hidden);
  Tensor<T> update = ops::conv1x1_seq(hidden, layer.w2, layer.b2);
  check(update.same_shape(v), "dilated_residual_layer: residual shape mismatch");
  Tensor<T> out(v.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = v[i] + update[i];
  return out;
}

template Tensor<float> dilated_residual_layer<float>(
    const Tensor<float>&, const TanModel<float>::Layer&, int);
template Tensor<double> dilated_residual_layer<double>(
    const Tensor<double>&, const TanModel<double>::Layer&, int);

template <typename T>
Tensor<T> dilated_residual_block(const Tensor<T>& v,
                                 const typename TanModel<T>::Block& block) {
  Tensor<T> h = ops::conv1x1_seq(v, block.in_w, block.in_b);
  for (size_t i = 0; i < block.layers.size(); ++i)
    h = dilated_residual_layer<T>(h, block.layers[i], static_cast<int>(i + 1));
  return ops::conv1x1_seq(h, block.out_w, block.out_b);
}

template Tensor<float> dilated_residual_block<float>(
    const Tensor<float>&, const TanModel<float>::Block&);
template Tensor<double> dilated_residual_block<double>(
    const Tensor<double>&, const TanModel<double>::Block&);

std::vector<double> fusion_weights(const Tensor<float>& v_out,
                                   int64_t segments) {
  check(segments >= 1 && v_out.size() % segments == 0,
        "fusion_weights: vector length " + std::to_string(v_out.size()) +
            " not divisible into " + std::to_string(segments) + " segments");
  const int64_t seg = v_out.size() / segments;
  std::vector<double> norms(static_cast<size_t>(segments), 0.0);
  double total = 0.0;
  for (int64_t s = 0; s < segments; ++s) {
    double acc = 0.0;
    const float* p = v_out.data() + s * seg;
    for (int64_t i = 0; i < seg; ++i) acc += std::abs(double(p[i]));
    norms[static_cast<size_t>(s)] = acc;
    total += acc;
  }
  std::vector<double> weights(static_cast<size_t>(segments));
  for (int64_t s = 0; s < segments; ++s)
    weights[static_cast<size_t>(s)] =
        total > 0.0 ? norms[static_cast<size_t>(s)] / total
                    : 1.0 / static_cast<double>(segments);
  return weights;
}

DensityMap fuse_density(const std::vector<double>& weights,
                        const FrameWindow& window) {
  check_window(window);
  check(weights.size() == window.maps.size(),
        "fuse_density: weight count does not match window length");
  DensityMap out;
  out.grid = Tensor<float>(window.maps[0].shape());
  out.scale = 8;
  for (size_t j = 0; j < weights.size(); ++j) {
    const float wj = static_cast<float>(weights[j]);
    const Tensor<float>& m = window.maps[j];
    for (int64_t i = 0; i < out.grid.size(); ++i) out.grid[i] += wj * m[i];
  }
  return out;
}

double block_loss(const DensityMap& fused, const DensityMap& gt,
                  double lambda) {
  check(fused.grid.same_shape(gt.grid), "block_loss: shape mismatch " +
                                            fused.grid.shape_string() + " vs " +
                                            gt.grid.shape_string());
  double dc = fused.count() - gt.count();
  double mse = dc * dc;
  double sl1 = 0.0;
  for (int64_t i = 0; i < fused.grid.size(); ++i) {
    double d = double(fused.grid[i]) - double(gt.grid[i]);
    double ad = std::abs(d);
    sl1 += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
  }
  sl1 /= static_cast<double>(fused.grid.size());
  return mse + lambda * sl1;
}

TanForwardResult tan_forward_maps(const FrameWindow& window,
                                  const TanModel<float>& tan) {
  check_window(window);
  check(static_cast<int>(window.maps.size()) == 2 * tan.k + 1,
        "tan_forward: window length " + std::to_string(window.maps.size()) +
            " does not match model k=" + std::to_string(tan.k));
  const int64_t segments = 2 * tan.k + 1;
  Tensor<float> v = reshape_concat(window);
  TanForwardResult result;
  for (const auto& blk : tan.blocks) {
    v = dilated_residual_block<float>(v, blk);
    result.block_weights.push_back(fusion_weights(v, segments));
  }
  result.weights = result.block_weights.back();
  result.fused = fuse_density(result.weights, window);
  result.count = result.fused.count();
  return result;
}

TanForwardResult tan_forward(const std::vector<Tensor<float>>& frames,
                             const LcnModel<float>& lcn,
                             const TanModel<float>& tan) {
  check(static_cast<int>(frames.size()) == 2 * tan.k + 1,
        "tan_forward: need 2k+1 frames");
  FrameWindow window;
  window.center = tan.k;
  for (const auto& f : frames) window.maps.push_back(lcn_forward_grid(f, lcn));
  return tan_forward_maps(window, tan);
}

// ---- checkpoints ----

namespace {

using nlohmann::json;

}  // namespace

void save_tan_checkpoint(const TanModel<float>& model,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json names = json::array();
  for (const auto& [name, t] : model.params()) {
    save_tensor(*t, dir / (name + ".tan"));
    names.push_back(name);
  }
  json dil = json::array();
  for (int i = 1; i <= model.layers_per_block; ++i)
    dil.push_back(TanModel<float>::dilation_of(i));
  json m{{"format", "tancount-checkpoint"},
         {"version", 1},
         {"model", "tan"},
         {"k", model.k},
         {"hidden", model.hidden},
         {"layers_per_block", model.layers_per_block},
         {"blocks", model.blocks.size()},
         {"dilations", dil},
         {"params", names}};
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << '\n';
  if (!os)
    throw std::runtime_error("checkpoint: write failed in " + dir.string());
}

TanModel<float> load_tan_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw std::runtime_error("checkpoint: cannot open " +
                             (dir / "manifest.json").string());
  json m = json::parse(is);
  if (m.value("format", "") != "tancount-checkpoint" ||
      m.value("model", "") != "tan")
    throw std::runtime_error("checkpoint: " + dir.string() +
                             " is not a tan checkpoint");
  TanConfig cfg;
  cfg.k = m.value("k", 2);
  cfg.hidden = m.value("hidden", 20);
  cfg.layers_per_block = m.value("layers_per_block", 3);
  cfg.blocks = m.value("blocks", 3);
  TanModel<float> model = TanModel<float>::zeros(cfg);
  for (auto& [name, t] : model.params()) {
    Tensor<float> loaded = load_tensor<float>(dir / (name + ".tan"));
    check(loaded.same_shape(*t), "checkpoint: tensor " + name + " has shape " +
                                     loaded.shape_string() + ", expected " +
                                     t->shape_string());
    *t = std::move(loaded);
  }
  return model;
}

// ---- training ----

template <typename T>
TanTapeParams<T> tan_register_params(Tape<T>& tape, TanModel<T>& model) {
  TanTapeParams<T> ids;
  for (auto& blk : model.blocks) {
    typename TanTapeParams<T>::Block b;
    b.in_w = tape.param(&blk.in_w);
    b.in_b = tape.param(&blk.in_b);
    for (auto& layer : blk.layers) {
      typename TanTapeParams<T>::Layer l;
      l.w1 = tape.param(&layer.w1);
      l.b1 = tape.param(&layer.b1);
      l.w2 = tape.param(&layer.w2);
      l.b2 = tape.param(&layer.b2);
      b.layers.push_back(l);
    }
    b.out_w = tape.param(&blk.out_w);
    b.out_b = tape.param(&blk.out_b);
    ids.blocks.push_back(std::move(b));
  }
  return ids;
}

template TanTapeParams<float> tan_register_params<float>(Tape<float>&,
                                                         TanModel<float>&);
template TanTapeParams<double> tan_register_params<double>(Tape<double>&,
                                                           TanModel<double>&);

template <typename T>
typename Tape<T>::Id tan_tape_window_loss(
    Tape<T>& tape, const std::vector<typename Tape<T>::Id>& maps,
    const TanTapeParams<T>& ids, const Tensor<T>& gt_map, double gt_count,
    double lambda) {
  using Id = typename Tape<T>::Id;
  Id v = tape.concat_flatten(maps);
  const int64_t len = tape.value(v).size();
  v = tape.reshape(v, {len, 1});
  const int64_t segments = static_cast<int64_t>(maps.size());
  Tensor<T> cgt({1});
  cgt[0] = static_cast<T>(gt_count);
  Id total = Tape<T>::kNone;
  for (const auto& blk : ids.blocks) {
    Id h = tape.conv1x1_seq(v, blk.in_w, blk.in_b);
    for (size_t i = 0; i < blk.layers.size(); ++i) {
      int d = TanModel<T>::dilation_of(static_cast<int>(i + 1));
      Id c = tape.dilated_conv1d(h, blk.layers[i].w1, blk.layers[i].b1, d);
      Id r = tape.relu(c);
      Id u = tape.conv1x1_seq(r, blk.layers[i].w2, blk.layers[i].b2);
      h = tape.add(h, u);
    }
    v = tape.conv1x1_seq(h, blk.out_w, blk.out_b);
    Id weights = tape.segment_l1_weights(v, segments);
    Id fused = tape.weighted_sum(weights, maps);
    Id diff = tape.sub(tape.sum(fused), tape.constant(cgt));
    Id loss = tape.square(diff);
    if (lambda > 0.0) {
      Id sl1 = tape.smooth_l1_mean(fused, gt_map);
      loss = tape.add(loss, tape.scale(sl1, static_cast<T>(lambda)));
    }
    total = total == Tape<T>::kNone ? loss : tape.add(total, loss);
  }
  return total;
}

template Tape<float>::Id tan_tape_window_loss<float>(
    Tape<float>&, const std::vector<Tape<float>::Id>&,
    const TanTapeParams<float>&, const Tensor<float>&, double, double);
template Tape<double>::Id tan_tape_window_loss<double>(
    Tape<double>&, const std::vector<Tape<double>::Id>&,
    const TanTapeParams<double>&, const Tensor<double>&, double, double);

namespace {

struct ParamOptimizer {
  std::vector<AdamState<float>> states;
  std::vector<std::pair<std::string, Tensor<float>*>> params;

  explicit ParamOptimizer(std::vector<std::pair<std::string, Tensor<float>*>> p)
      : params(std::move(p)) {
    for (auto& [name, t] : params) states.emplace_back(t->shape());
  }

  void zero_grads() {
    for (auto& [name, t] : params) {
      if (!t->has_grad()) t->alloc_grad();
      t->zero_grad();
    }
  }

  void step(double lr) {
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<float>* t = params[i].second;
      if (!t->has_grad()) t->alloc_grad();
      adam_step(*t, t->grad(), states[i], lr);
    }
  }

  void save(const std::filesystem::path& dir, int64_t next_iter) const {
    for (size_t i = 0; i < params.size(); ++i) {
      save_tensor(states[i].m, dir / ("adam_" + params[i].first + "_m.tan"));
      save_tensor(states[i].v, dir / ("adam_" + params[i].first + "_v.tan"));
    }
    nlohmann::json st{{"next_iter", next_iter},
                      {"adam_step", states.empty() ? 0 : states[0].step}};
    std::ofstream os(dir / "train_state.json");
    os << st.dump(2) << '\n';
  }

  int64_t load(const std::filesystem::path& dir) {
    for (size_t i = 0; i < params.size(); ++i) {
      states[i].m =
          load_tensor<float>(dir / ("adam_" + params[i].first + "_m.tan"));
      states[i].v =
          load_tensor<float>(dir / ("adam_" + params[i].first + "_v.tan"));
    }
    std::ifstream is(dir / "train_state.json");
    if (!is) throw std::runtime_error("resume: missing train_state.json");
    nlohmann::json st = nlohmann::json::parse(is);
    int64_t adam_t = st.value("adam_step", int64_t(0));
    for (auto& s : states) s.step = adam_t;
    return st.value("next_iter", int64_t(0));
  }
};

}  // namespace

TanTrainResult tan_train(const std::vector<VideoTrainSequence>& seqs,
                         const TanConfig& cfg, LcnModel<float>* lcn,
                         const std::function<void(int64_t, double)>& on_iter) {
  cfg.validate();
  check(!seqs.empty(), "tan_train: no sequences");
  check(!cfg.finetune_lcn || lcn != nullptr,
        "tan_train: fine-tuning requires the LCN model");

  std::vector<std::pair<int, int64_t>> centers;  // (sequence, frame)
  for (size_t s = 0; s < seqs.size(); ++s) {
    check(seqs[s].lcn_maps.size() == seqs[s].gt_maps.size() &&
              seqs[s].gt_maps.size() == seqs[s].gt_counts.size(),
          "tan_train: per-frame arrays differ in length");
    check(!cfg.finetune_lcn || seqs[s].frames.size() == seqs[s].lcn_maps.size(),
          "tan_train: fine-tuning requires per-frame images");
    for (int64_t t = 0; t < static_cast<int64_t>(seqs[s].lcn_maps.size()); ++t)
      centers.emplace_back(static_cast<int>(s), t);
  }
  check(!centers.empty(), "tan_train: no frames");

  Rng init_rng(cfg.seed);
  TanModel<float> model;
  int64_t start_iter = 0;
  if (cfg.resume && !cfg.ckpt_dir.empty()) {
    model = load_tan_checkpoint(cfg.ckpt_dir);
  } else {
    model = TanModel<float>::random_init(cfg, init_rng);
  }
  ParamOptimizer opt(model.params());
  std::optional<ParamOptimizer> lcn_opt;
  if (cfg.finetune_lcn) lcn_opt.emplace(lcn->params());
  if (cfg.resume && !cfg.ckpt_dir.empty()) start_iter = opt.load(cfg.ckpt_dir);

  auto save_all = [&](int64_t next_iter) {
    if (cfg.ckpt_dir.empty()) return;
    save_tan_checkpoint(model, cfg.ckpt_dir);
    opt.save(cfg.ckpt_dir, next_iter);
  };

  const int window = cfg.window();
  TanTrainResult result;
  for (int64_t iter = start_iter; iter < cfg.iters; ++iter) {
    auto [si, t] = centers[mix_seed(cfg.seed, uint64_t(iter) + 1) %
                           centers.size()];
    const VideoTrainSequence& seq = seqs[static_cast<size_t>(si)];
    const int64_t total = static_cast<int64_t>(seq.lcn_maps.size());

    opt.zero_grads();
    if (lcn_opt) lcn_opt->zero_grads();
    Tape<float> tape;
    TanTapeParams<float> ids = tan_register_params(tape, model);
    std::optional<LcnTapeParams<float>> lcn_ids;
    if (cfg.finetune_lcn) lcn_ids = lcn_register_params(tape, *lcn);

    std::vector<Tape<float>::Id> maps;
    for (int j = 0; j < window; ++j) {
      int64_t idx = std::clamp<int64_t>(t + j - cfg.k, 0, total - 1);
      if (cfg.finetune_lcn) {
        auto frame = tape.constant(seq.frames[static_cast<size_t>(idx)]);
        maps.push_back(lcn_tape_forward(tape, frame, *lcn_ids, *lcn));
      } else {
        maps.push_back(tape.constant(seq.lcn_maps[static_cast<size_t>(idx)]));
      }
    }
    Tape<float>::Id loss_id = tan_tape_window_loss(
        tape, maps, ids, seq.gt_maps[static_cast<size_t>(t)],
        seq.gt_counts[static_cast<size_t>(t)], cfg.lambda);
    double loss = tape.value(loss_id)[0];
    if (!std::isfinite(loss))
      throw std::runtime_error("tan_train: non-finite loss at iteration " +
                               std::to_string(iter));
    tape.backward(loss_id);
    opt.step(cfg.lr);
    if (lcn_opt) lcn_opt->step(cfg.finetune_lr);
    result.loss_curve.push_back(loss);
    if (on_iter) on_iter(iter, loss);
    if (cfg.ckpt_interval > 0 && (iter + 1) % cfg.ckpt_interval == 0)
      save_all(iter + 1);
  }
  save_all(cfg.iters);
  result.model = std::move(model);
  return result;
}

// ---- streaming inference ----

StreamingCounter::StreamingCounter(const LcnModel<float>* lcn,
                                   const TanModel<float>* tan, int k)
    : lcn_(lcn), tan_(tan), k_(k) {
  check(lcn_ != nullptr, "streaming: LCN model required");
  check(k_ >= 0, "streaming: k must be >= 0");
  check(tan_ == nullptr || tan_->k == k_,
        "streaming: k does not match the TAN model");
}

std::vector<StreamingCounter::FrameResult> StreamingCounter::push(
    const Tensor<float>& frame) {
  Tensor<float> map = lcn_forward_grid(frame, *lcn_);
  if (!maps_.empty())
    check(map.same_shape(maps_.back()),
          "streaming: frame resolution changed mid-stream");
  maps_.push_back(std::move(map));
  while (static_cast<int64_t>(maps_.size()) > 2 * k_ + 1) maps_.pop_front();
  ++pushed_;
  std::vector<FrameResult> out;
  if (tan_ == nullptr) {
    out.push_back(result_for(pushed_ - 1));
    emitted_ = pushed_;
    return out;
  }
  while (emitted_ + k_ < pushed_) out.push_back(result_for(emitted_++));
  return out;
}

std::vector<StreamingCounter::FrameResult> StreamingCounter::finish() {
  std::vector<FrameResult> out;
  while (emitted_ < pushed_) out.push_back(result_for(emitted_++));
  return out;
}

StreamingCounter::FrameResult StreamingCounter::result_for(int64_t t) {
  FrameResult r;
  r.frame_index = t;
  const int64_t oldest = pushed_ - static_cast<int64_t>(maps_.size());
  if (tan_ == nullptr) {
    const Tensor<float>& m = maps_.back();
    r.fused.grid = m;
    r.fused.scale = 8;
    r.count = r.fused.count();
    return r;
  }
  FrameWindow window;
  window.center = k_;
  for (int64_t j = -k_; j <= k_; ++j) {
    int64_t idx = std::clamp<int64_t>(t + j, 0, pushed_ - 1);
    window.maps.push_back(maps_[static_cast<size_t>(idx - oldest)]);
  }
  TanForwardResult fr = tan_forward_maps(window, *tan_);
  r.count = fr.count;
  r.weights = std::move(fr.weights);
  r.fused = std::move(fr.fused);
  return r;
}

}  // namespace tancount
