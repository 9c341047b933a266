#include "tancount/lcn.hpp"

#include <fstream>

#include "json.hpp"
#include "tancount/adam.hpp"
#include "tancount/init.hpp"
#include "tancount/ops.hpp"
#include "tancount/tensor_io.hpp"

namespace tancount {

std::array<LcnLayerSpec, 9> lcn_layer_table(int64_t in_channels) {
  return {{
      {3, in_channels, 8, true},   // conv1, max-pool1
      {3, 8, 16, false},           // conv2
      {3, 16, 16, true},           // conv3, max-pool2
      {3, 16, 32, false},          // conv4
      {3, 32, 32, false},          // conv5
      {3, 32, 32, true},           // conv6, max-pool3
      {3, 32, 16, false},          // conv7
      {3, 16, 8, false},           // conv8
      {1, 8, 1, false},            // conv9, linear output
  }};
}

int64_t lcn_param_count(int64_t in_channels) {
  int64_t total = 0;
  for (const auto& l : lcn_layer_table(in_channels))
    total += int64_t(l.kernel) * l.kernel * l.cin * l.cout + l.cout;
  return total;
}

template <typename T>
LcnModel<T> LcnModel<T>::zeros(int64_t in_channels) {
  LcnModel<T> m;
  m.in_channels = in_channels;
  auto table = lcn_layer_table(in_channels);
  for (size_t i = 0; i < table.size(); ++i) {
    const auto& l = table[i];
    m.conv[i].w = Tensor<T>({l.kernel, l.kernel, l.cin, l.cout});
    m.conv[i].b = Tensor<T>({l.cout});
  }
  return m;
}

template <typename T>
LcnModel<T> LcnModel<T>::random_init(int64_t in_channels, double stddev,
                                     Rng& rng) {
  LcnModel<T> m = zeros(in_channels);
  for (auto& layer : m.conv)
    layer.w = gaussian_init<T>(layer.w.shape(), stddev, rng);
  return m;
}

template <typename T>
int64_t LcnModel<T>::param_count() const {
  int64_t total = 0;
  for (const auto& layer : conv) total += layer.w.size() + layer.b.size();
  return total;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> LcnModel<T>::params() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (size_t i = 0; i < conv.size(); ++i) {
    std::string name = "conv" + std::to_string(i + 1);
    out.emplace_back(name + "_w", &conv[i].w);
    out.emplace_back(name + "_b", &conv[i].b);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> LcnModel<T>::params()
    const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (size_t i = 0; i < conv.size(); ++i) {
    std::string name = "conv" + std::to_string(i + 1);
    out.emplace_back(name + "_w", &conv[i].w);
    out.emplace_back(name + "_b", &conv[i].b);
  }
  return out;
}

template struct LcnModel<float>;
template struct LcnModel<double>;

namespace {

template <typename T>
void check_lcn_input(const Tensor<T>& frame, const LcnModel<T>& model) {
  check(frame.rank() == 3, "lcn_forward: frame must be HxWxC, got " +
                               frame.shape_string());
  check(frame.extent(2) == model.in_channels,
        "lcn_forward: frame has " + std::to_string(frame.extent(2)) +
            " channels, model expects " + std::to_string(model.in_channels));
  check(frame.extent(0) >= 8 && frame.extent(1) >= 8,
        "lcn_forward: frame " + frame.shape_string() + " is undersized, need >= 8x8");
}

}  // namespace

template <typename T>
Tensor<T> lcn_forward_grid(const Tensor<T>& frame, const LcnModel<T>& model) {
  check_lcn_input(frame, model);
  auto table = lcn_layer_table(model.in_channels);
  Tensor<T> x = frame;
  for (size_t i = 0; i < table.size(); ++i) {
    const auto& l = table[i];
    x = ops::conv2d(x, model.conv[i].w, model.conv[i].b, (l.kernel - 1) / 2);
    if (i + 1 < table.size()) x = ops::relu(x);
    if (l.pool_after) x = ops::maxpool2(x);
  }
  return x.reshaped({x.extent(0), x.extent(1)});
}

template Tensor<float> lcn_forward_grid<float>(const Tensor<float>&,
                                               const LcnModel<float>&);
template Tensor<double> lcn_forward_grid<double>(const Tensor<double>&,
                                                 const LcnModel<double>&);

DensityMap lcn_forward(const Tensor<float>& frame,
                       const LcnModel<float>& model) {
  DensityMap map;
  map.grid = lcn_forward_grid(frame, model);
  map.scale = 8;
  return map;
}

template <typename T>
LcnTapeParams<T> lcn_register_params(Tape<T>& tape, LcnModel<T>& model) {
  LcnTapeParams<T> ids;
  for (size_t i = 0; i < model.conv.size(); ++i) {
    ids.w[i] = tape.param(&model.conv[i].w);
    ids.b[i] = tape.param(&model.conv[i].b);
  }
  return ids;
}

template LcnTapeParams<float> lcn_register_params<float>(Tape<float>&,
                                                         LcnModel<float>&);
template LcnTapeParams<double> lcn_register_params<double>(Tape<double>&,
                                                           LcnModel<double>&);

template <typename T>
typename Tape<T>::Id lcn_tape_forward(Tape<T>& tape, typename Tape<T>::Id frame,
                                      const LcnTapeParams<T>& params,
                                      const LcnModel<T>& model) {
  check_lcn_input(tape.value(frame), model);
  auto table = lcn_layer_table(model.in_channels);
  typename Tape<T>::Id x = frame;
  for (size_t i = 0; i < table.size(); ++i) {
    const auto& l = table[i];
    x = tape.conv2d(x, params.w[i], params.b[i], (l.kernel - 1) / 2);
    if (i + 1 < table.size()) x = tape.relu(x);
    if (l.pool_after) x = tape.maxpool2(x);
  }
  const auto& shape = tape.value(x).shape();
  return tape.reshape(x, {shape[0], shape[1]});
}

template Tape<float>::Id lcn_tape_forward<float>(Tape<float>&, Tape<float>::Id,
                                                 const LcnTapeParams<float>&,
                                                 const LcnModel<float>&);
template Tape<double>::Id lcn_tape_forward<double>(Tape<double>&,
                                                   Tape<double>::Id,
                                                   const LcnTapeParams<double>&,
                                                   const LcnModel<double>&);

double lcn_loss(const Tensor<float>& pred, const Tensor<float>& gt) {
  check(pred.same_shape(gt), "lcn_loss: shape mismatch " +
                                 pred.shape_string() + " vs " +
                                 gt.shape_string());
  double acc = 0.0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    double d = double(pred[i]) - double(gt[i]);
    acc += d * d;
  }
  return 0.5 * acc;
}

double lcn_loss(const DensityMap& pred, const DensityMap& gt) {
  return lcn_loss(pred.grid, gt.grid);
}

// ---- checkpoints ----

namespace {

using nlohmann::json;

json lcn_manifest(const LcnModel<float>& model) {
  json layers = json::array();
  for (size_t i = 0; i < model.conv.size(); ++i) {
    std::string name = "conv" + std::to_string(i + 1);
    layers.push_back({{"name", name},
                      {"weight", name + "_w.tan"},
                      {"bias", name + "_b.tan"}});
  }
  return json{{"format", "tancount-checkpoint"},
              {"version", 1},
              {"model", "lcn"},
              {"in_channels", model.in_channels},
              {"layers", layers}};
}

json read_manifest(const std::filesystem::path& dir,
                   const std::string& expected_model) {
  std::ifstream is(dir / "manifest.json");
  if (!is)
    throw std::runtime_error("checkpoint: cannot open " +
                             (dir / "manifest.json").string());
  json m = json::parse(is);
  if (m.value("format", "") != "tancount-checkpoint" ||
      m.value("model", "") != expected_model)
    throw std::runtime_error("checkpoint: " + dir.string() + " is not a " +
                             expected_model + " checkpoint");
  return m;
}

}  // namespace

void save_lcn_checkpoint(const LcnModel<float>& model,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, t] : model.params())
    save_tensor(*t, dir / (name + ".tan"));
  std::ofstream os(dir / "manifest.json");
  os << lcn_manifest(model).dump(2) << '\n';
  if (!os) throw std::runtime_error("checkpoint: write failed in " + dir.string());
}

LcnModel<float> load_lcn_checkpoint(const std::filesystem::path& dir) {
  json m = read_manifest(dir, "lcn");
  LcnModel<float> model = LcnModel<float>::zeros(m.value("in_channels", 3));
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

namespace {

struct LcnOptimizer {
  std::vector<AdamState<float>> states;

  explicit LcnOptimizer(LcnModel<float>& model) {
    for (auto& [name, t] : model.params()) states.emplace_back(t->shape());
  }

  void step(LcnModel<float>& model, double lr) {
    auto ps = model.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      Tensor<float>* t = ps[i].second;
      if (!t->has_grad()) t->alloc_grad();
      adam_step(*t, t->grad(), states[i], lr);
    }
  }

  void zero_grads(LcnModel<float>& model) {
    for (auto& [name, t] : model.params()) {
      if (!t->has_grad()) t->alloc_grad();
      t->zero_grad();
    }
  }

  void save(const std::filesystem::path& dir, const LcnModel<float>& model,
            int64_t next_iter) const {
    auto ps = model.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      save_tensor(states[i].m, dir / ("adam_" + ps[i].first + "_m.tan"));
      save_tensor(states[i].v, dir / ("adam_" + ps[i].first + "_v.tan"));
    }
    nlohmann::json st{{"next_iter", next_iter},
                      {"adam_step", states.empty() ? 0 : states[0].step}};
    std::ofstream os(dir / "train_state.json");
    os << st.dump(2) << '\n';
  }

  int64_t load(const std::filesystem::path& dir, const LcnModel<float>& model) {
    auto ps = model.params();
    for (size_t i = 0; i < ps.size(); ++i) {
      states[i].m = load_tensor<float>(dir / ("adam_" + ps[i].first + "_m.tan"));
      states[i].v = load_tensor<float>(dir / ("adam_" + ps[i].first + "_v.tan"));
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

LcnTrainResult lcn_train(const std::vector<TrainSample>& data,
                         const LcnTrainConfig& cfg,
                         const std::function<void(int64_t, double)>& on_iter) {
  check(!data.empty(), "lcn_train: empty training set");
  check(cfg.lr >= 0.0, "lcn_train: negative learning rate");
  check(cfg.batch >= 1, "lcn_train: batch must be >= 1");

  LcnModel<float> model;
  int64_t start_iter = 0;
  Rng init_rng(cfg.seed);
  if (cfg.resume && !cfg.ckpt_dir.empty()) {
    model = load_lcn_checkpoint(cfg.ckpt_dir);
  } else {
    model = LcnModel<float>::random_init(data[0].frame.extent(2),
                                         cfg.init_std, init_rng);
  }
  LcnOptimizer opt(model);
  if (cfg.resume && !cfg.ckpt_dir.empty())
    start_iter = opt.load(cfg.ckpt_dir, model);

  auto save_all = [&](int64_t next_iter) {
    if (cfg.ckpt_dir.empty()) return;
    save_lcn_checkpoint(model, cfg.ckpt_dir);
    opt.save(cfg.ckpt_dir, model, next_iter);
  };

  LcnTrainResult result;
  for (int64_t iter = start_iter; iter < cfg.iters; ++iter) {
    opt.zero_grads(model);
    Tape<float> tape;
    LcnTapeParams<float> ids = lcn_register_params(tape, model);
    Tape<float>::Id total = Tape<float>::kNone;
    for (int b = 0; b < cfg.batch; ++b) {
      const TrainSample& s =
          data[mix_seed(cfg.seed, uint64_t(iter) * cfg.batch + b + 1) %
               data.size()];
      auto frame = tape.constant(s.frame);
      auto pred = lcn_tape_forward(tape, frame, ids, model);
      if (s.roi) pred = tape.mul_const(pred, *s.roi);
      auto loss = tape.sq_diff_sum_half(pred, s.gt);
      total = (total == Tape<float>::kNone) ? loss : tape.add(total, loss);
    }
    if (cfg.batch > 1) total = tape.scale(total, 1.0f / cfg.batch);
    double loss = tape.value(total)[0];
    if (!std::isfinite(loss)) {
      // Leave the last written checkpoint in place for post-mortem use.
      throw std::runtime_error("lcn_train: non-finite loss at iteration " +
                               std::to_string(iter));
    }
    tape.backward(total);
    opt.step(model, cfg.lr);
    result.loss_curve.push_back(loss);
    if (on_iter) on_iter(iter, loss);
    if (cfg.ckpt_interval > 0 && (iter + 1) % cfg.ckpt_interval == 0)
      save_all(iter + 1);
  }
  save_all(cfg.iters);
  result.model = std::move(model);
  return result;
}

}  // namespace tancount
