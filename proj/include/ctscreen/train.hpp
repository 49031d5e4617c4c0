#pragma once

// Weighted cross-entropy, Adam, learning-rate decay, early stopping, and the
// progressive-resizing ladder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctscreen/augment.hpp"
#include "ctscreen/error.hpp"
#include "ctscreen/nn/model.hpp"
#include "ctscreen/patch_sampler.hpp"
#include "ctscreen/rebalance.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::train {

using nn::ModelSpec;
using nn::Tensor;
using nn::Weights;

enum class Monitor { ValAccuracy, ValLoss };

inline Monitor parse_monitor(const std::string& s) {
  if (s == "val_accuracy") return Monitor::ValAccuracy;
  if (s == "val_loss") return Monitor::ValLoss;
  fail(ErrorCode::InvalidArgument, "unknown monitor '" + s + "'");
}

inline std::string to_string(Monitor m) { return m == Monitor::ValAccuracy ? "val_accuracy" : "val_loss"; }

struct TrainConfig {
  double lr0 = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool amsgrad = false;
  double decay_rate = 0.97;
  int max_epochs = 200;
  int patience = 15;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  rebalance::WeightMode weight_mode = rebalance::WeightMode::InverseFrequency;
  Monitor monitor = Monitor::ValAccuracy;
  bool restore_best = true;

  void validate() const {
    require(lr0 > 0.0, ErrorCode::ConfigError, "lr0 must be > 0");
    require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorCode::ConfigError,
            "beta1 and beta2 must lie in (0,1)");
    require(epsilon > 0.0, ErrorCode::ConfigError, "epsilon must be > 0");
    require(!amsgrad, ErrorCode::ConfigError, "amsgrad is not supported");
    require(decay_rate > 0.0 && decay_rate <= 1.0, ErrorCode::ConfigError, "decay_rate must lie in (0,1]");
    require(max_epochs >= 0 && patience >= 1, ErrorCode::ConfigError, "max_epochs >= 0 and patience >= 1 required");
    require(max_epochs == 0 || patience < max_epochs, ErrorCode::ConfigError, "patience must be < max_epochs");
    require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// loss

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad_logits;
};

/// loss = -(1/B) * sum_i w[y_i] * log(max(p[i, y_i], 1e-12)); the gradient is
/// taken w.r.t. the softmax input.
template <typename T>
LossResult<T> weighted_cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels,
                                     const std::vector<double>& weights) {
  const std::size_t B = probs.n(), K = probs.item_size();
  require(labels.size() == B, ErrorCode::ShapeMismatch, "one label per probability row required");
  require(weights.size() == K, ErrorCode::ShapeMismatch, "one class weight per class required");
  LossResult<T> r{0.0, Tensor<T>(probs.shape)};
  for (std::size_t i = 0; i < B; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    const double w = weights[static_cast<std::size_t>(y)];
    r.loss -= w * std::log(std::max(static_cast<double>(probs.data[i * K + static_cast<std::size_t>(y)]), 1e-12));
    for (std::size_t k = 0; k < K; ++k) {
      const double target = k == static_cast<std::size_t>(y) ? 1.0 : 0.0;
      r.grad_logits.data[i * K + k] =
          static_cast<T>(w * (static_cast<double>(probs.data[i * K + k]) - target) / static_cast<double>(B));
    }
  }
  r.loss /= static_cast<double>(B);
  return r;
}

// ---------------------------------------------------------------------------
// optimizer

template <typename T>
struct AdamState {
  std::vector<std::vector<Tensor<T>>> m, v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const Weights<T>& w) {
    AdamState s;
    for (const auto& l : w.layers) {
      s.m.emplace_back();
      s.v.emplace_back();
      for (const auto& p : l) {
        s.m.back().emplace_back(p.value.shape);
        s.v.back().emplace_back(p.value.shape);
      }
    }
    return s;
  }
};

/// Bias-corrected Adam on trainable parameters.
template <typename T>
void adam_step(Weights<T>& w, const Weights<T>& g, AdamState<T>& s, double lr, const TrainConfig& cfg) {
  require(g.layers.size() == w.layers.size() && s.m.size() == w.layers.size(), ErrorCode::ShapeMismatch,
          "adam: parameter layout mismatch");
  s.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < w.layers.size(); ++i)
    for (std::size_t j = 0; j < w.layers[i].size(); ++j) {
      auto& p = w.layers[i][j];
      if (!p.trainable) continue;
      const auto& gr = g.layers[i][j].value;
      require(gr.shape == p.value.shape, ErrorCode::ShapeMismatch, "adam: gradient shape mismatch");
      auto& m = s.m[i][j];
      auto& v = s.v[i][j];
      for (std::size_t e = 0; e < p.value.size(); ++e) {
        const double gv = gr[e];
        const double me = cfg.beta1 * m[e] + (1.0 - cfg.beta1) * gv;
        const double ve = cfg.beta2 * v[e] + (1.0 - cfg.beta2) * gv * gv;
        m[e] = static_cast<T>(me);
        v[e] = static_cast<T>(ve);
        p.value[e] = static_cast<T>(p.value[e] - lr * (me / c1) / (std::sqrt(ve / c2) + cfg.epsilon));
      }
    }
}

inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  require(epoch >= 0, ErrorCode::InvalidArgument, "epoch must be >= 0");
  return cfg.lr0 * std::pow(cfg.decay_rate, epoch);
}

// ---------------------------------------------------------------------------
// history and early stopping

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(9);
    os << "epoch,train_loss,train_accuracy,val_loss,val_accuracy,lr\n";
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ',' << e.val_accuracy
         << ',' << e.lr << '\n';
    return os.str();
  }
};

/// Index of the first epoch attaining the best monitored value.
inline std::size_t best_index(const std::vector<EpochRecord>& h, Monitor monitor) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < h.size(); ++i) {
    const bool better = monitor == Monitor::ValAccuracy ? h[i].val_accuracy > h[best].val_accuracy
                                                        : h[i].val_loss < h[best].val_loss;
    if (better) best = i;
  }
  return best;
}

/// True once the best value has not strictly improved for `patience` epochs.
inline bool early_stop(const std::vector<EpochRecord>& history, int patience, Monitor monitor = Monitor::ValAccuracy) {
  require(!history.empty(), ErrorCode::InvalidArgument, "empty history");
  const std::size_t since = history.size() - 1 - best_index(history, monitor);
  return since >= static_cast<std::size_t>(patience);
}

// ---------------------------------------------------------------------------
// data plumbing

inline nn::Shape4 input_shape_of(const Shape3& patch) { return {1, patch.s, patch.c, patch.r}; }

/// Stacks samples into an (N, 1, slices, columns, rows) batch; the volume
/// layout (rows fastest) already matches the tensor's width-fastest order.
template <typename T>
Tensor<T> make_batch(const std::vector<const patch::Sample*>& samples, const nn::Shape4& input) {
  Tensor<T> batch(nn::batch_shape(samples.size(), input));
  const std::size_t item = batch.item_size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& g = samples[i]->tensor;
    if (input[0] != 1 || input_shape_of(g.shape()) != input)
      fail(ErrorCode::ShapeMismatch, "sample " + samples[i]->source_id + " has shape " + g.shape().str() +
                                         ", model expects a different input");
    std::copy(g.data().begin(), g.data().end(), batch.data.begin() + static_cast<std::ptrdiff_t>(i * item));
  }
  return batch;
}

inline std::size_t argmax_row(const double* p, std::size_t k) {
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

/// Infer-mode class probabilities, sample-major (N x class_count).
template <typename T>
std::vector<double> predict_proba(const ModelSpec& spec, const Weights<T>& w, const std::vector<patch::Sample>& data,
                                  std::size_t batch_size = 16) {
  std::vector<double> out;
  out.reserve(data.size() * spec.class_count);
  Weights<T>& wm = const_cast<Weights<T>&>(w);  // infer mode leaves weights untouched
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    std::vector<const patch::Sample*> ptrs;
    for (std::size_t i = b; i < std::min(data.size(), b + batch_size); ++i) ptrs.push_back(&data[i]);
    const Tensor<T> probs = nn::model_forward(spec, wm, make_batch<T>(ptrs, spec.input_shape), nn::Mode::Infer, 0);
    out.insert(out.end(), probs.data.begin(), probs.data.end());
  }
  return out;
}

inline std::vector<int> labels_of(const std::vector<patch::Sample>& data) {
  std::vector<int> y;
  y.reserve(data.size());
  for (const auto& s : data) y.push_back(s.label);
  return y;
}

struct Evaluation {
  double loss = 0.0;  // unweighted cross-entropy
  double accuracy = 0.0;
};

inline Evaluation evaluate_probs(const std::vector<double>& probs, const std::vector<int>& labels, std::size_t k) {
  Evaluation e;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = &probs[i * k];
    e.loss -= std::log(std::max(row[static_cast<std::size_t>(labels[i])], 1e-12));
    if (argmax_row(row, k) == static_cast<std::size_t>(labels[i])) ++correct;
  }
  if (!labels.empty()) {
    e.loss /= static_cast<double>(labels.size());
    e.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  }
  return e;
}

inline void check_labels(const std::vector<patch::Sample>& data, std::size_t k, const char* what) {
  if (data.empty()) fail(ErrorCode::EmptyDataset, std::string(what) + " set is empty");
  for (const auto& s : data)
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= k)
      fail(ErrorCode::LabelOutOfRange, std::string(what) + " sample " + s.source_id + " has label " +
                                           std::to_string(s.label));
}

// ---------------------------------------------------------------------------
// fit

template <typename T>
struct FitResult {
  Weights<T> weights;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Batches follow a per-epoch seeded shuffle; a trailing batch of one sample is
/// merged into the previous batch so batchnorm always sees two or more values.
template <typename T>
FitResult<T> fit(const ModelSpec& spec, const Weights<T>& init, const std::vector<patch::Sample>& train_set,
                 const std::vector<patch::Sample>& val_set, const TrainConfig& cfg,
                 const augment::AugmentPolicy* policy = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  spec.validate();
  nn::check_weights(spec, init);
  FitResult<T> result{init, {}};
  if (cfg.max_epochs == 0) return result;
  check_labels(train_set, spec.class_count, "training");
  check_labels(val_set, spec.class_count, "validation");

  std::vector<std::uint64_t> counts(spec.class_count, 0);
  for (const auto& s : train_set) ++counts[static_cast<std::size_t>(s.label)];
  const std::vector<double> class_w = rebalance::class_weights(counts, cfg.weight_mode).weights;
  const std::vector<int> val_labels = labels_of(val_set);

  Weights<T> w = init;
  Weights<T> best = init;
  AdamState<T> adam = AdamState<T>::zeros_like(w);
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch), 0x73687566ULL}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch)});

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < n; ++batch_index) {
      std::size_t e = std::min(n, b + cfg.batch_size);
      if (n - e == 1) e = n;
      std::vector<patch::Sample> augmented;
      std::vector<const patch::Sample*> ptrs;
      std::vector<int> labels;
      if (policy) {
        augmented.reserve(e - b);
        for (std::size_t i = b; i < e; ++i) augmented.push_back(augment::augment_sample(train_set[order[i]], *policy, epoch_seed, order[i]));
        for (const auto& s : augmented) ptrs.push_back(&s);
      } else {
        for (std::size_t i = b; i < e; ++i) ptrs.push_back(&train_set[order[i]]);
      }
      for (const auto* s : ptrs) labels.push_back(s->label);

      nn::ForwardContext<T> ctx;
      const Tensor<T> probs = nn::model_forward(spec, w, make_batch<T>(ptrs, spec.input_shape), nn::Mode::Train,
                                                derive_seed(epoch_seed, {batch_index}), &ctx);
      const LossResult<T> lr_res = weighted_cross_entropy(probs, labels, class_w);
      const Weights<T> grads = nn::model_backward(spec, w, ctx, lr_res.grad_logits, true);
      adam_step(w, grads, adam, lr, cfg);

      loss_sum += lr_res.loss * static_cast<double>(e - b);
      const std::size_t k = spec.class_count;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const T* row = &probs.data[i * k];
        if (static_cast<std::size_t>(std::max_element(row, row + k) - row) == static_cast<std::size_t>(labels[i]))
          ++correct;
      }
      b = e;
    }

    const Evaluation val = evaluate_probs(predict_proba(spec, w, val_set, cfg.batch_size), val_labels, spec.class_count);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n),
                    val.loss, val.accuracy, lr};
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const std::size_t best_i = best_index(result.history.epochs, cfg.monitor);
    if (best_i + 1 == result.history.epochs.size()) best = w;
    result.history.best_epoch = static_cast<int>(best_i);
    if (early_stop(result.history.epochs, cfg.patience, cfg.monitor)) break;
  }
  result.weights = cfg.restore_best ? best : w;
  return result;
}

// ---------------------------------------------------------------------------
// progressive resizing

template <typename T>
struct Model {
  ModelSpec spec;
  Weights<T> weights;
};

/// The next rung's input: the following standard P-level when `small` is one,
/// otherwise every spatial axis doubled.
inline nn::Shape4 next_input_shape(const nn::Shape4& small) {
  for (int level = 1; level < 6; ++level)
    if (input_shape_of(patch::PatchSpec::standard(level).shape) == small && small[0] == 1)
      return input_shape_of(patch::PatchSpec::standard(level + 1).shape);
  return {small[0], small[1] * 2, small[2] * 2, small[3] * 2};
}

/// Prepends a stem [conv3d k3 same, maxpool, batchnorm] whose pool window maps
/// `large_input` down towards the small model's input; the small model's layers
/// and parameters are carried over unchanged.
template <typename T>
Model<T> build_progressive(const ModelSpec& small, const Weights<T>& small_weights,
                           std::optional<nn::Shape4> large_input = std::nullopt, std::uint64_t seed = 0) {
  try {
    small.validate();
  } catch (const Error& e) {
    fail(ErrorCode::IncompatibleSpec, std::string("small model: ") + e.what());
  }
  nn::check_weights(small, small_weights, ErrorCode::IncompatibleSpec);
  const nn::Shape4 in = large_input.value_or(next_input_shape(small.input_shape));
  if (in[0] != small.input_shape[0]) fail(ErrorCode::IncompatibleSpec, "channel count differs between rungs");
  nn::Dims3 window{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (in[a + 1] < small.input_shape[a + 1]) fail(ErrorCode::IncompatibleSpec, "large input smaller than small input");
    window[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(in[a + 1]) /
                                                                              static_cast<double>(small.input_shape[a + 1]))));
  }
  Model<T> out;
  out.spec.input_shape = in;
  out.spec.class_count = small.class_count;
  out.spec.layers = {nn::LayerSpec::conv3d(in[0]), nn::LayerSpec::maxpool3d(window), nn::LayerSpec::batchnorm3d()};
  const std::size_t stem = out.spec.layers.size();
  out.spec.layers.insert(out.spec.layers.end(), small.layers.begin(), small.layers.end());
  try {
    out.spec.validate();
  } catch (const Error& e) {
    fail(ErrorCode::IncompatibleSpec, std::string("enlarged model: ") + e.what());
  }
  const Weights<T> fresh = nn::init_weights<T>(out.spec, seed);
  out.weights.layers.assign(fresh.layers.begin(), fresh.layers.begin() + static_cast<std::ptrdiff_t>(stem));
  out.weights.layers.insert(out.weights.layers.end(), small_weights.layers.begin(), small_weights.layers.end());
  nn::check_weights(out.spec, out.weights, ErrorCode::IncompatibleSpec);
  return out;
}

struct LevelData {
  patch::PatchSpec spec;
  std::vector<patch::Sample> train;
  std::vector<patch::Sample> val;
};

template <typename T>
struct ProgressiveResult {
  std::vector<Model<T>> levels;  // best weights per rung
  std::vector<TrainHistory> histories;
  const Model<T>& final_model() const { return levels.back(); }
};

using LevelCallback = std::function<void(std::size_t level, const EpochRecord&)>;

/// Fits the first rung from `base` (already sized for it), then enlarges and
/// refits for every following rung.
template <typename T>
ProgressiveResult<T> progressive_fit(const ModelSpec& base, const std::vector<LevelData>& levels,
                                     const TrainConfig& cfg, const augment::AugmentPolicy* policy = nullptr,
                                     const LevelCallback& on_epoch = {}) {
  require(!levels.empty(), ErrorCode::InvalidArgument, "no levels given");
  ProgressiveResult<T> out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const nn::Shape4 in = input_shape_of(levels[i].spec.shape);
    Model<T> m;
    if (i == 0) {
      if (base.input_shape != in) fail(ErrorCode::IncompatibleSpec, "base model input does not match first level");
      m.spec = base;
      m.weights = nn::init_weights<T>(base, derive_seed(cfg.seed, {0x696e6974ULL}));
    } else {
      const Model<T>& prev = out.levels.back();
      m = build_progressive(prev.spec, prev.weights, in, derive_seed(cfg.seed, {0x7374656dULL, i}));
    }
    TrainConfig level_cfg = cfg;
    level_cfg.seed = derive_seed(cfg.seed, {i});
    EpochCallback cb;
    if (on_epoch) cb = [&on_epoch, i](const EpochRecord& r) { on_epoch(i, r); };
    FitResult<T> r = fit(m.spec, m.weights, levels[i].train, levels[i].val, level_cfg, policy, cb);
    m.weights = std::move(r.weights);
    out.levels.push_back(std::move(m));
    out.histories.push_back(std::move(r.history));
  }
  return out;
}

}  // namespace ctscreen::train
