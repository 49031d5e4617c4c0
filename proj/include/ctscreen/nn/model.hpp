#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/nn/layers.hpp"
#include "ctscreen/nn/tensor.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::nn {

enum class LayerKind { Conv3d, Relu, MaxPool3d, BatchNorm3d, Gap, Dense, Dropout, Softmax };

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool3d: return "maxpool3d";
    case LayerKind::BatchNorm3d: return "batchnorm3d";
    case LayerKind::Gap: return "gap";
    case LayerKind::Dense: return "dense";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out_channels = 0;  // conv3d
  Dims3 kernel{3, 3, 3};         // conv3d kernel or pooling window
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};
  std::size_t units = 0;  // dense
  double rate = 0.0;      // dropout
  double momentum = 0.9;  // batchnorm running-stat momentum
  double eps = 1e-5;

  static LayerSpec conv3d(std::size_t out, Dims3 kernel = {3, 3, 3}, Dims3 stride = {1, 1, 1},
                          Dims3 padding = {1, 1, 1}) {
    LayerSpec s;
    s.kind = LayerKind::Conv3d;
    s.out_channels = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec maxpool3d(Dims3 window = {2, 2, 2}) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool3d;
    s.kernel = window;
    s.stride = window;
    return s;
  }
  static LayerSpec maxpool3d(Dims3 window, Dims3 stride) {
    LayerSpec s = maxpool3d(window);
    s.stride = stride;
    return s;
  }
  static LayerSpec batchnorm3d(double momentum = 0.9, double eps = 1e-5) {
    LayerSpec s;
    s.kind = LayerKind::BatchNorm3d;
    s.momentum = momentum;
    s.eps = eps;
    return s;
  }
  static LayerSpec dense(std::size_t units) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.units = units;
    return s;
  }
  static LayerSpec dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
  }
  static LayerSpec simple(LayerKind k) {
    LayerSpec s;
    s.kind = k;
    return s;
  }

  void validate() const {
    auto positive = [](const Dims3& d) { return d[0] > 0 && d[1] > 0 && d[2] > 0; };
    switch (kind) {
      case LayerKind::Conv3d:
        require(out_channels > 0 && positive(kernel) && positive(stride), ErrorCode::InvalidArgument,
                "conv3d needs positive channels, kernel and stride");
        break;
      case LayerKind::MaxPool3d:
        require(positive(kernel) && positive(stride), ErrorCode::InvalidArgument,
                "maxpool3d needs positive window and stride");
        break;
      case LayerKind::BatchNorm3d:
        require(momentum >= 0.0 && momentum < 1.0 && eps > 0.0, ErrorCode::InvalidArgument,
                "batchnorm3d needs momentum in [0,1) and eps > 0");
        break;
      case LayerKind::Dense: require(units > 0, ErrorCode::InvalidArgument, "dense needs units > 0"); break;
      case LayerKind::Dropout:
        require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidArgument, "dropout rate must be in [0,1)");
        break;
      default: break;
    }
  }
};

/// Per-sample shape (channels, depth, height, width).
using Shape4 = std::array<std::size_t, 4>;

inline Shape5 batch_shape(std::size_t n, const Shape4& s) { return {n, s[0], s[1], s[2], s[3]}; }

inline Shape4 layer_output_shape(const LayerSpec& l, const Shape4& in) {
  switch (l.kind) {
    case LayerKind::Conv3d:
      return {l.out_channels, conv_out_dim(in[1], l.kernel[0], l.stride[0], l.padding[0]),
              conv_out_dim(in[2], l.kernel[1], l.stride[1], l.padding[1]),
              conv_out_dim(in[3], l.kernel[2], l.stride[2], l.padding[2])};
    case LayerKind::MaxPool3d:
      return {in[0], pool_out_dim(in[1], l.kernel[0], l.stride[0]), pool_out_dim(in[2], l.kernel[1], l.stride[1]),
              pool_out_dim(in[3], l.kernel[2], l.stride[2])};
    case LayerKind::Gap: return {in[0], 1, 1, 1};
    case LayerKind::Dense: return {l.units, 1, 1, 1};
    default: return in;
  }
}

struct ModelSpec {
  Shape4 input_shape{1, 1, 1, 1};
  std::vector<LayerSpec> layers;
  std::size_t class_count = 2;

  /// Output shape after each layer.
  std::vector<Shape4> shapes() const {
    std::vector<Shape4> out;
    Shape4 s = input_shape;
    for (const auto& l : layers) {
      s = layer_output_shape(l, s);
      out.push_back(s);
    }
    return out;
  }

  void validate() const {
    for (auto v : input_shape) require(v > 0, ErrorCode::InvalidArgument, "input shape components must be >= 1");
    require(class_count >= 2, ErrorCode::InvalidArgument, "class_count must be >= 2");
    require(!layers.empty() && layers.back().kind == LayerKind::Softmax, ErrorCode::InvalidArgument,
            "final layer must be softmax");
    bool bridge = false;
    for (const auto& l : layers) {
      l.validate();
      if (l.kind == LayerKind::Gap) bridge = true;
      if (!bridge && (l.kind == LayerKind::Dense || l.kind == LayerKind::Dropout))
        fail(ErrorCode::InvalidArgument, "classifier layers must follow a gap bridge");
      if (bridge && (l.kind == LayerKind::Conv3d || l.kind == LayerKind::MaxPool3d))
        fail(ErrorCode::InvalidArgument, "extractor layers after the gap bridge");
    }
    require(bridge, ErrorCode::InvalidArgument, "model has no gap bridge");
    const auto s = shapes();
    require(s.back() == Shape4{class_count, 1, 1, 1}, ErrorCode::InvalidArgument,
            "softmax width does not match class_count");
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "input " << input_shape[0] << ' ' << input_shape[1] << ' ' << input_shape[2] << ' ' << input_shape[3]
       << "\nclasses " << class_count << '\n';
    auto dims = [](const Dims3& d) {
      return std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]);
    };
    for (const auto& l : layers) {
      os << kind_name(l.kind);
      switch (l.kind) {
        case LayerKind::Conv3d:
          os << " out=" << l.out_channels << " kernel=" << dims(l.kernel) << " stride=" << dims(l.stride)
             << " pad=" << dims(l.padding);
          break;
        case LayerKind::MaxPool3d: os << " window=" << dims(l.kernel) << " stride=" << dims(l.stride); break;
        case LayerKind::BatchNorm3d: os << " momentum=" << l.momentum << " eps=" << l.eps; break;
        case LayerKind::Dense: os << " units=" << l.units; break;
        case LayerKind::Dropout: os << " rate=" << l.rate; break;
        default: break;
      }
      os << '\n';
    }
    return os.str();
  }

  static ModelSpec from_text(const std::string& text) {
    ModelSpec spec;
    spec.layers.clear();
    std::istringstream is(text);
    std::string line;
    bool have_input = false, have_classes = false;
    auto bad = [](const std::string& why) { fail(ErrorCode::BadCheckpoint, "model spec: " + why); };
    auto parse_dims = [&](const std::string& v) {
      Dims3 d{};
      char c1 = 0, c2 = 0;
      std::istringstream ds(v);
      if (!(ds >> d[0] >> c1 >> d[1] >> c2 >> d[2]) || c1 != ',' || c2 != ',') bad("bad triple '" + v + "'");
      return d;
    };
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string head;
      ls >> head;
      if (head == "input") {
        if (!(ls >> spec.input_shape[0] >> spec.input_shape[1] >> spec.input_shape[2] >> spec.input_shape[3]))
          bad("bad input line");
        have_input = true;
        continue;
      }
      if (head == "classes") {
        if (!(ls >> spec.class_count)) bad("bad classes line");
        have_classes = true;
        continue;
      }
      LayerSpec l;
      bool known = false;
      for (int k = 0; k <= static_cast<int>(LayerKind::Softmax); ++k)
        if (head == kind_name(static_cast<LayerKind>(k))) {
          l.kind = static_cast<LayerKind>(k);
          known = true;
        }
      if (!known) bad("unknown layer '" + head + "'");
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) bad("bad attribute '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
          if (key == "out") l.out_channels = std::stoul(val);
          else if (key == "kernel" || key == "window") l.kernel = parse_dims(val);
          else if (key == "stride") l.stride = parse_dims(val);
          else if (key == "pad") l.padding = parse_dims(val);
          else if (key == "units") l.units = std::stoul(val);
          else if (key == "rate") l.rate = std::stod(val);
          else if (key == "momentum") l.momentum = std::stod(val);
          else if (key == "eps") l.eps = std::stod(val);
          else bad("unknown attribute '" + key + "'");
        } catch (const std::logic_error&) {
          bad("bad value in '" + kv + "'");
        }
      }
      spec.layers.push_back(l);
    }
    if (!have_input || !have_classes) bad("missing input or classes line");
    return spec;
  }

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) { return a.to_text() == b.to_text(); }
};

/// Reference architecture: `blocks` x [conv3d k3 same, relu, maxpool 2, batchnorm]
/// then gap, dense, relu, dropout, dense(class_count), softmax. Pool windows
/// shrink to 1 on axes that are already 1 voxel thick.
inline ModelSpec reference_spec(Shape4 input, std::size_t class_count, std::size_t blocks = 4,
                                std::size_t base_channels = 16, std::size_t dense_units = 64, double dropout = 0.5) {
  ModelSpec spec;
  spec.input_shape = input;
  spec.class_count = class_count;
  Shape4 s = input;
  for (std::size_t b = 0; b < blocks; ++b) {
    spec.layers.push_back(LayerSpec::conv3d(base_channels << b));
    spec.layers.push_back(LayerSpec::simple(LayerKind::Relu));
    s = layer_output_shape(spec.layers[spec.layers.size() - 2], s);
    const Dims3 win{std::min<std::size_t>(2, s[1]), std::min<std::size_t>(2, s[2]), std::min<std::size_t>(2, s[3])};
    spec.layers.push_back(LayerSpec::maxpool3d(win));
    s = layer_output_shape(spec.layers.back(), s);
    spec.layers.push_back(LayerSpec::batchnorm3d());
  }
  spec.layers.push_back(LayerSpec::simple(LayerKind::Gap));
  spec.layers.push_back(LayerSpec::dense(dense_units));
  spec.layers.push_back(LayerSpec::simple(LayerKind::Relu));
  if (dropout > 0.0) spec.layers.push_back(LayerSpec::dropout(dropout));
  spec.layers.push_back(LayerSpec::dense(class_count));
  spec.layers.push_back(LayerSpec::simple(LayerKind::Softmax));
  spec.validate();
  return spec;
}

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

/// Parameters grouped per layer (empty for parameter-free layers).
template <typename T>
struct Weights {
  std::vector<std::vector<Param<T>>> layers;

  Tensor<T>& get(std::size_t layer, const std::string& name) {
    for (auto& p : layers.at(layer))
      if (p.name == name) return p.value;
    fail(ErrorCode::InvalidArgument, "no parameter '" + name + "' in layer " + std::to_string(layer));
  }
  const Tensor<T>& get(std::size_t layer, const std::string& name) const {
    return const_cast<Weights*>(this)->get(layer, name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      for (const auto& p : l) n += p.value.size();
    return n;
  }

  template <typename U>
  Weights<U> cast() const {
    Weights<U> out;
    for (const auto& l : layers) {
      out.layers.emplace_back();
      for (const auto& p : l) out.layers.back().push_back({p.name, p.value.template cast<U>(), p.trainable});
    }
    return out;
  }

  friend bool operator==(const Weights& a, const Weights& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (a.layers[i].size() != b.layers[i].size()) return false;
      for (std::size_t j = 0; j < a.layers[i].size(); ++j)
        if (a.layers[i][j].name != b.layers[i][j].name || !(a.layers[i][j].value == b.layers[i][j].value))
          return false;
    }
    return true;
  }
};

/// Xavier-normal kernels (std = sqrt(2 / (fan_in + fan_out))), zero biases,
/// batchnorm gamma 1 / beta 0 / running mean 0 / running variance 1.
template <typename T>
Weights<T> init_weights(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Weights<T> w;
  Shape4 s = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    std::vector<Param<T>> ps;
    Rng rng(derive_seed(seed, {i}));
    auto xavier = [&](Shape5 shape, double fan_in, double fan_out) {
      Tensor<T> t(shape);
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (fan_in + fan_out)));
      for (T& v : t.data) v = static_cast<T>(nd(rng));
      return t;
    };
    switch (l.kind) {
      case LayerKind::Conv3d: {
        const double rf = static_cast<double>(l.kernel[0] * l.kernel[1] * l.kernel[2]);
        ps.push_back({"kernel",
                      xavier({l.out_channels, s[0], l.kernel[0], l.kernel[1], l.kernel[2]},
                             rf * static_cast<double>(s[0]), rf * static_cast<double>(l.out_channels)),
                      true});
        ps.push_back({"bias", Tensor<T>({l.out_channels, 1, 1, 1, 1}), true});
        break;
      }
      case LayerKind::BatchNorm3d:
        ps.push_back({"gamma", Tensor<T>({s[0], 1, 1, 1, 1}, T(1)), true});
        ps.push_back({"beta", Tensor<T>({s[0], 1, 1, 1, 1}), true});
        ps.push_back({"running_mean", Tensor<T>({s[0], 1, 1, 1, 1}), false});
        ps.push_back({"running_var", Tensor<T>({s[0], 1, 1, 1, 1}, T(1)), false});
        break;
      case LayerKind::Dense: {
        const std::size_t f = s[0] * s[1] * s[2] * s[3];
        ps.push_back({"weight", xavier({l.units, f, 1, 1, 1}, static_cast<double>(f), static_cast<double>(l.units)),
                      true});
        ps.push_back({"bias", Tensor<T>({l.units, 1, 1, 1, 1}), true});
        break;
      }
      default: break;
    }
    w.layers.push_back(std::move(ps));
    s = layer_output_shape(l, s);
  }
  return w;
}

/// Throws IncompatibleSpec unless every tensor matches a fresh initialization's shape.
template <typename T>
void check_weights(const ModelSpec& spec, const Weights<T>& w, ErrorCode code = ErrorCode::IncompatibleSpec) {
  const Weights<T> ref = init_weights<T>(spec, 0);
  if (ref.layers.size() != w.layers.size()) fail(code, "weights have wrong layer count");
  for (std::size_t i = 0; i < ref.layers.size(); ++i) {
    if (ref.layers[i].size() != w.layers[i].size()) fail(code, "layer " + std::to_string(i) + " parameter count");
    for (std::size_t j = 0; j < ref.layers[i].size(); ++j)
      if (ref.layers[i][j].name != w.layers[i][j].name || ref.layers[i][j].value.shape != w.layers[i][j].value.shape)
        fail(code, "layer " + std::to_string(i) + " parameter '" + ref.layers[i][j].name + "' mismatch");
  }
}

enum class Mode { Train, Infer };

template <typename T>
struct LayerContext {
  Tensor<T> input;
  Tensor<T> output;  // kept for softmax
  std::vector<std::size_t> argmax;
  BatchNormCache<T> bn;
  std::vector<T> dropout_mask;
};

template <typename T>
struct ForwardContext {
  std::vector<LayerContext<T>> layers;
};

/// Class probabilities (N, class_count, 1, 1, 1). Train mode updates batchnorm
/// running statistics in `w`; dropout masks derive from (seed, layer index).
template <typename T>
Tensor<T> model_forward(const ModelSpec& spec, Weights<T>& w, const Tensor<T>& batch, Mode mode, std::uint64_t seed,
                        ForwardContext<T>* ctx = nullptr) {
  const Shape5 expected = batch_shape(batch.n(), spec.input_shape);
  if (batch.n() == 0 || batch.shape != expected)
    fail(ErrorCode::ShapeMismatch, "batch shape " + shape_str(batch.shape) + " != model input " + shape_str(expected));
  if (ctx) ctx->layers.assign(spec.layers.size(), {});
  Tensor<T> x = batch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    LayerContext<T>* lc = ctx ? &ctx->layers[i] : nullptr;
    if (lc) lc->input = x;
    switch (l.kind) {
      case LayerKind::Conv3d: x = conv3d_forward(x, w.get(i, "kernel"), w.get(i, "bias"), l.stride, l.padding); break;
      case LayerKind::Relu: x = relu_forward(x); break;
      case LayerKind::MaxPool3d: {
        auto r = maxpool3d_forward(x, l.kernel, l.stride);
        if (lc) lc->argmax = std::move(r.argmax);
        x = std::move(r.y);
        break;
      }
      case LayerKind::BatchNorm3d:
        if (mode == Mode::Train)
          x = batchnorm3d_train(x, w.get(i, "gamma"), w.get(i, "beta"), w.get(i, "running_mean"),
                                w.get(i, "running_var"), static_cast<T>(l.momentum), static_cast<T>(l.eps),
                                lc ? &lc->bn : nullptr);
        else
          x = batchnorm3d_infer(x, w.get(i, "gamma"), w.get(i, "beta"), w.get(i, "running_mean"),
                                w.get(i, "running_var"), static_cast<T>(l.eps));
        break;
      case LayerKind::Gap: x = gap_forward(x); break;
      case LayerKind::Dense: x = dense_forward(x, w.get(i, "weight"), w.get(i, "bias")); break;
      case LayerKind::Dropout:
        if (mode == Mode::Train) x = dropout_forward(x, l.rate, derive_seed(seed, {i}), lc ? &lc->dropout_mask : nullptr);
        else if (lc) lc->dropout_mask.assign(x.size(), T(1));
        break;
      case LayerKind::Softmax: x = softmax_forward(x); break;
    }
    if (lc && l.kind == LayerKind::Softmax) lc->output = x;
  }
  return x;
}

/// Gradients for every parameter (zero for non-trainable ones), in the layout of
/// the weights. `grad_out` is the gradient w.r.t. the model output; when
/// `from_logits` is set it is taken as the gradient w.r.t. the softmax input.
template <typename T>
Weights<T> model_backward(const ModelSpec& spec, const Weights<T>& w, const ForwardContext<T>& ctx,
                          const Tensor<T>& grad_out, bool from_logits = false, Tensor<T>* grad_input = nullptr) {
  if (ctx.layers.size() != spec.layers.size()) fail(ErrorCode::ShapeMismatch, "forward context does not match model");
  Weights<T> g;
  for (const auto& l : w.layers) {
    g.layers.emplace_back();
    for (const auto& p : l) g.layers.back().push_back({p.name, Tensor<T>(p.value.shape), p.trainable});
  }
  Tensor<T> gy = grad_out;
  for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
    const LayerSpec& l = spec.layers[ii];
    const LayerContext<T>& lc = ctx.layers[ii];
    switch (l.kind) {
      case LayerKind::Conv3d: {
        auto r = conv3d_backward(lc.input, w.get(ii, "kernel"), gy, l.stride, l.padding);
        g.get(ii, "kernel") = std::move(r.kernel);
        g.get(ii, "bias") = std::move(r.bias);
        gy = std::move(r.x);
        break;
      }
      case LayerKind::Relu: gy = relu_backward(lc.input, gy); break;
      case LayerKind::MaxPool3d: gy = maxpool3d_backward(lc.input.shape, lc.argmax, gy); break;
      case LayerKind::BatchNorm3d: {
        if (lc.bn.xhat.shape != lc.input.shape)
          fail(ErrorCode::InvalidArgument, "batchnorm backward needs a train-mode forward context");
        auto r = batchnorm3d_backward(lc.bn, w.get(ii, "gamma"), gy);
        g.get(ii, "gamma") = std::move(r.gamma);
        g.get(ii, "beta") = std::move(r.beta);
        gy = std::move(r.x);
        break;
      }
      case LayerKind::Gap: gy = gap_backward(lc.input.shape, gy); break;
      case LayerKind::Dense: {
        auto r = dense_backward(lc.input, w.get(ii, "weight"), gy);
        g.get(ii, "weight") = std::move(r.weight);
        g.get(ii, "bias") = std::move(r.bias);
        r.x.shape = lc.input.shape;
        gy = std::move(r.x);
        break;
      }
      case LayerKind::Dropout: gy = dropout_backward(lc.dropout_mask, gy); break;
      case LayerKind::Softmax:
        if (!(from_logits && ii + 1 == spec.layers.size())) gy = softmax_backward(lc.output, gy);
        break;
    }
  }
  if (grad_input) *grad_input = std::move(gy);
  return g;
}

}  // namespace ctscreen::nn
