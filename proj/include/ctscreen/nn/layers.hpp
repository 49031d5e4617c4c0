#pragma once

// Layer kernels with analytic backward passes. Convolution is cross-correlation
// with zero padding; pooling is "valid".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "ctscreen/error.hpp"
#include "ctscreen/nn/tensor.hpp"
#include "ctscreen/rng.hpp"

namespace ctscreen::nn {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (k == 0 || stride == 0) fail(ErrorCode::ShapeMismatch, "kernel and stride must be positive");
  if (in + 2 * pad < k) fail(ErrorCode::ShapeMismatch, "kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

inline std::size_t pool_out_dim(std::size_t in, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) fail(ErrorCode::ShapeMismatch, "pool window and stride must be positive");
  if (window > in) fail(ErrorCode::ShapeMismatch, "pool window exceeds spatial extent");
  return (in - window) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv3d

namespace detail {

/// Output positions o in [0, out) for which o*stride - pad + k lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                       std::size_t pad, std::size_t k) {
  // o*stride + k >= pad  and  o*stride + k - pad < in
  std::size_t lo = 0;
  if (k < pad) lo = (pad - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in + pad > k) hi = std::min(out, (in + pad - k - 1) / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace detail

/// x: (N, Cin, D, H, W); kernel: (Cout, Cin, kd, kh, kw); bias: (Cout, 1, 1, 1, 1).
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, const Dims3& stride,
                         const Dims3& pad) {
  const std::size_t cout = kernel.shape[0], cin = kernel.shape[1];
  if (x.c() != cin) fail(ErrorCode::ShapeMismatch, "conv3d input channels " + std::to_string(x.c()) + " != kernel " +
                                                       std::to_string(cin));
  expect_shape(bias, {cout, 1, 1, 1, 1}, "conv3d bias");
  const Dims3 k{kernel.shape[2], kernel.shape[3], kernel.shape[4]};
  const Dims3 o{conv_out_dim(x.d(), k[0], stride[0], pad[0]), conv_out_dim(x.h(), k[1], stride[1], pad[1]),
                conv_out_dim(x.w(), k[2], stride[2], pad[2])};
  Tensor<T> y({x.n(), cout, o[0], o[1], o[2]});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      T* yc = &y(n, oc, 0, 0, 0);
      std::fill(yc, yc + y.spatial(), bias[oc]);
      for (std::size_t ic = 0; ic < cin; ++ic) {
        for (std::size_t kd = 0; kd < k[0]; ++kd) {
          const auto [d0, d1] = detail::valid_range(o[0], x.d(), stride[0], pad[0], kd);
          for (std::size_t kh = 0; kh < k[1]; ++kh) {
            const auto [h0, h1] = detail::valid_range(o[1], x.h(), stride[1], pad[1], kh);
            for (std::size_t kw = 0; kw < k[2]; ++kw) {
              const auto [w0, w1] = detail::valid_range(o[2], x.w(), stride[2], pad[2], kw);
              const T wt = kernel(oc, ic, kd, kh, kw);
              for (std::size_t od = d0; od < d1; ++od) {
                const std::size_t id = od * stride[0] + kd - pad[0];
                for (std::size_t oh = h0; oh < h1; ++oh) {
                  const std::size_t ih = oh * stride[1] + kh - pad[1];
                  const T* xr = &x(n, ic, id, ih, 0);
                  T* yr = &y(n, oc, od, oh, 0);
                  if (stride[2] == 1) {
                    const T* xs = xr + kw - pad[2];
                    for (std::size_t ow = w0; ow < w1; ++ow) yr[ow] += wt * xs[ow];
                  } else {
                    for (std::size_t ow = w0; ow < w1; ++ow) yr[ow] += wt * xr[ow * stride[2] + kw - pad[2]];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> x;
  Tensor<T> kernel;
  Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& grad_out,
                             const Dims3& stride, const Dims3& pad) {
  const std::size_t cout = kernel.shape[0], cin = kernel.shape[1];
  if (x.c() != cin) fail(ErrorCode::ShapeMismatch, "conv3d backward: input channels mismatch");
  const Dims3 k{kernel.shape[2], kernel.shape[3], kernel.shape[4]};
  const Dims3 o{conv_out_dim(x.d(), k[0], stride[0], pad[0]), conv_out_dim(x.h(), k[1], stride[1], pad[1]),
                conv_out_dim(x.w(), k[2], stride[2], pad[2])};
  expect_shape(grad_out, {x.n(), cout, o[0], o[1], o[2]}, "conv3d grad_out");

  ConvGrads<T> g{Tensor<T>(x.shape), Tensor<T>(kernel.shape), Tensor<T>({cout, 1, 1, 1, 1})};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      const T* gy = &grad_out(n, oc, 0, 0, 0);
      T bsum = 0;
      for (std::size_t i = 0; i < grad_out.spatial(); ++i) bsum += gy[i];
      g.bias[oc] += bsum;
      for (std::size_t ic = 0; ic < cin; ++ic) {
        for (std::size_t kd = 0; kd < k[0]; ++kd) {
          const auto [d0, d1] = detail::valid_range(o[0], x.d(), stride[0], pad[0], kd);
          for (std::size_t kh = 0; kh < k[1]; ++kh) {
            const auto [h0, h1] = detail::valid_range(o[1], x.h(), stride[1], pad[1], kh);
            for (std::size_t kw = 0; kw < k[2]; ++kw) {
              const auto [w0, w1] = detail::valid_range(o[2], x.w(), stride[2], pad[2], kw);
              const T wt = kernel(oc, ic, kd, kh, kw);
              T wsum = 0;
              for (std::size_t od = d0; od < d1; ++od) {
                const std::size_t id = od * stride[0] + kd - pad[0];
                for (std::size_t oh = h0; oh < h1; ++oh) {
                  const std::size_t ih = oh * stride[1] + kh - pad[1];
                  const T* xr = &x(n, ic, id, ih, 0);
                  T* gxr = &g.x(n, ic, id, ih, 0);
                  const T* gyr = &grad_out(n, oc, od, oh, 0);
                  for (std::size_t ow = w0; ow < w1; ++ow) {
                    const std::size_t iw = ow * stride[2] + kw - pad[2];
                    wsum += gyr[ow] * xr[iw];
                    gxr[iw] += wt * gyr[ow];
                  }
                }
              }
              g.kernel(oc, ic, kd, kh, kw) += wsum;
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// maxpool3d

template <typename T>
struct PoolResult {
  Tensor<T> y;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Ties resolve to the lowest linear input index inside the window.
template <typename T>
PoolResult<T> maxpool3d_forward(const Tensor<T>& x, const Dims3& window, const Dims3& stride) {
  const Dims3 o{pool_out_dim(x.d(), window[0], stride[0]), pool_out_dim(x.h(), window[1], stride[1]),
                pool_out_dim(x.w(), window[2], stride[2])};
  PoolResult<T> r{Tensor<T>({x.n(), x.c(), o[0], o[1], o[2]}), {}};
  r.argmax.resize(r.y.size());
  std::size_t out_i = 0;
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t od = 0; od < o[0]; ++od)
        for (std::size_t oh = 0; oh < o[1]; ++oh)
          for (std::size_t ow = 0; ow < o[2]; ++ow, ++out_i) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_i = x.index(n, c, od * stride[0], oh * stride[1], ow * stride[2]);
            for (std::size_t a = 0; a < window[0]; ++a)
              for (std::size_t b = 0; b < window[1]; ++b) {
                const std::size_t row = x.index(n, c, od * stride[0] + a, oh * stride[1] + b, ow * stride[2]);
                for (std::size_t e = 0; e < window[2]; ++e)
                  if (x[row + e] > best) {
                    best = x[row + e];
                    best_i = row + e;
                  }
              }
            r.y[out_i] = best;
            r.argmax[out_i] = best_i;
          }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Shape5& x_shape, const std::vector<std::size_t>& argmax, const Tensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) fail(ErrorCode::ShapeMismatch, "maxpool backward: context mismatch");
  Tensor<T> gx(x_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  expect_shape(grad_out, x.shape, "relu grad_out");
  Tensor<T> gx(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return gx;
}

// ---------------------------------------------------------------------------
// batchnorm3d (per-channel statistics over batch and space)

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

/// Train mode: normalizes by batch statistics and folds them into the running
/// estimates with `running = momentum * running + (1 - momentum) * batch`
/// (running variance uses the unbiased batch variance).
template <typename T>
Tensor<T> batchnorm3d_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, T momentum, T eps, BatchNormCache<T>* cache) {
  const std::size_t C = x.c(), S = x.spatial(), m = x.n() * S;
  if (m < 2) fail(ErrorCode::DegenerateBatch, "batchnorm needs at least two values per channel in train mode");
  expect_shape(gamma, {C, 1, 1, 1, 1}, "batchnorm gamma");
  Tensor<T> y(x.shape);
  BatchNormCache<T> local;
  BatchNormCache<T>& bc = cache ? *cache : local;
  bc.xhat = Tensor<T>(x.shape);
  bc.inv_std.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = &x(n, c, 0, 0, 0);
      for (std::size_t i = 0; i < S; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(m);
    double ss = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = &x(n, c, 0, 0, 0);
      for (std::size_t i = 0; i < S; ++i) ss += (p[i] - mean) * (p[i] - mean);
    }
    const double var = ss / static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    bc.inv_std[c] = static_cast<T>(inv);
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = &x(n, c, 0, 0, 0);
      T* xh = &bc.xhat(n, c, 0, 0, 0);
      T* out = &y(n, c, 0, 0, 0);
      for (std::size_t i = 0; i < S; ++i) {
        xh[i] = static_cast<T>((p[i] - mean) * inv);
        out[i] = gamma[c] * xh[i] + beta[c];
      }
    }
    const double unbiased = ss / static_cast<double>(m - 1);
    running_mean[c] = static_cast<T>(momentum * running_mean[c] + (1 - momentum) * mean);
    running_var[c] = static_cast<T>(momentum * running_var[c] + (1 - momentum) * unbiased);
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm3d_infer(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
  const std::size_t C = x.c(), S = x.spatial();
  expect_shape(gamma, {C, 1, 1, 1, 1}, "batchnorm gamma");
  Tensor<T> y(x.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const T inv = T(1) / std::sqrt(running_var[c] + eps);
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = &x(n, c, 0, 0, 0);
      T* out = &y(n, c, 0, 0, 0);
      for (std::size_t i = 0; i < S; ++i) out[i] = gamma[c] * (p[i] - running_mean[c]) * inv + beta[c];
    }
  }
  return y;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> x;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm3d_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                       const Tensor<T>& grad_out) {
  expect_shape(grad_out, cache.xhat.shape, "batchnorm grad_out");
  const std::size_t C = grad_out.c(), S = grad_out.spatial(), m = grad_out.n() * S;
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape), Tensor<T>({C, 1, 1, 1, 1}), Tensor<T>({C, 1, 1, 1, 1})};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (std::size_t n = 0; n < grad_out.n(); ++n) {
      const T* gy = &grad_out(n, c, 0, 0, 0);
      const T* xh = &cache.xhat(n, c, 0, 0, 0);
      for (std::size_t i = 0; i < S; ++i) {
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * xh[i];
      }
    }
    g.beta[c] = static_cast<T>(sum_gy);
    g.gamma[c] = static_cast<T>(sum_gy_xhat);
    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c] / static_cast<double>(m);
    for (std::size_t n = 0; n < grad_out.n(); ++n) {
      const T* gy = &grad_out(n, c, 0, 0, 0);
      const T* xh = &cache.xhat(n, c, 0, 0, 0);
      T* gx = &g.x(n, c, 0, 0, 0);
      for (std::size_t i = 0; i < S; ++i)
        gx[i] = static_cast<T>(scale * (static_cast<double>(m) * gy[i] - sum_gy - xh[i] * sum_gy_xhat));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// global average pooling

template <typename T>
Tensor<T> gap_forward(const Tensor<T>& x) {
  Tensor<T> y({x.n(), x.c(), 1, 1, 1});
  const std::size_t S = x.spatial();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* p = &x(n, c, 0, 0, 0);
      double sum = 0.0;
      for (std::size_t i = 0; i < S; ++i) sum += p[i];
      y(n, c, 0, 0, 0) = static_cast<T>(sum / static_cast<double>(S));
    }
  return y;
}

template <typename T>
Tensor<T> gap_backward(const Shape5& x_shape, const Tensor<T>& grad_out) {
  expect_shape(grad_out, {x_shape[0], x_shape[1], 1, 1, 1}, "gap grad_out");
  Tensor<T> gx(x_shape);
  const std::size_t S = gx.spatial();
  const T inv = T(1) / static_cast<T>(S);
  for (std::size_t n = 0; n < x_shape[0]; ++n)
    for (std::size_t c = 0; c < x_shape[1]; ++c) {
      T* p = &gx(n, c, 0, 0, 0);
      std::fill(p, p + S, grad_out(n, c, 0, 0, 0) * inv);
    }
  return gx;
}

// ---------------------------------------------------------------------------
// dense: weight (units, features, 1, 1, 1); non-batch axes are flattened

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t F = x.item_size(), U = weight.shape[0];
  if (weight.shape[1] != F) fail(ErrorCode::ShapeMismatch, "dense expects " + std::to_string(weight.shape[1]) +
                                                               " features, got " + std::to_string(F));
  Tensor<T> y({x.n(), U, 1, 1, 1});
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* xi = &x.data[n * F];
    for (std::size_t u = 0; u < U; ++u) {
      const T* wr = &weight.data[u * F];
      T acc = bias[u];
      for (std::size_t f = 0; f < F; ++f) acc += wr[f] * xi[f];
      y.data[n * U + u] = acc;
    }
  }
  return y;
}

template <typename T>
struct DenseGrads {
  Tensor<T> x;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out) {
  const std::size_t F = x.item_size(), U = weight.shape[0];
  expect_shape(grad_out, {x.n(), U, 1, 1, 1}, "dense grad_out");
  DenseGrads<T> g{Tensor<T>(x.shape), Tensor<T>(weight.shape), Tensor<T>({U, 1, 1, 1, 1})};
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* xi = &x.data[n * F];
    T* gxi = &g.x.data[n * F];
    for (std::size_t u = 0; u < U; ++u) {
      const T gy = grad_out.data[n * U + u];
      g.bias[u] += gy;
      const T* wr = &weight.data[u * F];
      T* gwr = &g.weight.data[u * F];
      for (std::size_t f = 0; f < F; ++f) {
        gwr[f] += gy * xi[f];
        gxi[f] += gy * wr[f];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// dropout (inverted scaling; active only in train mode)

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, std::uint64_t seed, std::vector<T>* mask_out) {
  if (rate < 0.0 || rate >= 1.0) fail(ErrorCode::InvalidArgument, "dropout rate must be in [0,1)");
  std::vector<T> mask(x.size(), T(1));
  if (rate > 0.0) {
    Rng rng(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (T& m : mask) m = keep(rng) ? scale : T(0);
  }
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const std::vector<T>& mask, const Tensor<T>& grad_out) {
  if (mask.size() != grad_out.size()) fail(ErrorCode::ShapeMismatch, "dropout backward: context mismatch");
  Tensor<T> gx = grad_out;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= mask[i];
  return gx;
}

// ---------------------------------------------------------------------------
// softmax over the flattened non-batch axes

template <typename T>
Tensor<T> softmax_forward(const Tensor<T>& x) {
  const std::size_t K = x.item_size();
  Tensor<T> y(x.shape);
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* xi = &x.data[n * K];
    T* yi = &y.data[n * K];
    const T mx = *std::max_element(xi, xi + K);
    T sum = 0;
    for (std::size_t k = 0; k < K; ++k) {
      yi[k] = std::exp(xi[k] - mx);
      sum += yi[k];
    }
    for (std::size_t k = 0; k < K; ++k) yi[k] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  expect_shape(grad_out, y.shape, "softmax grad_out");
  const std::size_t K = y.item_size();
  Tensor<T> gx(y.shape);
  for (std::size_t n = 0; n < y.n(); ++n) {
    const T* yi = &y.data[n * K];
    const T* gi = &grad_out.data[n * K];
    T dot = 0;
    for (std::size_t k = 0; k < K; ++k) dot += yi[k] * gi[k];
    for (std::size_t k = 0; k < K; ++k) gx.data[n * K + k] = yi[k] * (gi[k] - dot);
  }
  return gx;
}

}  // namespace ctscreen::nn
