#pragma once

// Forward/backward kernels for every layer the classifier uses. Activations
// are NHWC. Batch loops are OpenMP-parallel; cross-sample reductions go
// through per-sample partials and tree_reduce, so outputs are bitwise
// independent of the thread count. Naive serial versions live in
// reference.hpp.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "semg/errors.hpp"
#include "semg/nn/reduce.hpp"
#include "semg/nn/tensor.hpp"

namespace semg::nn {

enum class Mode { Train, Infer };

// ---- conv2d -------------------------------------------------------------------

template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // (kh, kw, c_in, c_out)
  std::vector<T> bias;

  static ConvParams zeros(std::size_t kh, std::size_t kw, std::size_t c_in, std::size_t c_out) {
    return {Tensor<T>({kh, kw, c_in, c_out}), std::vector<T>(c_out, T{0})};
  }
  std::size_t kh() const { return kernel.dim(0); }
  std::size_t kw() const { return kernel.dim(1); }
  std::size_t c_in() const { return kernel.dim(2); }
  std::size_t c_out() const { return kernel.dim(3); }
  std::size_t param_count() const { return kernel.size() + bias.size(); }
  bool operator==(const ConvParams&) const = default;
};

namespace detail {

template <typename T>
void check_conv(const Tensor<T>& x, const ConvParams<T>& p) {
  if (x.rank() != 4) throw InputError("conv2d expects a rank-4 NHWC input, got " + shape_str(x.shape()));
  if (p.kernel.rank() != 4 || p.kh() % 2 == 0 || p.kw() % 2 == 0) {
    throw InputError("conv2d kernel must be (kh, kw, c_in, c_out) with odd kh, kw");
  }
  if (x.dim(3) != p.c_in()) {
    throw InputError("conv2d channel mismatch: input has " + std::to_string(x.dim(3)) + ", kernel expects " +
                     std::to_string(p.c_in()));
  }
  if (p.bias.size() != p.c_out()) throw InputError("conv2d bias length mismatch");
}

// Copy of one sample with a zero border of (ph, pw) so every output pixel
// sees a full receptive field.
template <typename T>
std::vector<T> pad_sample(const T* x, std::size_t H, std::size_t W, std::size_t c, std::size_t ph, std::size_t pw) {
  const std::size_t Wp = W + 2 * pw;
  std::vector<T> out((H + 2 * ph) * Wp * c, T{0});
  for (std::size_t i = 0; i < H; ++i)
    std::copy_n(x + i * W * c, W * c, out.data() + ((i + ph) * Wp + pw) * c);
  return out;
}

// NB adjacent output pixels at once; xp is the padded input at the top-left
// of the first pixel's receptive field.
template <typename T, int CO, int NB>
inline void conv_pixels(const T* xp, std::size_t Wp, std::size_t cin, const T* k, std::size_t kh, std::size_t kw,
                        const T* bias, T* y) {
  T blk[NB][CO];
  for (int b = 0; b < NB; ++b)
    for (int o = 0; o < CO; ++o) blk[b][o] = bias[o];
  for (std::size_t di = 0; di < kh; ++di)
    for (std::size_t dj = 0; dj < kw; ++dj) {
      const T* xr = xp + (di * Wp + dj) * cin;
      const T* kr = k + (di * kw + dj) * cin * CO;
      for (std::size_t c = 0; c < cin; ++c) {
        const T* kc = kr + c * CO;
#pragma GCC unroll 8
        for (int b = 0; b < NB; ++b) {
          const T xv = xr[static_cast<std::size_t>(b) * cin + c];
#pragma omp simd
          for (int o = 0; o < CO; ++o) blk[b][o] += xv * kc[o];
        }
      }
    }
  for (int b = 0; b < NB; ++b)
    for (int o = 0; o < CO; ++o) y[static_cast<std::size_t>(b) * CO + static_cast<std::size_t>(o)] = blk[b][o];
}

// CO > 0 fixes the output-channel count at compile time so accumulators
// stay in registers; CO == 0 is the generic path.
template <typename T, int CO>
void conv_fwd_sample(const T* x, std::size_t H, std::size_t W, std::size_t cin, const T* k, std::size_t kh,
                     std::size_t kw, const T* bias, std::size_t cout_rt, T* y) {
  const std::size_t ph = (kh - 1) / 2, pw = (kw - 1) / 2, Wp = W + 2 * pw;
  const std::vector<T> xpad = pad_sample(x, H, W, cin, ph, pw);
  if constexpr (CO > 0) {
    constexpr int kWant = static_cast<int>(512 / (CO * sizeof(T)));
    constexpr int kBlock = kWant < 1 ? 1 : (kWant > 8 ? 8 : kWant);
    for (std::size_t i = 0; i < H; ++i) {
      std::size_t j = 0;
      for (; j + kBlock <= W; j += kBlock)
        conv_pixels<T, CO, kBlock>(xpad.data() + (i * Wp + j) * cin, Wp, cin, k, kh, kw, bias, y + (i * W + j) * CO);
      for (; j < W; ++j)
        conv_pixels<T, CO, 1>(xpad.data() + (i * Wp + j) * cin, Wp, cin, k, kh, kw, bias, y + (i * W + j) * CO);
    }
  } else {
    const std::size_t cout = cout_rt;
    std::vector<T> acc(cout);
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        std::copy_n(bias, cout, acc.data());
        for (std::size_t di = 0; di < kh; ++di)
          for (std::size_t dj = 0; dj < kw; ++dj) {
            const T* xr = xpad.data() + ((i + di) * Wp + j + dj) * cin;
            const T* kr = k + (di * kw + dj) * cin * cout;
            for (std::size_t c = 0; c < cin; ++c) {
              const T xv = xr[c];
              const T* kc = kr + c * cout;
              for (std::size_t o = 0; o < cout; ++o) acc[o] += xv * kc[o];
            }
          }
        std::copy_n(acc.data(), cout, y + (i * W + j) * cout);
      }
  }
}

template <typename T>
void conv_fwd_dispatch(const T* x, std::size_t H, std::size_t W, std::size_t cin, const T* k, std::size_t kh,
                       std::size_t kw, const T* bias, std::size_t cout, T* y) {
  switch (cout) {
    case 2: conv_fwd_sample<T, 2>(x, H, W, cin, k, kh, kw, bias, cout, y); break;
    case 16: conv_fwd_sample<T, 16>(x, H, W, cin, k, kh, kw, bias, cout, y); break;
    case 32: conv_fwd_sample<T, 32>(x, H, W, cin, k, kh, kw, bias, cout, y); break;
    default: conv_fwd_sample<T, 0>(x, H, W, cin, k, kh, kw, bias, cout, y); break;
  }
}

// Kernel for grad_x: spatially flipped, in/out channels swapped.
template <typename T>
std::vector<T> flip_kernel(const Tensor<T>& k) {
  const std::size_t kh = k.dim(0), kw = k.dim(1), cin = k.dim(2), cout = k.dim(3);
  std::vector<T> f(k.size());
  for (std::size_t di = 0; di < kh; ++di)
    for (std::size_t dj = 0; dj < kw; ++dj)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t o = 0; o < cout; ++o)
          f[(((kh - 1 - di) * kw + (kw - 1 - dj)) * cout + o) * cin + c] = k[((di * kw + dj) * cin + c) * cout + o];
  return f;
}

// grad_kernel[d, c, o] += sum_p x[p + d, c] * gy[p, o] over the padded
// input, CB input channels at a time when CO is fixed.
template <typename T, int CO>
void conv_wgrad_sample(const T* x, const T* gy, std::size_t H, std::size_t W, std::size_t cin, std::size_t kh,
                       std::size_t kw, std::size_t cout_rt, T* gk, T* gb) {
  constexpr std::size_t CB = 4;
  const std::size_t cout = CO > 0 ? static_cast<std::size_t>(CO) : cout_rt;
  const std::size_t ph = (kh - 1) / 2, pw = (kw - 1) / 2, Wp = W + 2 * pw;
  const std::vector<T> xpad = pad_sample(x, H, W, cin, ph, pw);
  for (std::size_t p = 0; p < H * W; ++p)
    for (std::size_t o = 0; o < cout; ++o) gb[o] += gy[p * cout + o];
  for (std::size_t di = 0; di < kh; ++di)
    for (std::size_t dj = 0; dj < kw; ++dj) {
      T* gkd = gk + (di * kw + dj) * cin * cout;
      std::size_t c0 = 0;
      if constexpr (CO > 0) {
        for (; c0 + CB <= cin; c0 += CB) {
          T blk[CB][CO] = {};
          for (std::size_t i = 0; i < H; ++i) {
            const T* xrow = xpad.data() + ((i + di) * Wp + dj) * cin + c0;
            const T* grow = gy + i * W * CO;
            for (std::size_t j = 0; j < W; ++j) {
              const T* g = grow + j * CO;
              const T* xr = xrow + j * cin;
#pragma GCC unroll 4
              for (std::size_t b = 0; b < CB; ++b) {
                const T xv = xr[b];
#pragma omp simd
                for (int o = 0; o < CO; ++o) blk[b][o] += xv * g[o];
              }
            }
          }
          for (std::size_t b = 0; b < CB; ++b)
            for (int o = 0; o < CO; ++o) gkd[(c0 + b) * CO + static_cast<std::size_t>(o)] += blk[b][o];
        }
      }
      for (std::size_t c = c0; c < cin; ++c) {
        T* gkc = gkd + c * cout;
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const T* g = gy + (i * W + j) * cout;
            const T xv = xpad[((i + di) * Wp + j + dj) * cin + c];
            for (std::size_t o = 0; o < cout; ++o) gkc[o] += xv * g[o];
          }
      }
    }
}

}  // namespace detail

/// Stride-1, zero "same" padded 2-D convolution.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvParams<T>& p) {
  detail::check_conv(x, p);
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3), cout = p.c_out();
  Tensor<T> y({B, H, W, cout});
  const std::size_t xs = H * W * cin, ys = H * W * cout;
  const auto nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const T* xb = x.data() + static_cast<std::size_t>(b) * xs;
    T* yb = y.data() + static_cast<std::size_t>(b) * ys;
    detail::conv_fwd_dispatch(xb, H, W, cin, p.kernel.data(), p.kh(), p.kw(), p.bias.data(), cout, yb);
  }
  return y;
}

/// Returns grad_x and accumulates (overwrites) parameter gradients into `grads`.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& gy, ConvParams<T>& grads) {
  detail::check_conv(x, p);
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3), cout = p.c_out();
  if (gy.shape() != Shape{B, H, W, cout}) throw InputError("conv2d backward: grad_out shape mismatch");
  Tensor<T> gx(x.shape());
  const auto flipped = detail::flip_kernel(p.kernel);
  const std::vector<T> zero_bias(cin, T{0});
  std::vector<std::vector<T>> gk(B, std::vector<T>(p.kernel.size(), T{0}));
  std::vector<std::vector<T>> gb(B, std::vector<T>(cout, T{0}));
  const std::size_t xs = H * W * cin, ys = H * W * cout;
  const auto nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    const T* xb = x.data() + ub * xs;
    const T* gyb = gy.data() + ub * ys;
    T* gxb = gx.data() + ub * xs;
    detail::conv_fwd_dispatch(gyb, H, W, cout, flipped.data(), p.kh(), p.kw(), zero_bias.data(), cin, gxb);
    switch (cout) {
      case 16: detail::conv_wgrad_sample<T, 16>(xb, gyb, H, W, cin, p.kh(), p.kw(), cout, gk[ub].data(), gb[ub].data()); break;
      case 32: detail::conv_wgrad_sample<T, 32>(xb, gyb, H, W, cin, p.kh(), p.kw(), cout, gk[ub].data(), gb[ub].data()); break;
      default: detail::conv_wgrad_sample<T, 0>(xb, gyb, H, W, cin, p.kh(), p.kw(), cout, gk[ub].data(), gb[ub].data()); break;
    }
  }
  tree_reduce(gk);
  tree_reduce(gb);
  grads.kernel = Tensor<T>(p.kernel.shape(), std::move(gk[0]));
  grads.bias = std::move(gb[0]);
  return gx;
}

// ---- batch normalisation ------------------------------------------------------

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double eps = 1e-5;
  double momentum = 0.9;

  static BatchNormParams identity(std::size_t channels) {
    return {std::vector<T>(channels, T{1}), std::vector<T>(channels, T{0}), std::vector<T>(channels, T{0}),
            std::vector<T>(channels, T{1})};
  }
  std::size_t channels() const { return gamma.size(); }
  bool operator==(const BatchNormParams&) const = default;
};

template <typename T>
struct BatchNormGrads {
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<double> inv_std;
};

/// Normalises per channel (last axis) over all leading axes. Train mode uses
/// batch statistics and updates the running ones; needs batch >= 2.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode, BatchNormCache<T>* cache = nullptr) {
  if (x.rank() < 2) throw InputError("batchnorm expects rank >= 2");
  const std::size_t B = x.dim(0);
  const std::size_t C = x.shape().back();
  if (C != p.channels()) throw InputError("batchnorm channel mismatch");
  const std::size_t per = x.size() / B;  // elements per sample
  const std::size_t rows = per / C;      // spatial positions per sample
  Tensor<T> y(x.shape());

  if (mode == Mode::Infer) {
    std::vector<double> scale(C), shift(C);
    for (std::size_t c = 0; c < C; ++c) {
      scale[c] = static_cast<double>(p.gamma[c]) / std::sqrt(static_cast<double>(p.running_var[c]) + p.eps);
      shift[c] = static_cast<double>(p.beta[c]) - scale[c] * static_cast<double>(p.running_mean[c]);
    }
    const auto n = static_cast<std::ptrdiff_t>(B * rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * C;
      for (std::size_t c = 0; c < C; ++c) y[off + c] = static_cast<T>(scale[c] * static_cast<double>(x[off + c]) + shift[c]);
    }
    return y;
  }

  if (B < 2) throw InputError("batchnorm in train mode needs a batch of at least 2");
  const double M = static_cast<double>(B * rows);
  const auto nb = static_cast<std::ptrdiff_t>(B);

  std::vector<std::vector<double>> part(B, std::vector<double>(C, 0.0));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    auto& s = part[static_cast<std::size_t>(b)];
    const T* xb = x.data() + static_cast<std::size_t>(b) * per;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) s[c] += static_cast<double>(xb[r * C + c]);
  }
  tree_reduce(part);
  std::vector<double> mean(C);
  for (std::size_t c = 0; c < C; ++c) mean[c] = part[0][c] / M;

  for (auto& v : part) std::fill(v.begin(), v.end(), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    auto& s = part[static_cast<std::size_t>(b)];
    const T* xb = x.data() + static_cast<std::size_t>(b) * per;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = static_cast<double>(xb[r * C + c]) - mean[c];
        s[c] += d * d;
      }
  }
  tree_reduce(part);
  std::vector<double> var(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    var[c] = part[0][c] / M;
    inv_std[c] = 1.0 / std::sqrt(var[c] + p.eps);
  }

  Tensor<T> xhat(x.shape());
  const auto n = static_cast<std::ptrdiff_t>(B * rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (static_cast<double>(x[off + c]) - mean[c]) * inv_std[c];
      xhat[off + c] = static_cast<T>(h);
      y[off + c] = static_cast<T>(static_cast<double>(p.gamma[c]) * h + static_cast<double>(p.beta[c]));
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    p.running_mean[c] = static_cast<T>(p.momentum * static_cast<double>(p.running_mean[c]) + (1.0 - p.momentum) * mean[c]);
    p.running_var[c] = static_cast<T>(p.momentum * static_cast<double>(p.running_var[c]) + (1.0 - p.momentum) * var[c]);
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

/// Full batch-statistics backward for train mode.
template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& p, const Tensor<T>& gy,
                             BatchNormGrads<T>& grads) {
  const auto& xhat = cache.xhat;
  if (gy.shape() != xhat.shape()) throw InputError("batchnorm backward: shape mismatch");
  const std::size_t B = gy.dim(0);
  const std::size_t C = gy.shape().back();
  const std::size_t per = gy.size() / B;
  const std::size_t rows = per / C;
  const double M = static_cast<double>(B * rows);
  const auto nb = static_cast<std::ptrdiff_t>(B);

  // part[b] = [sum gy (C) | sum gy*xhat (C)]
  std::vector<std::vector<double>> part(B, std::vector<double>(2 * C, 0.0));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    auto& s = part[static_cast<std::size_t>(b)];
    const std::size_t base = static_cast<std::size_t>(b) * per;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const double g = static_cast<double>(gy[base + r * C + c]);
        s[c] += g;
        s[C + c] += g * static_cast<double>(xhat[base + r * C + c]);
      }
  }
  tree_reduce(part);
  grads.beta.assign(C, T{0});
  grads.gamma.assign(C, T{0});
  for (std::size_t c = 0; c < C; ++c) {
    grads.beta[c] = static_cast<T>(part[0][c]);
    grads.gamma[c] = static_cast<T>(part[0][C + c]);
  }

  Tensor<T> gx(gy.shape());
  const auto n = static_cast<std::ptrdiff_t>(B * rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double k = static_cast<double>(p.gamma[c]) * cache.inv_std[c];
      gx[off + c] = static_cast<T>(k * (static_cast<double>(gy[off + c]) - part[0][c] / M -
                                        static_cast<double>(xhat[off + c]) * part[0][C + c] / M));
    }
  }
  return gx;
}

// ---- pointwise activations ----------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

/// Subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& gy) {
  Tensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T{0} ? gy[i] : T{0};
  return gx;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<T>(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& gy) {
  Tensor<T> gx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (T{1} - y[i]);
  return gx;
}

// ---- dense --------------------------------------------------------------------

template <typename T>
struct DenseParams {
  Tensor<T> weights;  // (n_in, n_out)
  std::vector<T> bias;

  static DenseParams zeros(std::size_t n_in, std::size_t n_out) {
    return {Tensor<T>({n_in, n_out}), std::vector<T>(n_out, T{0})};
  }
  std::size_t n_in() const { return weights.dim(0); }
  std::size_t n_out() const { return weights.dim(1); }
  std::size_t param_count() const { return weights.size() + bias.size(); }
  bool operator==(const DenseParams&) const = default;
};

/// y = x W + b. x may have any rank; it is read as (batch, n_in).
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseParams<T>& p) {
  if (x.rank() < 1 || x.dim(0) == 0) throw InputError("dense expects a non-empty batch");
  const std::size_t B = x.dim(0), n_in = x.size() / B, n_out = p.n_out();
  if (n_in != p.n_in()) {
    throw InputError("dense shape mismatch: input width " + std::to_string(n_in) + ", weights expect " +
                     std::to_string(p.n_in()));
  }
  Tensor<T> y({B, n_out});
  const auto nb = static_cast<std::ptrdiff_t>(B);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    std::vector<double> acc(n_out, 0.0);
    const T* xb = x.data() + static_cast<std::size_t>(b) * n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      const double xv = static_cast<double>(xb[i]);
      const T* w = p.weights.data() + i * n_out;
      for (std::size_t o = 0; o < n_out; ++o) acc[o] += xv * static_cast<double>(w[o]);
    }
    for (std::size_t o = 0; o < n_out; ++o) y[static_cast<std::size_t>(b) * n_out + o] = static_cast<T>(acc[o] + static_cast<double>(p.bias[o]));
  }
  return y;
}

/// Returns grad_x with the shape of x.
template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const DenseParams<T>& p, const Tensor<T>& gy, DenseParams<T>& grads) {
  const std::size_t B = x.dim(0), n_in = p.n_in(), n_out = p.n_out();
  if (x.size() != B * n_in || gy.shape() != Shape{B, n_out}) throw InputError("dense backward: shape mismatch");
  Tensor<T> gx(x.shape());
  grads.weights = Tensor<T>(p.weights.shape());
  grads.bias.assign(n_out, T{0});
  const auto ni = static_cast<std::ptrdiff_t>(n_in);
  // Each weight row is owned by one iteration; the batch sum runs in index order.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < ni; ++si) {
    const auto i = static_cast<std::size_t>(si);
    const T* w = p.weights.data() + i * n_out;
    T* gw = grads.weights.data() + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b) acc += static_cast<double>(x[b * n_in + i]) * static_cast<double>(gy[b * n_out + o]);
      gw[o] = static_cast<T>(acc);
    }
    for (std::size_t b = 0; b < B; ++b) {
      double acc = 0.0;
      for (std::size_t o = 0; o < n_out; ++o) acc += static_cast<double>(gy[b * n_out + o]) * static_cast<double>(w[o]);
      gx[b * n_in + i] = static_cast<T>(acc);
    }
  }
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) acc += static_cast<double>(gy[b * n_out + o]);
    grads.bias[o] = static_cast<T>(acc);
  }
  return gx;
}

// ---- softmax cross-entropy ----------------------------------------------------

template <typename T>
struct SoftmaxXent {
  double loss = 0.0;
  Tensor<T> probs;
  Tensor<T> grad_logits;
  std::vector<double> per_sample_loss;
};

/// Numerically stable softmax + cross-entropy. With `weights` the loss is the
/// weighted mean sum(w_i l_i) / sum(w_i); otherwise the plain batch mean.
template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::span<const int> labels, std::span<const double> weights = {}) {
  if (logits.rank() != 2) throw InputError("softmax_xent expects (batch, classes) logits");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) throw InputError("softmax_xent: label count mismatch");
  if (!weights.empty() && weights.size() != B) throw InputError("softmax_xent: weight count mismatch");
  SoftmaxXent<T> out{0.0, Tensor<T>(logits.shape()), Tensor<T>(logits.shape()), std::vector<double>(B)};
  double wsum = 0.0;
  for (std::size_t b = 0; b < B; ++b) wsum += weights.empty() ? 1.0 : weights[b];
  std::vector<double> p(K);
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= K) throw InputError("softmax_xent: invalid label " + std::to_string(label));
    const T* z = logits.data() + b * K;
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) zmax = std::max(zmax, static_cast<double>(z[k]));
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = std::exp(static_cast<double>(z[k]) - zmax);
      sum += p[k];
    }
    const double lse = zmax + std::log(sum);
    const double w = weights.empty() ? 1.0 : weights[b];
    const double l = lse - static_cast<double>(z[label]);
    out.per_sample_loss[b] = l;
    out.loss += w * l / wsum;
    for (std::size_t k = 0; k < K; ++k) {
      const double pk = p[k] / sum;
      out.probs[b * K + k] = static_cast<T>(pk);
      out.grad_logits[b * K + k] = static_cast<T>(w * (pk - (static_cast<int>(k) == label ? 1.0 : 0.0)) / wsum);
    }
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  std::vector<int> zeros(logits.dim(0), 0);
  return softmax_xent(logits, std::span<const int>(zeros)).probs;
}

// ---- shape ops ----------------------------------------------------------------

/// Concatenates along the last axis; leading dims must match.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw InputError("concat_channels: leading dims differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t c1 = a.shape().back(), c2 = b.shape().back();
  Shape s = a.shape();
  s.back() = c1 + c2;
  Tensor<T> y(s);
  const std::size_t rows = c1 + c2 == 0 ? 0 : y.size() / (c1 + c2);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data() + r * c1, c1, y.data() + r * (c1 + c2));
    std::copy_n(b.data() + r * c2, c2, y.data() + r * (c1 + c2) + c1);
  }
  return y;
}

/// Inverse of concat_channels: splits the last axis at `c1`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, std::size_t c1) {
  const std::size_t c = y.shape().back();
  if (c1 > c) throw InputError("split_channels: split point beyond channel count");
  Shape sa = y.shape(), sb = y.shape();
  sa.back() = c1;
  sb.back() = c - c1;
  Tensor<T> a(sa), b(sb);
  const std::size_t rows = c == 0 ? 0 : y.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(y.data() + r * c, c1, a.data() + r * c1);
    std::copy_n(y.data() + r * c + c1, c - c1, b.data() + r * (c - c1));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  const std::size_t B = x.dim(0);
  return x.reshaped({B, B == 0 ? 0 : x.size() / B});
}

template <typename T>
Tensor<T> unflatten(const Tensor<T>& x, const Shape& shape) {
  if (shape_size(shape) != x.size()) throw InputError("unflatten: size mismatch");
  return x.reshaped(shape);
}

}  // namespace semg::nn
