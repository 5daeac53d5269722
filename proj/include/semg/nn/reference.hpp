#pragma once

// Straightforward serial implementations kept as test oracles and benchmark
// baselines for the parallel kernels in layers.hpp.

#include "semg/nn/layers.hpp"

namespace semg::nn::reference {

/// Six nested loops, out-of-range taps read as zero.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvParams<T>& p) {
  detail::check_conv(x, p);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3), cout = p.c_out();
  const auto kh = p.kh(), kw = p.kw();
  const auto ph = static_cast<std::ptrdiff_t>(kh - 1) / 2, pw = static_cast<std::ptrdiff_t>(kw - 1) / 2;
  Tensor<T> y({B, H, W, cout});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t o = 0; o < cout; ++o) {
          T acc = p.bias[o];
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj)
              for (std::size_t c = 0; c < cin; ++c) {
                const auto ii = static_cast<std::ptrdiff_t>(i + di) - ph;
                const auto jj = static_cast<std::ptrdiff_t>(j + dj) - pw;
                if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(H) || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += x[((b * H + static_cast<std::size_t>(ii)) * W + static_cast<std::size_t>(jj)) * cin + c] *
                       p.kernel[((di * kw + dj) * cin + c) * cout + o];
              }
          y[((b * H + i) * W + j) * cout + o] = acc;
        }
  return y;
}

template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& gy, ConvParams<T>& grads) {
  detail::check_conv(x, p);
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3), cout = p.c_out();
  const auto kh = p.kh(), kw = p.kw();
  const auto ph = static_cast<std::ptrdiff_t>(kh - 1) / 2, pw = static_cast<std::ptrdiff_t>(kw - 1) / 2;
  Tensor<T> gx(x.shape());
  grads = ConvParams<T>::zeros(kh, kw, cin, cout);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t o = 0; o < cout; ++o) {
          const T g = gy[((b * H + i) * W + j) * cout + o];
          grads.bias[o] += g;
          for (std::size_t di = 0; di < kh; ++di)
            for (std::size_t dj = 0; dj < kw; ++dj)
              for (std::size_t c = 0; c < cin; ++c) {
                const auto ii = static_cast<std::ptrdiff_t>(i + di) - ph;
                const auto jj = static_cast<std::ptrdiff_t>(j + dj) - pw;
                if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(H) || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t xi = ((b * H + static_cast<std::size_t>(ii)) * W + static_cast<std::size_t>(jj)) * cin + c;
                const std::size_t ki = ((di * kw + dj) * cin + c) * cout + o;
                gx[xi] += g * p.kernel[ki];
                grads.kernel[ki] += g * x[xi];
              }
        }
  return gx;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseParams<T>& p) {
  const std::size_t B = x.dim(0), n_in = p.n_in(), n_out = p.n_out();
  if (x.size() != B * n_in) throw InputError("dense shape mismatch");
  Tensor<T> y({B, n_out});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < n_out; ++o) {
      T acc = p.bias[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += x[b * n_in + i] * p.weights[i * n_out + o];
      y[b * n_out + o] = acc;
    }
  return y;
}

/// Two-pass batch statistics, train mode, no running-stat update.
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const BatchNormParams<T>& p) {
  const std::size_t C = x.shape().back();
  const std::size_t rows = x.size() / C;
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += static_cast<double>(x[r * C + c]);
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = static_cast<double>(x[r * C + c]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      y[r * C + c] = static_cast<T>(static_cast<double>(p.gamma[c]) * (static_cast<double>(x[r * C + c]) - mean) /
                                        std::sqrt(var + p.eps) +
                                    static_cast<double>(p.beta[c]));
    }
  }
  return y;
}

}  // namespace semg::nn::reference
