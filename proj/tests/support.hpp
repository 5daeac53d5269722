#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semg/nn/tensor.hpp"

namespace semg::testkit {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline nn::Tensor<double> random_tensor(nn::Shape shape, std::uint64_t seed, double scale = 1.0) {
  const auto n = nn::shape_size(shape);
  return nn::Tensor<double>(std::move(shape), random_vector(n, seed, scale));
}

template <typename T>
void randomize(std::span<T> v, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, 1e-12).
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

/// Central differences of a scalar function with respect to every entry of
/// `params` (perturbed in place and restored).
inline std::vector<double> numeric_grad(std::span<double> params, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Weighted-sum loss L = sum(w * y) so that dL/dy = w.
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("semg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace semg::testkit
