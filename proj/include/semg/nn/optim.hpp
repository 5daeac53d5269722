#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "semg/errors.hpp"

namespace semg::nn {

/// One trainable buffer and its gradient.
template <typename T>
struct ParamRef {
  std::span<T> value;
  std::span<const T> grad;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

namespace detail {
inline void check_slots(std::size_t n_params, std::size_t n_state, auto sizes_match) {
  if (n_state != n_params || !sizes_match()) throw InputError("optimizer state does not mirror parameter shapes");
}
}  // namespace detail

/// Bias-corrected Adam. The state is sized lazily on the first call.
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, AdamState<T>& st, const AdamConfig& cfg) {
  for (const auto& p : params) {
    if (p.value.size() != p.grad.size()) throw InputError("adam_step: gradient shape mismatch");
  }
  if (st.m.empty() && st.step == 0) {
    for (const auto& p : params) {
      st.m.emplace_back(p.value.size(), 0.0);
      st.v.emplace_back(p.value.size(), 0.0);
    }
  }
  detail::check_slots(params.size(), st.m.size(), [&] {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (st.m[i].size() != params[i].value.size()) return false;
    return true;
  });
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = st.m[i];
    auto& v = st.v[i];
    const auto& p = params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = static_cast<double>(p.grad[k]);
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p.value[k] = static_cast<T>(static_cast<double>(p.value[k]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

struct SgdConfig {
  double lr = 1e-2;
  double momentum = 0.9;
};

template <typename T>
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// SGD with classical momentum: v <- mu v + g; p <- p - lr v.
template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, SgdState<T>& st, const SgdConfig& cfg) {
  if (st.velocity.empty()) {
    for (const auto& p : params) st.velocity.emplace_back(p.value.size(), 0.0);
  }
  detail::check_slots(params.size(), st.velocity.size(), [&] {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (st.velocity[i].size() != params[i].value.size() || params[i].grad.size() != params[i].value.size()) return false;
    return true;
  });
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& vel = st.velocity[i];
    const auto& p = params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      vel[k] = cfg.momentum * vel[k] + static_cast<double>(p.grad[k]);
      p.value[k] = static_cast<T>(static_cast<double>(p.value[k]) - cfg.lr * vel[k]);
    }
  }
}

}  // namespace semg::nn
