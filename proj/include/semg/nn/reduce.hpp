#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace semg::nn {

// Fixed-order reductions. Per-item partials are combined by a pairwise tree
// whose shape depends only on the item count, so results are bitwise
// identical for any OpenMP thread count.

/// Sums parts[0..n) element-wise into parts[0].
template <typename T>
void tree_reduce(std::vector<std::vector<T>>& parts) {
  const std::size_t n = parts.size();
  for (std::size_t stride = 1; stride < n; stride *= 2) {
    for (std::size_t i = 0; i + stride < n; i += 2 * stride) {
      auto& dst = parts[i];
      const auto& src = parts[i + stride];
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

template <typename T>
T tree_sum(std::span<const T> v) {
  if (v.empty()) return T{0};
  if (v.size() == 1) return v[0];
  const std::size_t half = v.size() / 2;
  return tree_sum(v.first(half)) + tree_sum(v.subspan(half));
}

}  // namespace semg::nn
