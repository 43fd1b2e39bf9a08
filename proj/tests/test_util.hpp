// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "stylecomp/tensor.hpp"

namespace stylecomp::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

/// Fixed random weights so a tensor-valued output becomes a scalar with a
/// non-trivial gradient.
template <typename T = double>
Tensor<T> project_scalar(const Tensor<T>& y, std::uint64_t seed = 99) {
  return sum(mul(y, random_tensor<T>(y.shape(), seed)));
}

}  // namespace stylecomp::testing
