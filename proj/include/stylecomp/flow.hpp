// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rectified flow: straight paths Z_t = t*Z_0 + (1-t)*Z_1 from noise (t=0)
// to data (t=1), constant target velocity Z_0 - Z_1.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "stylecomp/tensor.hpp"

namespace stylecomp {

namespace detail {
template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

template <typename T>
Tensor<T> interpolate(const Tensor<T>& data, const Tensor<T>& noise, T t) {
  detail::require_same_shape(data, noise, "interpolate");
  if (!(t >= T(0) && t <= T(1))) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  if (t == T(1)) return data.detached();
  if (t == T(0)) return noise.detached();
  std::vector<T> out(data.numel());
  auto d = data.values();
  auto n = noise.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * d[i] + (T(1) - t) * n[i];
  return Tensor<T>(data.shape(), std::move(out));
}

template <typename T>
Tensor<T> flow_target(const Tensor<T>& data, const Tensor<T>& noise) {
  detail::require_same_shape(data, noise, "flow_target");
  std::vector<T> out(data.numel());
  auto d = data.values();
  auto n = noise.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] - n[i];
  return Tensor<T>(data.shape(), std::move(out));
}

/// Mean squared error between predicted and target velocity.
template <typename T>
Tensor<T> flow_loss(const Tensor<T>& predicted, const Tensor<T>& target) {
  detail::require_same_shape(predicted, target, "flow_loss");
  return mse(predicted, target);
}

/// Flow loss restricted to a subset of token rows (the region being
/// synthesized). An empty subset means every row.
template <typename T>
Tensor<T> flow_loss_rows(const Tensor<T>& predicted, const Tensor<T>& target, std::span<const std::size_t> rows) {
  detail::require_same_shape(predicted, target, "flow_loss");
  if (rows.empty()) return mse(predicted, target);
  return mse(select_rows(predicted, rows), select_rows(target, rows));
}

template <typename T>
Tensor<T> standard_normal(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(shape, std::move(v));
}

/// v(Z, t) evaluated without gradient tracking.
template <typename T>
using VelocityField = std::function<Tensor<T>(const Tensor<T>& z, T t)>;

/// Uniform-grid Euler integration from t=0 (fresh noise) to t=1.
template <typename T>
Tensor<T> euler_integrate(const VelocityField<T>& field, Tensor<T> z, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("euler: steps must be >= 1");
  const T dt = T(1) / static_cast<T>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const T t = static_cast<T>(k) / static_cast<T>(steps);
    const auto v = field(z, t);
    detail::require_same_shape(z, v, "euler");
    std::vector<T> next(z.numel());
    auto zv = z.values();
    auto vv = v.values();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = zv[i] + dt * vv[i];
    z = Tensor<T>(z.shape(), std::move(next));
  }
  return z;
}

/// Draws Z_1 from the seed and integrates. Returns tokens; callers
/// unpatchify.
template <typename T>
Tensor<T> euler_sample(const VelocityField<T>& field, const Shape& shape, std::size_t steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return euler_integrate(field, standard_normal<T>(shape, rng), steps);
}

}  // namespace stylecomp
