// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checking for scalar functions of tensors.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stylecomp/tensor.hpp"

namespace stylecomp {

struct GradCheckResult {
  double max_rel_err = 0;  // worst per-input ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_err = 0;  // worst single coordinate
  std::size_t coords = 0;
  std::size_t worst_input = 0;

  bool ok(double tol) const { return max_rel_err < tol; }
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares backward() against (f(x+h) - f(x-h)) / 2h for every coordinate
/// of every input. Inputs are modified during the check and restored.
/// `stride` > 1 samples every stride-th coordinate of large inputs.
inline GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5,
                                  std::size_t stride = 1) {
  for (const auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  backward(f(inputs));
  GradCheckResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& x = inputs[i];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    std::vector<double> v(x.values().begin(), x.values().end());
    const std::size_t step = x.numel() > 64 ? std::max<std::size_t>(1, stride) : 1;
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t j = 0; j < v.size(); j += step) {
      const double orig = v[j];
      v[j] = orig + h;
      x.assign(v);
      const double fp = f(inputs).item();
      v[j] = orig - h;
      x.assign(v);
      const double fm = f(inputs).item();
      v[j] = orig;
      x.assign(v);
      const double num = (fp - fm) / (2 * h);
      const double d = analytic[j] - num;
      diff2 += d * d;
      a2 += analytic[j] * analytic[j];
      n2 += num * num;
      r.max_abs_err = std::max(r.max_abs_err, std::abs(d));
      ++r.coords;
    }
    const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-12);
    const double rel = std::sqrt(diff2) / denom;
    if (rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_input = i;
    }
  }
  for (const auto& x : inputs) x.clear_grad();
  return r;
}

}  // namespace stylecomp
