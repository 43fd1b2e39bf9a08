// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "stylecomp/flow.hpp"
#include "test_util.hpp"

using namespace stylecomp;
using stylecomp::testing::random_tensor;
using D = Tensor<double>;

TEST(Flow, InterpolateTargetIdentity) {
  // Z_t + (1 - t) * v == Z_0 and Z_t - t * v == Z_1.
  const auto z0 = random_tensor({16, 12}, 1), z1 = random_tensor({16, 12}, 2);
  const auto v = flow_target(z0, z1);
  for (double t : {0.0, 0.1, 0.25, 0.5, 0.9, 1.0}) {
    const auto zt = interpolate(z0, z1, t);
    for (std::size_t i = 0; i < z0.numel(); ++i) {
      EXPECT_LT(std::abs(zt[i] + (1 - t) * v[i] - z0[i]), 1e-12) << "t=" << t;
      EXPECT_LT(std::abs(zt[i] - t * v[i] - z1[i]), 1e-12) << "t=" << t;
    }
  }
}

TEST(Flow, EndpointsAreExact) {
  const auto z0 = random_tensor({3, 4}, 3), z1 = random_tensor({3, 4}, 4);
  const auto a = interpolate(z0, z1, 1.0), b = interpolate(z0, z1, 0.0);
  for (std::size_t i = 0; i < z0.numel(); ++i) {
    EXPECT_EQ(a[i], z0[i]);
    EXPECT_EQ(b[i], z1[i]);
  }
}

TEST(Flow, EulerWithConstantFieldRecoversData) {
  const auto z0 = random_tensor({8, 6}, 5);
  const auto z1 = random_tensor({8, 6}, 6);
  const auto v = flow_target(z0, z1);
  const VelocityField<double> field = [&](const D&, double) { return v; };
  for (std::size_t steps : {1u, 2u, 3u, 7u, 20u, 50u, 1000u}) {
    const auto z = euler_integrate(field, z1, steps);
    for (std::size_t i = 0; i < z0.numel(); ++i) EXPECT_LT(std::abs(z[i] - z0[i]), 1e-12) << "steps=" << steps;
  }
}

TEST(Flow, EulerSampleIsSeeded) {
  const VelocityField<double> zero = [](const D& z, double) { return D::zeros(z.shape()); };
  const auto a = euler_sample(zero, {4, 4}, 3, 9), b = euler_sample(zero, {4, 4}, 3, 9);
  const auto c = euler_sample(zero, {4, 4}, 3, 10);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_NE(a[0], c[0]);
}

TEST(Flow, LossRowsSelectsRegion) {
  const auto pred = random_tensor({4, 3}, 7), target = random_tensor({4, 3}, 8);
  const std::vector<std::size_t> rows = {1, 3};
  double want = 0;
  for (auto r : rows)
    for (std::size_t c = 0; c < 3; ++c) want += std::pow(pred[r * 3 + c] - target[r * 3 + c], 2);
  want /= 6;
  EXPECT_NEAR(flow_loss_rows(pred, target, std::span<const std::size_t>(rows)).item(), want, 1e-15);
  EXPECT_NEAR(flow_loss_rows(pred, target, {}).item(), flow_loss(pred, target).item(), 0);
}

TEST(Flow, RejectsBadArguments) {
  EXPECT_THROW(interpolate(D::zeros({2}), D::zeros({3}), 0.5), ShapeError);
  EXPECT_THROW(interpolate(D::zeros({2}), D::zeros({2}), 1.5), std::invalid_argument);
  const VelocityField<double> zero = [](const D& z, double) { return D::zeros(z.shape()); };
  EXPECT_THROW(euler_integrate(zero, D::zeros({2}), 0), std::invalid_argument);
}
