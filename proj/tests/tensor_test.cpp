// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "stylecomp/gradcheck.hpp"
#include "stylecomp/tensor.hpp"
#include "test_util.hpp"

using namespace stylecomp;
using stylecomp::testing::project_scalar;
using stylecomp::testing::random_tensor;
using D = Tensor<double>;

namespace {

constexpr double kTol = 1e-4;

void expect_grad_ok(const ScalarFn& f, const std::vector<D>& inputs) {
  const auto r = grad_check(f, inputs, 1e-5);
  EXPECT_LT(r.max_rel_err, kTol) << "input " << r.worst_input << ", max abs err " << r.max_abs_err;
  EXPECT_GT(r.coords, 0u);
}

}  // namespace

TEST(GradCheck, Add) {
  expect_grad_ok([](auto& x) { return project_scalar(add(x[0], x[1])); },
                 {random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)});
}

TEST(GradCheck, AddBroadcastRow) {
  expect_grad_ok([](auto& x) { return project_scalar(add(x[0], x[1])); },
                 {random_tensor({3, 4}, 1), random_tensor({4}, 2)});
}

TEST(GradCheck, Sub) {
  expect_grad_ok([](auto& x) { return project_scalar(sub(x[0], x[1])); },
                 {random_tensor({2, 5}, 3), random_tensor({5}, 4)});
}

TEST(GradCheck, Mul) {
  expect_grad_ok([](auto& x) { return project_scalar(mul(x[0], x[1])); },
                 {random_tensor({4, 3}, 5), random_tensor({4, 3}, 6)});
}

TEST(GradCheck, MulScalarBroadcast) {
  expect_grad_ok([](auto& x) { return project_scalar(mul(x[0], x[1])); },
                 {random_tensor({4, 3}, 5), random_tensor({}, 6)});
}

TEST(GradCheck, ScaleAndAddScalar) {
  expect_grad_ok([](auto& x) { return project_scalar(add_scalar(scale(x[0], 2.5), -0.75)); },
                 {random_tensor({3, 3}, 7)});
}

TEST(GradCheck, Silu) {
  expect_grad_ok([](auto& x) { return project_scalar(silu(x[0])); }, {random_tensor({5, 4}, 8, -3, 3)});
}

TEST(GradCheck, SumAndMean) {
  expect_grad_ok([](auto& x) { return add(sum(mul(x[0], x[0])), mean(x[0])); }, {random_tensor({3, 7}, 9)});
}

TEST(GradCheck, Mse) {
  expect_grad_ok([](auto& x) { return mse(x[0], x[1]); }, {random_tensor({6, 2}, 10), random_tensor({6, 2}, 11)});
}

TEST(GradCheck, Reshape) {
  expect_grad_ok([](auto& x) { return project_scalar(reshape(x[0], Shape{2, 6})); }, {random_tensor({3, 4}, 12)});
}

TEST(GradCheck, SliceRowsAndCols) {
  expect_grad_ok(
      [](auto& x) { return add(project_scalar(slice_rows(x[0], 1, 2)), project_scalar(slice_cols(x[0], 2, 3), 7)); },
      {random_tensor({4, 6}, 13)});
}

TEST(GradCheck, ConcatRowsAndCols) {
  expect_grad_ok(
      [](auto& x) {
        return add(project_scalar(concat_rows(std::vector<D>{x[0], x[1]})),
                   project_scalar(concat_cols(std::vector<D>{x[0], x[2]}), 5));
      },
      {random_tensor({2, 3}, 14), random_tensor({4, 3}, 15), random_tensor({2, 5}, 16)});
}

TEST(GradCheck, SelectRowsWithRepeats) {
  const std::vector<std::size_t> rows = {3, 0, 3, 1};
  expect_grad_ok([&](auto& x) { return project_scalar(select_rows(x[0], std::span<const std::size_t>(rows))); },
                 {random_tensor({5, 3}, 17)});
}

TEST(GradCheck, Matmul) {
  expect_grad_ok([](auto& x) { return project_scalar(matmul(x[0], x[1])); },
                 {random_tensor({5, 7}, 18), random_tensor({7, 9}, 19)});
}

TEST(GradCheck, MatmulNt) {
  expect_grad_ok([](auto& x) { return project_scalar(matmul_nt(x[0], x[1])); },
                 {random_tensor({5, 7}, 20), random_tensor({6, 7}, 21)});
}

TEST(GradCheck, LinearLora) {
  expect_grad_ok([](auto& x) { return project_scalar(linear_lora(x[0], x[1], x[2], x[3], 0.5)); },
                 {random_tensor({4, 6}, 22), random_tensor({6, 5}, 23), random_tensor({6, 2}, 24),
                  random_tensor({2, 5}, 25)});
}

TEST(GradCheck, RmsNorm) {
  expect_grad_ok([](auto& x) { return project_scalar(rms_norm(x[0], x[1])); },
                 {random_tensor({4, 8}, 26), random_tensor({8}, 27, 0.5, 1.5)});
}

TEST(GradCheck, MaskedSoftmax) {
  auto bias = D::zeros(Shape{4, 5});
  std::vector<double> b(20, 0.0);
  b[1] = b[7] = b[13] = masked_bias<double>();
  bias = D(Shape{4, 5}, b);
  expect_grad_ok([&](auto& x) { return project_scalar(masked_softmax(x[0], bias)); },
                 {random_tensor({4, 5}, 28, -2, 2)});
}

TEST(GradCheck, MultiHeadAttention) {
  std::vector<double> b(36, 0.0);
  for (std::size_t q = 4; q < 6; ++q) b[q * 6 + 1] = masked_bias<double>();
  const D bias(Shape{6, 6}, b);
  expect_grad_ok([&](auto& x) { return project_scalar(multi_head_attention(x[0], x[1], x[2], bias, 2)); },
                 {random_tensor({6, 4}, 29), random_tensor({6, 4}, 30), random_tensor({6, 4}, 31)});
}

TEST(GradCheck, AttentionMatchesComposedOps) {
  const auto q = random_tensor({5, 6}, 32), k = random_tensor({5, 6}, 33), v = random_tensor({5, 6}, 34);
  const auto bias = D::zeros(Shape{5, 5});
  const auto fused = multi_head_attention(q, k, v, bias, 2);
  std::vector<D> heads;
  for (std::size_t h = 0; h < 2; ++h) {
    const auto qh = slice_cols(q, 3 * h, 3), kh = slice_cols(k, 3 * h, 3), vh = slice_cols(v, 3 * h, 3);
    heads.push_back(matmul(masked_softmax(scale(matmul_nt(qh, kh), 1.0 / std::sqrt(3.0)), bias), vh));
  }
  const auto composed = concat_cols(heads);
  for (std::size_t i = 0; i < fused.numel(); ++i) EXPECT_NEAR(fused[i], composed[i], 1e-12);
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(add(D::zeros({2, 3}), D::zeros({3, 2})), ShapeError);
  EXPECT_THROW(matmul(D::zeros({2, 3}), D::zeros({2, 3})), ShapeError);
  EXPECT_THROW(D(Shape{2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Tensor, MaskedEntriesGetZeroProbability) {
  const auto logits = random_tensor({2, 3}, 40);
  const D bias(Shape{3}, {0.0, masked_bias<double>(), 0.0});
  const auto p = masked_softmax(logits, bias);
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[4], 0.0);
  EXPECT_NEAR(p[0] + p[2], 1.0, 1e-15);
}

TEST(Tensor, FullyMaskedRowThrows) {
  const D bias(Shape{2}, {masked_bias<double>(), masked_bias<double>()});
  EXPECT_THROW(masked_softmax(random_tensor({1, 2}, 41), bias), NumericError);
}

TEST(Tensor, LeafGradientsAccumulate) {
  const auto x = random_tensor({3}, 42);
  x.set_requires_grad(true);
  backward(sum(x));
  backward(sum(x));
  for (auto g : x.grad()) EXPECT_EQ(g, 2.0);
  x.clear_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, NoGraphWithoutRequiresGrad) {
  const auto y = matmul(random_tensor({2, 2}, 43), random_tensor({2, 2}, 44));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(Graph<double>::record(sum(y)).nodes().empty());
}

TEST(Tensor, LoraWithZeroBEqualsPlainMatmulBitwise) {
  const auto x = random_tensor<float>({7, 9}, 45), w = random_tensor<float>({9, 5}, 46);
  const auto a = random_tensor<float>({9, 3}, 47);
  const auto b = Tensor<float>::zeros({3, 5});
  const auto y1 = linear_lora(x, w, a, b, 0.25f), y2 = matmul(x, w);
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
}

TEST(Tensor, BackwardNeedsScalar) { EXPECT_THROW(backward(random_tensor({2}, 48)), ShapeError); }
