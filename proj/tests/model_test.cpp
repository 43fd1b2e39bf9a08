// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "stylecomp/gradcheck.hpp"
#include "stylecomp/model.hpp"
#include "stylecomp/reference.hpp"
#include "test_util.hpp"

using namespace stylecomp;
using stylecomp::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 12;
  c.n_heads = 2;
  c.n_layers = 2;
  c.mlp_mult = 2;
  c.lora_rank = 2;
  c.patch_size = 2;
  c.image_hw = 4;
  c.ref_hw = 4;
  c.text_vocab = 8;
  c.max_text_len = 4;
  return c;
}

/// Gives every adapter a non-zero B so adapter paths carry signal.
template <typename T>
void randomize_adapters(BranchParams<T>& p, std::uint64_t seed) {
  for (auto br : kBranches) {
    auto& ad = p.adapters(br);
    std::vector<Lora<T>*> ls{&ad.in};
    for (auto& b : ad.blocks)
      for (auto* l : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) ls.push_back(l);
    if (ad.out) ls.push_back(&*ad.out);
    for (auto* l : ls) l->b = random_tensor<T>(l->b.shape(), seed++, -0.5, 0.5);
  }
}

template <typename T>
ModelInputs<T> random_inputs(const ModelConfig& c, std::uint64_t seed, bool style = true, bool ref = true) {
  ModelInputs<T> in;
  in.image = random_tensor<T>({c.image_tokens(), c.patch_dim()}, seed);
  in.text = {1, 2, 3};
  if (style) in.style = random_tensor<T>({c.image_tokens(), c.patch_dim()}, seed + 1);
  if (ref) in.ref = random_tensor<T>({c.ref_tokens(), c.patch_dim()}, seed + 2);
  return in;
}

}  // namespace

TEST(StructuralMask, MatchesRuleOracleOnRandomLengths) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(0, 7);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<std::size_t, 4> l{len(rng), len(rng), len(rng), len(rng)};
    if (l[0] + l[1] + l[2] + l[3] == 0) l[1] = 1;
    const auto m = build_structural_mask<float>(l[0], l[1], l[2], l[3]);
    const auto oracle = reference::blocked_pairs(l);
    const auto n = m.total();
    ASSERT_EQ(oracle.size(), n * n);
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t k = 0; k < n; ++k)
        ASSERT_EQ(m.blocked(q, k), oracle[q * n + k]) << "trial " << trial << " q=" << q << " k=" << k;
    EXPECT_EQ(m.blocked_count(), 2 * l[2] * l[3]);
  }
}

TEST(StructuralMask, OpenMaskBlocksNothing) {
  EXPECT_EQ(open_mask<float>(2, 4, 4, 3).blocked_count(), 0u);
  EXPECT_EQ(make_mask<float>(MaskPolicy::none, {1, 2, 3, 4}).blocked_count(), 0u);
}

class Isolation : public ::testing::TestWithParam<Stream> {};

TEST_P(Isolation, OtherContextStreamCannotReachThisOne) {
  const Stream watched = GetParam();
  const Stream perturbed = watched == Stream::ref ? Stream::style : Stream::ref;
  const auto c = tiny_config();
  auto p = init_params<float>(c, 5);
  randomize_adapters(p, 100);
  TokenStreams<float> s;
  s.text = random_tensor<float>({3, c.d_model}, 1);
  s.image = random_tensor<float>({c.image_tokens(), c.d_model}, 2);
  s.style = random_tensor<float>({c.image_tokens(), c.d_model}, 3);
  s.ref = random_tensor<float>({c.ref_tokens(), c.d_model}, 4);
  const auto mask = build_structural_mask<float>(3, c.image_tokens(), c.image_tokens(), c.ref_tokens());
  for (std::size_t layer = 0; layer < c.n_layers; ++layer) {
    const auto base = joint_attention(s, p, layer, mask, AdapterSet::all());
    auto s2 = s;
    s2[perturbed] = random_tensor<float>(s[perturbed].shape(), 77 + layer, -5, 5);
    const auto moved = joint_attention(s2, p, layer, mask, AdapterSet::all());
    const auto a = base[watched].values(), b = moved[watched].values();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0) << "layer " << layer;
    // The image stream does see both.
    const auto ia = base.image.values(), ib = moved.image.values();
    EXPECT_NE(std::memcmp(ia.data(), ib.data(), ia.size() * sizeof(float)), 0);
  }
}

INSTANTIATE_TEST_SUITE_P(ContextStreams, Isolation, ::testing::Values(Stream::ref, Stream::style),
                         [](const auto& info) { return std::string(stream_name(info.param)); });

TEST(ZeroAdapters, FourStreamModelEqualsUnifiedAttention) {
  const ModelConfig c;  // full-size default model
  const auto p = init_params<float>(c, 11);
  const auto in = random_inputs<float>(c, 21);
  const auto mask = make_mask<float>(MaskPolicy::none, in.lengths());
  for (double t : {0.0, 0.37, 1.0}) {
    const auto a = model_forward(in, t, p, mask, AdapterSet::all());
    const auto b = reference::unified_forward(in, t, p);
    ASSERT_EQ(a.shape(), b.shape());
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
    EXPECT_LT(worst, 1e-6) << "t=" << t;
  }
}

TEST(ZeroAdapters, ActiveAdaptersChangeNothingAtInit) {
  const auto c = tiny_config();
  const auto p = init_params<float>(c, 3);
  const auto in = random_inputs<float>(c, 4);
  const auto mask = make_mask<float>(MaskPolicy::structural, in.lengths());
  const auto a = model_forward(in, 0.5, p, mask, AdapterSet::all());
  const auto b = model_forward(in, 0.5, p, mask, AdapterSet{});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(ModelGradient, TwoLayerModelPassesFiniteDifferences) {
  const auto c = tiny_config();
  auto p = init_params<double>(c, 8);
  randomize_adapters(p, 300);
  const auto in = random_inputs<double>(c, 9);
  const auto mask = make_mask<double>(MaskPolicy::structural, in.lengths());
  const auto target = random_tensor<double>({c.image_tokens(), c.patch_dim()}, 10);
  std::vector<Tensor<double>> params;
  p.visit([&](const std::string&, const Tensor<double>& t, ParamGroup) { params.push_back(t); });
  ScalarFn f = [&](const std::vector<Tensor<double>>& x) {
    // Gradients flow to the noisy tokens too.
    ModelInputs<double> mi = in;
    mi.image = x.back();
    return mse(model_forward(mi, 0.3, p, mask, AdapterSet::all()), target);
  };
  params.push_back(in.image.detached(true));
  const auto r = grad_check(f, params, 1e-5);
  EXPECT_LT(r.max_rel_err, 1e-4) << "worst input " << r.worst_input << " abs " << r.max_abs_err;
  EXPECT_GT(r.coords, 1000u);
}

TEST(Model, PatchifyRoundTrip) {
  const auto img = random_tensor<float>({8, 12, 3}, 5);
  const auto tok = patchify(img, 4);
  EXPECT_EQ(tok.shape(), (Shape{6, 48}));
  const auto back = unpatchify(tok, 8, 12, 3, 4);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(img[i], back[i]);
}

TEST(Model, ReferenceGridDoesNotCollideWithImageGrid) {
  const auto c = tiny_config();
  const auto img = stream_positions(c, Stream::image, c.image_tokens());
  const auto ref = stream_positions(c, Stream::ref, c.ref_tokens());
  for (const auto& a : img)
    for (const auto& b : ref) EXPECT_FALSE(a.row == b.row && a.col == b.col && a.seq == b.seq);
}

TEST(Model, CheckpointRoundTripIsExact) {
  const auto c = tiny_config();
  auto p = init_params<float>(c, 12);
  randomize_adapters(p, 500);
  const auto ck = to_checkpoint(p, {3, c.image_tokens(), c.image_tokens(), c.ref_tokens()});
  std::stringstream ss;
  ck.write(ss);
  const auto q = from_checkpoint<float>(Checkpoint::read(ss));
  EXPECT_EQ(q.config, c);
  for (int g = 0; g < 4; ++g) EXPECT_EQ(q.hash(ParamGroup(g)), p.hash(ParamGroup(g)));
}

TEST(Model, SetTrainableTouchesOnlyNamedAdapters) {
  const auto p = init_params<float>(tiny_config(), 1);
  p.set_trainable({Branch::style});
  p.visit([](const std::string& name, const Tensor<float>& t, ParamGroup g) {
    EXPECT_EQ(t.requires_grad(), g == ParamGroup::style) << name;
  });
}

TEST(Model, InitIsDeterministic) {
  const auto a = init_params<float>(tiny_config(), 42), b = init_params<float>(tiny_config(), 42);
  const auto d = init_params<float>(tiny_config(), 43);
  EXPECT_EQ(a.hash(ParamGroup::base), b.hash(ParamGroup::base));
  EXPECT_NE(a.hash(ParamGroup::base), d.hash(ParamGroup::base));
}

TEST(Model, RejectsBadInputs) {
  const auto c = tiny_config();
  const auto p = init_params<float>(c, 1);
  auto in = random_inputs<float>(c, 2);
  const auto mask = make_mask<float>(MaskPolicy::none, in.lengths());
  EXPECT_THROW(model_forward(in, 1.5, p, mask, AdapterSet{}), std::invalid_argument);
  in.text = {c.text_vocab};
  EXPECT_THROW(model_forward(in, 0.5, p, mask, AdapterSet{}), ShapeError);
  in.text = {1, 2, 3};
  in.style = random_tensor<float>({c.image_tokens(), c.patch_dim() + 1}, 3);
  EXPECT_THROW(model_forward(in, 0.5, p, mask, AdapterSet{}), ShapeError);
}
