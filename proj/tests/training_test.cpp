// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "stylecomp/pipeline.hpp"
#include "stylecomp/synth.hpp"
#include "stylecomp/training.hpp"

using namespace stylecomp;
using F = float;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 12;
  c.n_heads = 2;
  c.n_layers = 2;
  c.lora_rank = 2;
  c.patch_size = 4;
  c.image_hw = 16;
  c.ref_hw = 8;
  return c;
}

class TrainingTest : public ::testing::Test {
 protected:
  void SetUp() override {
    DataConfig dc;
    dc.count = 6;
    for (std::size_t i = 0; i < dc.count; ++i) samples_.push_back(generate_sample(dc, i));
    base_ = init_params<F>(cfg_, 17);
  }

  ExampleImages images(std::size_t i) const {
    const auto& s = samples_[i];
    return {s.record.id, &s.fg.image, &s.composite, &s.stylized, &s.mask};
  }

  std::vector<TrainExample<F>> examples(const StageSpec& spec) const {
    std::vector<TrainExample<F>> out;
    for (std::size_t i = 0; i < samples_.size(); ++i)
      if (auto ex = make_example<F>(spec, cfg_, images(i))) out.push_back(*ex);
    return out;
  }

  TrainOptions options(std::size_t steps, double lr = 1e-2) const {
    TrainOptions o;
    o.steps = steps;
    o.adam.lr = lr;
    o.seed = 5;
    o.hash_every = 1;
    o.heldout = 2;
    return o;
  }

  static std::array<std::uint64_t, 4> hashes(const BranchParams<F>& p) {
    return {p.hash(ParamGroup::base), p.hash(ParamGroup::ref), p.hash(ParamGroup::style), p.hash(ParamGroup::main)};
  }

  ModelConfig cfg_ = small_config();
  std::vector<Sample> samples_;
  BranchParams<F> base_;
};

}  // namespace

TEST_F(TrainingTest, ZeroStepsLeaveParametersBitwiseEqual) {
  auto p = base_.clone();
  const auto data = examples(StageSpec::stage1());
  const auto rep = run_stage1(p, options(0), data, data);
  EXPECT_EQ(rep.steps, 0u);
  EXPECT_EQ(hashes(p), hashes(base_));
  EXPECT_EQ(rep.heldout_initial, rep.heldout_final);
}

TEST_F(TrainingTest, AccumulationDefersTheUpdate) {
  auto opt = options(1);
  opt.accumulation = 2;
  auto s = make_state(base_.clone(), StageSpec::stage1(), opt);
  const auto data = examples(StageSpec::stage1());
  const auto before = hashes(s.params);
  train_step(s, {&data[0]});
  EXPECT_EQ(s.step, 0u);
  EXPECT_EQ(s.optimizer.updates(), 0u);
  EXPECT_EQ(hashes(s.params), before);
  train_step(s, {&data[1]});
  EXPECT_EQ(s.step, 1u);
  EXPECT_EQ(s.optimizer.updates(), 1u);
  EXPECT_EQ(s.losses.size(), 1u);
  EXPECT_NE(s.params.hash(ParamGroup::ref), before[1]);
}

TEST_F(TrainingTest, ZeroLearningRateChangesNothing) {
  auto p = base_.clone();
  const auto data = examples(StageSpec::stage2());
  run_stage2(p, options(3, 0.0), data, {});
  EXPECT_EQ(hashes(p), hashes(base_));
}

TEST_F(TrainingTest, OverfitsASingleExample) {
  auto p = base_.clone();
  const auto data = examples(StageSpec::stage1());
  const std::vector<TrainExample<F>> one{data[0]};
  auto opt = options(50, 1e-2);
  opt.accumulation = 1;
  const auto rep = run_stage1(p, opt, one, one);
  EXPECT_LT(rep.heldout_final, 0.8 * rep.heldout_initial);
}

TEST_F(TrainingTest, EachStageTrainsOnlyItsAdapters) {
  struct Case {
    StageSpec spec;
    ParamGroup trained;
  };
  for (const auto& c : {Case{StageSpec::stage1(), ParamGroup::ref}, Case{StageSpec::stage2(), ParamGroup::style},
                        Case{StageSpec::stage3(), ParamGroup::main}}) {
    auto p = base_.clone();
    const auto data = examples(c.spec);
    ASSERT_FALSE(data.empty());
    run_stage(p, c.spec, options(3), data, {});
    for (int g = 0; g < 4; ++g) {
      const auto pg = ParamGroup(g);
      if (pg == c.trained)
        EXPECT_NE(p.hash(pg), base_.hash(pg)) << c.spec.name;
      else
        EXPECT_EQ(p.hash(pg), base_.hash(pg)) << c.spec.name << " " << group_name(pg);
    }
  }
}

TEST_F(TrainingTest, PretrainTrainsOnlyTheBase) {
  auto p = base_.clone();
  const auto spec = StageSpec::pretrain();
  run_stage(p, spec, options(2), examples(spec), {});
  EXPECT_NE(p.hash(ParamGroup::base), base_.hash(ParamGroup::base));
  for (auto g : {ParamGroup::ref, ParamGroup::style, ParamGroup::main}) EXPECT_EQ(p.hash(g), base_.hash(g));
}

TEST_F(TrainingTest, TamperedFrozenSetIsDetected) {
  auto s = make_state(base_.clone(), StageSpec::stage1(), options(4));
  const auto data = examples(StageSpec::stage1());
  auto w = s.params.base.patch_in;
  std::vector<F> v(w.values().begin(), w.values().end());
  v[0] += 1.0f;
  w.assign(v);
  train_step(s, {&data[0]});
  EXPECT_THROW(train_step(s, {&data[1]}), FreezeError);
}

TEST_F(TrainingTest, DegenerateMasksAreSkipped) {
  const auto& s = samples_[0];
  Mask empty(s.mask.width, s.mask.height, 1, 0), full(s.mask.width, s.mask.height, 1, 255);
  std::string why;
  ExampleImages im{"x", &s.fg.image, &s.composite, &s.stylized, &empty};
  EXPECT_FALSE(make_example<F>(StageSpec::stage2(), cfg_, im, &why));
  EXPECT_NE(why.find("0%"), std::string::npos);
  im.mask = &full;
  EXPECT_FALSE(make_example<F>(StageSpec::stage3(), cfg_, im, &why));
  EXPECT_NE(why.find("100%"), std::string::npos);
}

TEST_F(TrainingTest, MissingImageIsAnError) {
  auto im = images(0);
  im.reference = nullptr;
  EXPECT_THROW(make_example<F>(StageSpec::stage1(), cfg_, im), TrainingError);
  EXPECT_THROW(make_example<F>(StageSpec::stage3(), cfg_, im), TrainingError);
  EXPECT_NO_THROW(make_example<F>(StageSpec::stage2(), cfg_, im));
}

TEST_F(TrainingTest, StyleContextHidesTheMaskedRegion) {
  const auto ex = *make_example<F>(StageSpec::stage2(), cfg_, images(0));
  ASSERT_FALSE(ex.rows.empty());
  const auto w = ex.style.cols();
  for (auto r : ex.rows)
    for (std::size_t c = 0; c < w; ++c) EXPECT_EQ(ex.style[r * w + c], 0.0f);
}

TEST_F(TrainingTest, NonFiniteLossIsReported) {
  auto data = examples(StageSpec::stage1());
  std::vector<F> v(data[0].target.values().begin(), data[0].target.values().end());
  v[0] = std::numeric_limits<F>::quiet_NaN();
  data[0].target = Tensor<F>(data[0].target.shape(), v);
  auto s = make_state(base_.clone(), StageSpec::stage1(), options(1));
  try {
    train_step(s, {&data[0]});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find(data[0].id), std::string::npos);
  }
}

TEST_F(TrainingTest, SameSeedSameRun) {
  auto a = base_.clone(), b = base_.clone();
  const auto data = examples(StageSpec::stage2());
  const auto ra = run_stage2(a, options(4), data, data);
  const auto rb = run_stage2(b, options(4), data, data);
  EXPECT_EQ(hashes(a), hashes(b));
  EXPECT_EQ(ra.losses, rb.losses);
}

class AssemblyTest : public TrainingTest {
 protected:
  void SetUp() override {
    TrainingTest::SetUp();
    auto p1 = base_.clone(), p2 = base_.clone();
    r1_ = run_stage1(p1, options(2), examples(StageSpec::stage1()), {});
    r2_ = run_stage2(p2, options(2), examples(StageSpec::stage2()), {});
    p1_ = p1;
    p2_ = p2;
    ck1_ = stage_checkpoint(p1, StageSpec::stage1(), r1_, 5);
    ck2_ = stage_checkpoint(p2, StageSpec::stage2(), r2_, 5);
  }
  StageReport r1_, r2_;
  BranchParams<F> p1_, p2_;
  Checkpoint ck1_, ck2_;
};

TEST_F(AssemblyTest, OrderDoesNotMatter) {
  const auto a = assemble_stage3<F>(ck1_, ck2_, 9), b = assemble_stage3<F>(ck2_, ck1_, 9);
  EXPECT_EQ(hashes(a), hashes(b));
}

TEST_F(AssemblyTest, BranchesComeFromTheirStagesBitwise) {
  const auto p = assemble_stage3<F>(ck1_, ck2_, 9);
  EXPECT_EQ(p.hash(ParamGroup::ref), p1_.hash(ParamGroup::ref));
  EXPECT_EQ(p.hash(ParamGroup::style), p2_.hash(ParamGroup::style));
  EXPECT_EQ(p.hash(ParamGroup::base), base_.hash(ParamGroup::base));
  // Main starts at zero delta: the output equals the main-less forward pass.
  for (const auto& blk : p.main.blocks)
    for (auto v : blk.q.b.values()) EXPECT_EQ(v, 0.0f);
}

TEST_F(AssemblyTest, DifferentBaseIsRefused) {
  const auto other = init_params<F>(cfg_, 18);
  StageReport r;
  const auto bad = stage_checkpoint(other, StageSpec::stage2(), r, 5);
  EXPECT_THROW(assemble_stage3<F>(ck1_, bad, 9), TrainingError);
}

TEST_F(AssemblyTest, WrongStagePairIsRefused) {
  EXPECT_THROW(assemble_stage3<F>(ck1_, ck1_, 9), TrainingError);
  Checkpoint untagged = to_checkpoint(base_, {1, 16, 16, 4});
  EXPECT_THROW(assemble_stage3<F>(ck1_, untagged, 9), FormatError);
}

TEST_F(AssemblyTest, VariantInitNeedsItsCheckpoints) {
  EXPECT_THROW(variant_init<F>(Variant::full, base_, &ck1_, nullptr, 1), TrainingError);
  EXPECT_THROW(variant_init<F>(Variant::no_subject, base_, nullptr, nullptr, 1), TrainingError);
  const auto p = variant_init<F>(Variant::no_style, base_, &ck1_, nullptr, 1);
  EXPECT_EQ(p.hash(ParamGroup::ref), p1_.hash(ParamGroup::ref));
  EXPECT_EQ(p.hash(ParamGroup::style), base_.hash(ParamGroup::style));
}

TEST(StageSpec, ProtocolStagesAreCanonical) {
  EXPECT_TRUE(StageSpec::stage1().canonical());
  EXPECT_TRUE(StageSpec::stage2().canonical());
  EXPECT_TRUE(StageSpec::stage3().canonical());
  EXPECT_FALSE(StageSpec::stage3(MaskPolicy::none).canonical());
  for (auto v : kVariants) EXPECT_NO_THROW(variant_plan(v).back().validate()) << variant_name(v);
}

TEST(StageSpec, InvalidSpecsAreRejected) {
  auto s = StageSpec::stage1();
  s.active = {};
  EXPECT_THROW(s.validate(), TrainingError);
  s = StageSpec::stage2();
  s.use_ref = true;
  EXPECT_THROW(s.validate(), TrainingError);
  s = StageSpec::stage3();
  s.train_base = true;
  EXPECT_THROW(s.validate(), TrainingError);
}

TEST(StageSpec, VariantPlans) {
  auto stages = [](Variant v) {
    std::vector<int> out;
    for (const auto& s : variant_plan(v)) out.push_back(s.stage);
    return out;
  };
  EXPECT_EQ(stages(Variant::full), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(stages(Variant::no_mask), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(stages(Variant::no_subject), (std::vector<int>{2, 3}));
  EXPECT_EQ(stages(Variant::no_style), (std::vector<int>{1, 3}));
  EXPECT_EQ(stages(Variant::naive_e2e), (std::vector<int>{3}));
  EXPECT_EQ(variant_plan(Variant::no_mask).back().mask, MaskPolicy::none);
  EXPECT_EQ(variant_plan(Variant::full).back().mask, MaskPolicy::structural);
  EXPECT_TRUE(variant_plan(Variant::naive_e2e).back().trainable == AdapterSet::all());
  EXPECT_EQ(parse_variant("no-style"), Variant::no_style);
  EXPECT_THROW(parse_variant("nope"), std::invalid_argument);
}
