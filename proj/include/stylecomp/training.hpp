// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Staged adapter training. Stage 1 fits the reference branch on subject
// reconstruction, stage 2 fits the style branch on masked inpainting, stage 3
// freezes both and fits the main branch on full compositions.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stylecomp/checkpoint.hpp"
#include "stylecomp/flow.hpp"
#include "stylecomp/image.hpp"
#include "stylecomp/model.hpp"
#include "stylecomp/random.hpp"

namespace stylecomp {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frozen parameter set changed during training.
class FreezeError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

/// Prompt ids. The tiny text vocabulary has no tokenizer; these fixed
/// sequences stand in for the stage prompts.
inline const std::vector<std::size_t> kPromptSubject = {1, 2, 3, 4, 5};  // "a photo of this item"
inline const std::vector<std::size_t> kPromptInpaint = {6};
inline const std::vector<std::size_t> kPromptEmpty = {0};

template <typename T>
Tensor<T> image_tokens(const Image& img, std::size_t size, std::size_t patch) {
  const Image& src = (img.width == size && img.height == size) ? img : resize_bilinear(img, size, size);
  return patchify(to_tensor<T>(src), patch);
}

/// Grid-row-major indices of patches that touch the mask.
inline std::vector<std::size_t> masked_token_rows(const Mask& mask, std::size_t size, std::size_t patch) {
  const Mask& m = (mask.width == size && mask.height == size) ? mask : resize_nearest(mask, size, size);
  const auto g = size / patch;
  std::vector<std::size_t> rows;
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      bool on = false;
      for (std::size_t y = gy * patch; y < (gy + 1) * patch && !on; ++y)
        for (std::size_t x = gx * patch; x < (gx + 1) * patch && !on; ++x) on = mask_on(m, x, y);
      if (on) rows.push_back(gy * g + gx);
    }
  return rows;
}

/// Z * (1 - M): the listed rows zeroed.
template <typename T>
Tensor<T> zero_rows(const Tensor<T>& tokens, const std::vector<std::size_t>& rows) {
  std::vector<T> v(tokens.values().begin(), tokens.values().end());
  const auto n = tokens.cols();
  for (auto r : rows) std::fill_n(v.begin() + static_cast<std::ptrdiff_t>(r * n), n, T(0));
  return Tensor<T>(tokens.shape(), std::move(v));
}

// ---------------------------------------------------------------------------
// Stage specifications
// ---------------------------------------------------------------------------

enum class DataSource : std::uint8_t { reference_pairs = 0, inpainting = 1, quadruplets = 2, scenes = 3 };

inline const char* data_source_name(DataSource d) {
  switch (d) {
    case DataSource::scenes: return "scenes";
    case DataSource::reference_pairs: return "reference-pairs";
    case DataSource::inpainting: return "inpainting";
    case DataSource::quadruplets: return "quadruplets";
  }
  return "?";
}

enum class LossRegion : std::uint8_t { full = 0, masked = 1 };

/// Stage 0 fits the shared base on plain scenes and stands in for a
/// pretrained backbone; stages 1-3 only ever train adapters.
struct StageSpec {
  int stage = 1;
  std::string name = "stage1";
  bool train_base = false;
  AdapterSet trainable;
  AdapterSet active;  // adapters applied in the forward pass
  bool use_style = false;
  bool use_ref = false;
  DataSource source = DataSource::reference_pairs;
  MaskPolicy mask = MaskPolicy::none;
  std::vector<std::size_t> prompt;
  LossRegion loss = LossRegion::full;

  static StageSpec pretrain() {
    StageSpec s;
    s.stage = 0;
    s.name = "pretrain";
    s.train_base = true;
    s.source = DataSource::scenes;
    s.prompt = kPromptEmpty;
    return s;
  }

  static StageSpec stage1() {
    StageSpec s;
    s.stage = 1;
    s.name = "stage1";
    s.trainable = {Branch::ref};
    s.active = {Branch::ref};
    s.use_ref = true;
    s.source = DataSource::reference_pairs;
    s.prompt = kPromptSubject;
    return s;
  }

  static StageSpec stage2() {
    StageSpec s;
    s.stage = 2;
    s.name = "stage2";
    s.trainable = {Branch::style};
    s.active = {Branch::style};
    s.use_style = true;
    s.source = DataSource::inpainting;
    s.prompt = kPromptInpaint;
    s.loss = LossRegion::masked;
    return s;
  }

  static StageSpec stage3(MaskPolicy policy = MaskPolicy::structural) {
    StageSpec s;
    s.stage = 3;
    s.name = "stage3";
    s.trainable = {Branch::main};
    s.active = AdapterSet::all();
    s.use_style = true;
    s.use_ref = true;
    s.source = DataSource::quadruplets;
    s.mask = policy;
    s.prompt = kPromptEmpty;
    s.loss = LossRegion::masked;
    return s;
  }

  std::array<std::size_t, 4> lengths(const ModelConfig& c) const {
    return {prompt.size(), c.image_tokens(), use_style ? c.image_tokens() : 0, use_ref ? c.ref_tokens() : 0};
  }

  /// True when the spec is one of the three protocol stages exactly.
  bool canonical() const {
    if (stage == 1) return trainable == AdapterSet{Branch::ref} && use_ref && !use_style && mask == MaskPolicy::none;
    if (stage == 2)
      return trainable == AdapterSet{Branch::style} && use_style && !use_ref && mask == MaskPolicy::none;
    if (stage == 3)
      return trainable == AdapterSet{Branch::main} && use_style && use_ref && mask == MaskPolicy::structural;
    return false;
  }

  void validate() const {
    if (stage < 0 || stage > 3) throw TrainingError("stage must be 0, 1, 2 or 3");
    if (trainable.empty() && !train_base) throw TrainingError(name + ": nothing to train");
    if (train_base != (stage == 0)) throw TrainingError(name + ": only stage 0 trains the base");
    for (auto b : kBranches)
      if (trainable.contains(b) && !active.contains(b))
        throw TrainingError(name + ": trainable adapter '" + branch_name(b) + "' is not active");
    if (prompt.empty()) throw TrainingError(name + ": empty prompt");
    if (source == DataSource::reference_pairs && !use_ref) throw TrainingError(name + ": reference pairs need ref");
    if (source == DataSource::inpainting && (!use_style || use_ref))
      throw TrainingError(name + ": inpainting uses the style stream only");
    if (source == DataSource::quadruplets && !(use_style && use_ref))
      throw TrainingError(name + ": quadruplets use all four streams");
    if (source == DataSource::scenes && (use_style || use_ref))
      throw TrainingError(name + ": scenes use the image stream only");
  }
};

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

template <typename T>
struct TrainExample {
  std::string id;
  Tensor<T> target;  // Z_0, image tokens
  Tensor<T> style;
  Tensor<T> ref;
  std::vector<std::size_t> text;
  std::vector<std::size_t> rows;  // loss rows; empty = all

  ModelInputs<T> inputs(const Tensor<T>& noisy) const { return {noisy, text, style, ref}; }
};

/// Images one sample contributes. Which ones are required depends on the
/// stage's data source.
struct ExampleImages {
  std::string id;
  const Image* reference = nullptr;  // I_f
  const Image* composite = nullptr;  // I_c
  const Image* stylized = nullptr;   // I_s
  const Mask* mask = nullptr;        // I_m
};

/// Builds one training example. Returns nullopt (with `skipped` set) for a
/// degenerate inpainting mask; throws when a required image is absent.
template <typename T>
std::optional<TrainExample<T>> make_example(const StageSpec& spec, const ModelConfig& c, const ExampleImages& in,
                                            std::string* skipped = nullptr) {
  auto need = [&](const void* p, const char* what) {
    if (p == nullptr) throw TrainingError("sample " + in.id + ": missing " + what + " for " + spec.name);
  };
  TrainExample<T> ex;
  ex.id = in.id;
  ex.text = spec.prompt;
  const auto size = c.image_hw, p = c.patch_size;
  switch (spec.source) {
    case DataSource::scenes:
      if (in.stylized == nullptr) need(in.composite, "scene image");
      ex.target = image_tokens<T>(in.stylized ? *in.stylized : *in.composite, size, p);
      break;
    case DataSource::reference_pairs:
      need(in.reference, "reference image");
      need(in.composite, "target scene");
      ex.target = image_tokens<T>(*in.composite, size, p);
      break;
    case DataSource::inpainting:
    case DataSource::quadruplets: {
      if (spec.source == DataSource::quadruplets) need(in.reference, "reference image");
      need(in.stylized, "stylized image");
      need(in.mask, "mask");
      ex.target = image_tokens<T>(*in.stylized, size, p);
      ex.rows = masked_token_rows(*in.mask, size, p);
      if (ex.rows.empty() || ex.rows.size() == c.image_tokens()) {
        if (skipped)
          *skipped = "sample " + in.id + ": mask covers " + (ex.rows.empty() ? "0%" : "100%") + " of tokens";
        return std::nullopt;
      }
      ex.style = zero_rows(ex.target, ex.rows);
      break;
    }
  }
  if (spec.use_ref) {
    need(in.reference, "reference image");
    ex.ref = image_tokens<T>(*in.reference, c.ref_hw, p);
  }
  if (spec.loss == LossRegion::full) ex.rows.clear();
  if (!spec.use_style) ex.style = Tensor<T>();
  return ex;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  /// One update from the accumulated gradients. Parameters without a
  /// gradient are left alone.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& p = params_[i];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto x = p.values();
      std::vector<T> next(x.begin(), x.end());
      for (std::size_t j = 0; j < next.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m_[i][j] = opt_.beta1 * m_[i][j] + (1.0 - opt_.beta1) * gj;
        v_[i][j] = opt_.beta2 * v_[i][j] + (1.0 - opt_.beta2) * gj * gj;
        const double upd = opt_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + opt_.eps);
        next[j] = static_cast<T>(static_cast<double>(x[j]) - upd);
      }
      p.assign(next);
    }
  }

  void zero_grad() const {
    for (const auto& p : params_) p.clear_grad();
  }

  std::size_t updates() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t steps = 500;  // optimizer updates
  std::size_t batch = 1;    // examples per micro-batch
  std::size_t accumulation = 2;
  AdamOptions adam;
  std::uint64_t seed = 0;
  std::size_t hash_every = 100;  // 0 disables; 1 checks every update
  std::size_t heldout = 8;
};

template <typename T>
struct TrainState {
  BranchParams<T> params;
  StageSpec spec;
  TrainOptions options;
  StructuralMask<T> mask;
  std::size_t step = 0;   // optimizer updates so far
  std::size_t micro = 0;  // micro-batches so far
  std::array<std::optional<std::uint64_t>, 4> frozen;  // by ParamGroup
  std::vector<double> losses;                          // one per update
  std::uint64_t seed = 0;
  Rng rng;
  Adam<T> optimizer;
  double pending = 0;  // loss accumulated since the last update
};

template <typename T>
TrainState<T> make_state(BranchParams<T> params, const StageSpec& spec, const TrainOptions& opt) {
  spec.validate();
  if (opt.accumulation == 0 || opt.batch == 0) throw TrainingError("batch and accumulation must be >= 1");
  TrainState<T> s;
  s.params = std::move(params);
  s.spec = spec;
  s.options = opt;
  s.mask = make_mask<T>(spec.mask, spec.lengths(s.params.config));
  s.seed = opt.seed;
  s.rng.seed(sub_seed(opt.seed, "train:" + spec.name));
  s.params.set_trainable(spec.trainable);
  auto trained = [&](ParamGroup g) {
    return g == ParamGroup::base ? spec.train_base : spec.trainable.contains(static_cast<Branch>(static_cast<int>(g) - 1));
  };
  std::vector<Tensor<T>> train;
  s.params.visit([&](const std::string&, const Tensor<T>& t, ParamGroup g) {
    if (!trained(g)) return;
    t.set_requires_grad(true);
    train.push_back(t);
  });
  s.optimizer = Adam<T>(std::move(train), opt.adam);
  for (int g = 0; g < 4; ++g)
    if (!trained(static_cast<ParamGroup>(g))) s.frozen[g] = s.params.hash(static_cast<ParamGroup>(g));
  return s;
}

template <typename T>
void check_frozen(const TrainState<T>& s) {
  for (int g = 0; g < 4; ++g) {
    if (!s.frozen[g]) continue;
    const auto pg = static_cast<ParamGroup>(g);
    if (s.params.hash(pg) != *s.frozen[g])
      throw FreezeError(std::string("frozen parameter set '") + group_name(pg) + "' changed at step " +
                        std::to_string(s.step));
  }
}

/// Noise and time for one example, drawn from `rng`.
template <typename T>
struct FlowDraw {
  T t;
  Tensor<T> noise;
};

template <typename T>
FlowDraw<T> draw_flow(const Tensor<T>& target, Rng& rng) {
  const auto t = static_cast<T>(uniform01(rng));
  std::mt19937_64 nrng(rng());
  return {t, standard_normal<T>(target.shape(), nrng)};
}

/// Flow loss of one example at a given draw. Builds the graph when any
/// parameter requires gradients.
template <typename T>
Tensor<T> example_loss(const TrainExample<T>& ex, const FlowDraw<T>& d, const BranchParams<T>& params,
                       const StructuralMask<T>& mask, const AdapterSet& active) {
  const auto zt = interpolate(ex.target, d.noise, d.t);
  const auto target = flow_target(ex.target, d.noise);
  const auto pred = model_forward(ex.inputs(zt), static_cast<double>(d.t), params, mask, active);
  return flow_loss_rows(pred, target, std::span<const std::size_t>(ex.rows));
}

/// One micro-batch: forward, loss, backward. Every `accumulation`
/// micro-batches the optimizer updates the trainable set. Returns the
/// micro-batch mean loss.
template <typename T>
double train_step(TrainState<T>& s, const std::vector<const TrainExample<T>*>& batch) {
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  const T w = T(1) / static_cast<T>(batch.size() * s.options.accumulation);
  double total = 0;
  for (const auto* ex : batch) {
    const auto d = draw_flow(ex->target, s.rng);
    Tensor<T> loss;
    try {
      loss = example_loss(*ex, d, s.params, s.mask, s.spec.active);
    } catch (const NumericError& e) {
      throw NumericError(s.spec.name + " step " + std::to_string(s.step) + " sample " + ex->id + ": " + e.what());
    }
    const double l = static_cast<double>(loss.item());
    if (!std::isfinite(l))
      throw NumericError(s.spec.name + " step " + std::to_string(s.step) + " sample " + ex->id + ": non-finite loss");
    total += l;
    backward(scale(loss, w));
  }
  const double mean_loss = total / static_cast<double>(batch.size());
  s.pending += mean_loss;
  ++s.micro;
  if (s.micro % s.options.accumulation == 0) {
    s.optimizer.step();
    s.optimizer.zero_grad();
    ++s.step;
    s.losses.push_back(s.pending / static_cast<double>(s.options.accumulation));
    s.pending = 0;
    if (s.options.hash_every != 0 && s.step % s.options.hash_every == 0) check_frozen(s);
  }
  return mean_loss;
}

/// Mean flow loss over examples with draws fixed by `seed`, without
/// gradients. Comparable across parameter snapshots.
template <typename T>
double heldout_loss(const BranchParams<T>& params, const StageSpec& spec, const std::vector<TrainExample<T>>& data,
                    std::uint64_t seed) {
  if (data.empty()) return 0.0;
  auto frozen = params.clone();
  frozen.set_trainable(AdapterSet{});
  const auto mask = make_mask<T>(spec.mask, spec.lengths(params.config));
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng(sub_seed(seed, "heldout:" + std::to_string(i)));
    const auto d = draw_flow(data[i].target, rng);
    total += static_cast<double>(example_loss(data[i], d, frozen, mask, spec.active).item());
  }
  return total / static_cast<double>(data.size());
}

struct StageReport {
  std::string stage;
  std::size_t steps = 0;
  std::vector<double> losses;
  double heldout_initial = 0;
  double heldout_final = 0;
  std::size_t train_examples = 0;
  std::size_t heldout_examples = 0;
  std::vector<std::string> skipped;
};

using ProgressFn = std::function<void(std::size_t step, double loss)>;

/// Trains `params` in place for `opt.steps` updates. Examples are drawn
/// uniformly with replacement.
template <typename T>
StageReport run_stage(BranchParams<T>& params, const StageSpec& spec, const TrainOptions& opt,
                      const std::vector<TrainExample<T>>& train, const std::vector<TrainExample<T>>& heldout,
                      const ProgressFn& progress = {}) {
  if (train.empty()) throw TrainingError(spec.name + ": no training examples");
  const auto eval_seed = sub_seed(opt.seed, "heldout:" + spec.name);
  StageReport rep;
  rep.stage = spec.name;
  rep.train_examples = train.size();
  rep.heldout_examples = heldout.size();
  rep.heldout_initial = heldout_loss(params, spec, heldout, eval_seed);
  auto s = make_state(params, spec, opt);
  while (s.step < opt.steps) {
    std::vector<const TrainExample<T>*> batch;
    for (std::size_t b = 0; b < opt.batch; ++b)
      batch.push_back(&train[static_cast<std::size_t>(uniform_int(s.rng, 0, static_cast<std::int64_t>(train.size()) - 1))]);
    const auto before = s.step;
    train_step(s, batch);
    if (progress && s.step != before) progress(s.step, s.losses.back());
  }
  check_frozen(s);
  s.params.set_trainable(AdapterSet{});
  params = s.params;
  rep.steps = s.step;
  rep.losses = s.losses;
  rep.heldout_final = heldout_loss(params, spec, heldout, eval_seed);
  return rep;
}

template <typename T>
void require_source(const std::vector<TrainExample<T>>& data, const StageSpec& spec) {
  for (const auto& ex : data) {
    if (spec.use_ref && !ex.ref.defined()) throw TrainingError("sample " + ex.id + ": missing reference image");
    if (spec.use_style && !ex.style.defined()) throw TrainingError("sample " + ex.id + ": missing style context");
  }
}

template <typename T>
StageReport run_stage1(BranchParams<T>& params, const TrainOptions& opt, const std::vector<TrainExample<T>>& train,
                       const std::vector<TrainExample<T>>& heldout, const ProgressFn& progress = {}) {
  const auto spec = StageSpec::stage1();
  require_source(train, spec);
  return run_stage(params, spec, opt, train, heldout, progress);
}

template <typename T>
StageReport run_stage2(BranchParams<T>& params, const TrainOptions& opt, const std::vector<TrainExample<T>>& train,
                       const std::vector<TrainExample<T>>& heldout, const ProgressFn& progress = {}) {
  const auto spec = StageSpec::stage2();
  require_source(train, spec);
  return run_stage(params, spec, opt, train, heldout, progress);
}

template <typename T>
StageReport run_stage3(BranchParams<T>& params, const StageSpec& spec, const TrainOptions& opt,
                       const std::vector<TrainExample<T>>& train, const std::vector<TrainExample<T>>& heldout,
                       const ProgressFn& progress = {}) {
  if (spec.stage != 3) throw TrainingError("run_stage3: spec is for stage " + std::to_string(spec.stage));
  require_source(train, spec);
  return run_stage(params, spec, opt, train, heldout, progress);
}

// ---------------------------------------------------------------------------
// Checkpoints and assembly
// ---------------------------------------------------------------------------

template <typename T>
Checkpoint stage_checkpoint(const BranchParams<T>& params, const StageSpec& spec, const StageReport& rep,
                            std::uint64_t seed) {
  auto ck = to_checkpoint(params, spec.lengths(params.config));
  ck.put_scalar("meta.stage", spec.stage);
  ck.put_scalar("meta.steps", static_cast<double>(rep.steps));
  ck.put_scalar("meta.seed_lo", static_cast<double>(seed & 0xFFFFFFFFu));
  ck.put_scalar("meta.seed_hi", static_cast<double>(seed >> 32));
  ck.put_scalar("meta.mask_policy", static_cast<double>(spec.mask));
  return ck;
}

inline int checkpoint_stage(const Checkpoint& ck) {
  const auto s = ck.scalar_or("meta.stage");
  if (!s) throw FormatError("checkpoint carries no stage tag");
  return static_cast<int>(*s);
}

/// Stage-3 initialization from optional stage-1 and stage-2 results.
/// Missing stages keep the adapters of `init`; the main branch is always a
/// fresh zero-delta set drawn from `main_seed`.
template <typename T>
BranchParams<T> assemble_from(const BranchParams<T>& init, const Checkpoint* subject, const Checkpoint* style,
                              std::uint64_t main_seed) {
  auto out = init.clone();
  const auto base = init.hash(ParamGroup::base);
  auto take = [&](const Checkpoint* ck, Branch br, int stage) {
    if (ck == nullptr) return;
    if (checkpoint_stage(*ck) != stage)
      throw TrainingError("expected a stage-" + std::to_string(stage) + " checkpoint, got stage " +
                          std::to_string(checkpoint_stage(*ck)));
    const auto p = from_checkpoint<T>(*ck);
    if (!(p.config == init.config)) throw TrainingError("stage-" + std::to_string(stage) + " model config differs");
    if (p.hash(ParamGroup::base) != base)
      throw TrainingError("base weights of the stage-" + std::to_string(stage) + " checkpoint differ; refusing to assemble");
    out.adapters(br) = p.clone().adapters(br);
  };
  take(subject, Branch::ref, 1);
  take(style, Branch::style, 2);
  out.main = detail::init_adapters<T>(init.config, main_seed, Branch::main);
  out.set_trainable(AdapterSet{});
  return out;
}

/// Joins the stage-1 and stage-2 checkpoints, in either order.
template <typename T>
BranchParams<T> assemble_stage3(const Checkpoint& a, const Checkpoint& b, std::uint64_t main_seed) {
  const auto sa = checkpoint_stage(a), sb = checkpoint_stage(b);
  if (!((sa == 1 && sb == 2) || (sa == 2 && sb == 1)))
    throw TrainingError("assemble_stage3 needs one stage-1 and one stage-2 checkpoint");
  const auto& subject = sa == 1 ? a : b;
  const auto& style = sa == 2 ? a : b;
  const auto init = from_checkpoint<T>(subject);
  return assemble_from(init, &subject, &style, main_seed);
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

enum class Variant : std::uint8_t { naive_e2e = 0, no_subject = 1, no_style = 2, no_mask = 3, full = 4 };
inline constexpr std::array<Variant, 5> kVariants = {Variant::naive_e2e, Variant::no_subject, Variant::no_style,
                                                     Variant::no_mask, Variant::full};

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::naive_e2e: return "naive-e2e";
    case Variant::no_subject: return "no-subject";
    case Variant::no_style: return "no-style";
    case Variant::no_mask: return "no-mask";
    case Variant::full: return "full";
  }
  return "?";
}

inline const char* variant_label(Variant v) {
  switch (v) {
    case Variant::naive_e2e: return "Naive E2E";
    case Variant::no_subject: return "w/o Subject pre-train (Stage 2+3)";
    case Variant::no_style: return "w/o Style pre-train (Stage 1+3)";
    case Variant::no_mask: return "Full Protocol w/o Masked Attention";
    case Variant::full: return "Full Protocol + Masked Attention";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : kVariants)
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

/// The stage sequence of one variant. The final entry is always a
/// stage-3 spec trained on quadruplets.
inline std::vector<StageSpec> variant_plan(Variant v) {
  switch (v) {
    case Variant::naive_e2e: {
      auto s = StageSpec::stage3(MaskPolicy::none);
      s.name = "naive-e2e";
      s.trainable = AdapterSet::all();
      return {s};
    }
    case Variant::no_subject: return {StageSpec::stage2(), StageSpec::stage3()};
    case Variant::no_style: return {StageSpec::stage1(), StageSpec::stage3()};
    case Variant::no_mask: return {StageSpec::stage1(), StageSpec::stage2(), StageSpec::stage3(MaskPolicy::none)};
    case Variant::full: return {StageSpec::stage1(), StageSpec::stage2(), StageSpec::stage3()};
  }
  return {};
}

}  // namespace stylecomp
