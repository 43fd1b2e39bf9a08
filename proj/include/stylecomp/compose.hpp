// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Compositors: functions from (reference, background, placement mask) to an
// output image. Two fixed baselines plus the trained model.

#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "stylecomp/flow.hpp"
#include "stylecomp/image.hpp"
#include "stylecomp/model.hpp"
#include "stylecomp/random.hpp"
#include "stylecomp/training.hpp"

namespace stylecomp {

struct CompositionInput {
  std::string id;
  const Image& reference;   // I_f
  const Image& background;  // scene to insert into
  const Mask& mask;         // placement
  const Image* oracle = nullptr;  // ground-truth composite, when known
};

using Compositor = std::function<Image(const CompositionInput&)>;

/// Reference scaled into the mask's bounding box, pasted where the mask is
/// set. No harmonization.
inline Image copy_paste(const CompositionInput& in) {
  if (!in.background.same_size(in.mask)) throw ImageError("copy_paste: mask and background differ in size");
  const auto box = mask_bbox(in.mask);
  const auto obj = resize_nearest(in.reference, box.width(), box.height());
  Image out = in.background;
  for (std::size_t y = box.y0; y < box.y1; ++y)
    for (std::size_t x = box.x0; x < box.x1; ++x)
      if (mask_on(in.mask, x, y))
        for (std::size_t c = 0; c < out.channels; ++c) out.at(x, y, c) = obj.at(x - box.x0, y - box.y0, c);
  return out;
}

/// Returns the ground-truth stylized composite.
inline Image oracle_composite(const CompositionInput& in) {
  if (in.oracle == nullptr) throw ImageError("oracle: sample " + in.id + " has no ground-truth composite");
  return *in.oracle;
}

/// Samples the image stream with Euler steps from seeded noise, conditioned
/// on the reference and on the background outside the mask, then pastes
/// the generated pixels back inside the mask.
template <typename T>
class ModelCompositor {
 public:
  ModelCompositor(BranchParams<T> params, StageSpec spec, std::size_t steps, std::uint64_t seed)
      : params_(params.clone()), spec_(std::move(spec)), steps_(steps), seed_(seed) {
    params_.set_trainable(AdapterSet{});
    mask_ = make_mask<T>(spec_.mask, spec_.lengths(params_.config));
    if (steps_ == 0) throw std::invalid_argument("compose: steps must be >= 1");
  }

  Image operator()(const CompositionInput& in) const {
    const auto& c = params_.config;
    if (!in.background.same_size(in.mask)) throw ImageError("compose: mask and background differ in size");
    if (mask_count(in.mask) == 0) throw ImageError("compose: placement mask is empty");
    const auto rows = masked_token_rows(in.mask, c.image_hw, c.patch_size);
    ModelInputs<T> cond;
    cond.text = spec_.prompt;
    if (spec_.use_style) cond.style = zero_rows(image_tokens<T>(in.background, c.image_hw, c.patch_size), rows);
    if (spec_.use_ref) cond.ref = image_tokens<T>(in.reference, c.ref_hw, c.patch_size);
    VelocityField<T> field = [&](const Tensor<T>& z, T t) {
      auto x = cond;
      x.image = z;
      return model_forward(x, static_cast<double>(t), params_, mask_, spec_.active);
    };
    const Shape shape{c.image_tokens(), c.patch_dim()};
    const auto z = euler_sample(field, shape, steps_, sub_seed(seed_, "compose:" + in.id));
    auto gen = from_tensor(unpatchify(z, c.image_hw, c.image_hw, c.channels, c.patch_size));
    if (gen.width != in.background.width || gen.height != in.background.height)
      gen = resize_bilinear(gen, in.background.width, in.background.height);
    return select(in.mask, gen, in.background);
  }

  Compositor fn() const {
    return [self = *this](const CompositionInput& in) { return self(in); };
  }

 private:
  BranchParams<T> params_;
  StageSpec spec_;
  std::size_t steps_;
  std::uint64_t seed_;
  StructuralMask<T> mask_;
};

}  // namespace stylecomp
