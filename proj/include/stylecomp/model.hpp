// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Four-stream diffusion transformer. Text, image, style and reference tokens
// share one frozen set of base projections; the style, reference and image
// ("main") streams each add their own low-rank adapters. All streams meet in
// a single joint attention whose additive bias can forbid reference<->style
// traffic.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stylecomp/checkpoint.hpp"
#include "stylecomp/hash.hpp"
#include "stylecomp/tensor.hpp"

namespace stylecomp {

struct ModelConfig {
  std::size_t d_model = 96;
  std::size_t n_heads = 4;
  std::size_t n_layers = 3;
  std::size_t mlp_mult = 2;
  std::size_t lora_rank = 16;
  std::size_t patch_size = 4;
  std::size_t image_hw = 64;
  std::size_t ref_hw = 32;
  std::size_t channels = 3;
  std::size_t text_vocab = 32;
  std::size_t max_text_len = 8;

  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t grid() const { return image_hw / patch_size; }
  std::size_t ref_grid() const { return ref_hw / patch_size; }
  std::size_t image_tokens() const { return grid() * grid(); }
  std::size_t ref_tokens() const { return ref_grid() * ref_grid(); }
  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
      throw std::invalid_argument("d_model must be a positive multiple of n_heads");
    if (patch_size == 0 || image_hw % patch_size != 0 || ref_hw % patch_size != 0)
      throw std::invalid_argument("image sizes must be divisible by patch_size");
    if (lora_rank == 0) throw std::invalid_argument("lora_rank must be >= 1");
    if (n_layers == 0 || mlp_mult == 0 || channels == 0 || text_vocab == 0 || max_text_len == 0)
      throw std::invalid_argument("model extents must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Streams, branches, masks
// ---------------------------------------------------------------------------

/// Concatenation order inside joint attention.
enum class Stream : std::uint8_t { text = 0, image = 1, style = 2, ref = 3 };
inline constexpr std::array<Stream, 4> kStreamOrder = {Stream::text, Stream::image, Stream::style, Stream::ref};

inline const char* stream_name(Stream s) {
  switch (s) {
    case Stream::text: return "text";
    case Stream::image: return "image";
    case Stream::style: return "style";
    case Stream::ref: return "ref";
  }
  return "?";
}

enum class Branch : std::uint8_t { ref = 0, style = 1, main = 2 };
inline constexpr std::array<Branch, 3> kBranches = {Branch::ref, Branch::style, Branch::main};

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::ref: return "ref";
    case Branch::style: return "style";
    case Branch::main: return "main";
  }
  return "?";
}

inline Branch parse_branch(const std::string& s) {
  if (s == "ref") return Branch::ref;
  if (s == "style") return Branch::style;
  if (s == "main") return Branch::main;
  throw std::invalid_argument("unknown branch '" + s + "'");
}

/// Which adapter branch feeds a stream; text has none.
inline std::optional<Branch> branch_of(Stream s) {
  switch (s) {
    case Stream::image: return Branch::main;
    case Stream::style: return Branch::style;
    case Stream::ref: return Branch::ref;
    case Stream::text: return std::nullopt;
  }
  return std::nullopt;
}

class AdapterSet {
 public:
  AdapterSet() = default;
  AdapterSet(std::initializer_list<Branch> bs) {
    for (auto b : bs) insert(b);
  }
  static AdapterSet all() { return {Branch::ref, Branch::style, Branch::main}; }
  void insert(Branch b) { bits_ |= bit(b); }
  void erase(Branch b) { bits_ &= static_cast<std::uint8_t>(~bit(b)); }
  bool contains(Branch b) const { return (bits_ & bit(b)) != 0; }
  bool empty() const { return bits_ == 0; }
  bool operator==(const AdapterSet&) const = default;

 private:
  static std::uint8_t bit(Branch b) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(b)); }
  std::uint8_t bits_ = 0;
};

template <typename T>
struct TokenStreams {
  Tensor<T> text;
  Tensor<T> image;
  Tensor<T> style;
  Tensor<T> ref;

  Tensor<T>& operator[](Stream s) {
    switch (s) {
      case Stream::text: return text;
      case Stream::image: return image;
      case Stream::style: return style;
      case Stream::ref: return ref;
    }
    return text;
  }
  const Tensor<T>& operator[](Stream s) const { return const_cast<TokenStreams&>(*this)[s]; }

  std::size_t length(Stream s) const {
    const auto& t = (*this)[s];
    return t.defined() ? t.rows() : 0;
  }
  std::array<std::size_t, 4> lengths() const {
    return {length(Stream::text), length(Stream::image), length(Stream::style), length(Stream::ref)};
  }
};

/// Additive attention bias over the concatenated [text; image; style; ref]
/// sequence. Built from segment lengths alone.
template <typename T>
struct StructuralMask {
  std::array<std::size_t, 4> lengths{};
  std::vector<T> bias;  // total x total, 0 or masked_bias<T>()

  std::size_t total() const { return lengths[0] + lengths[1] + lengths[2] + lengths[3]; }
  T at(std::size_t q, std::size_t k) const { return bias[q * total() + k]; }
  bool blocked(std::size_t q, std::size_t k) const { return at(q, k) != T(0); }
  std::size_t blocked_count() const {
    std::size_t n = 0;
    for (auto b : bias) n += b != T(0);
    return n;
  }
  Tensor<T> tensor() const { return Tensor<T>(Shape{total(), total()}, bias); }
};

/// Reference and style tokens may not attend to each other; every other
/// query/key pair is open.
template <typename T>
StructuralMask<T> build_structural_mask(std::size_t text_len, std::size_t image_len, std::size_t style_len,
                                        std::size_t ref_len) {
  StructuralMask<T> m;
  m.lengths = {text_len, image_len, style_len, ref_len};
  const auto n = m.total();
  m.bias.assign(n * n, T(0));
  const auto style_begin = text_len + image_len;
  const auto ref_begin = style_begin + style_len;
  for (std::size_t q = ref_begin; q < n; ++q)
    for (std::size_t k = style_begin; k < ref_begin; ++k) {
      m.bias[q * n + k] = masked_bias<T>();
      m.bias[k * n + q] = masked_bias<T>();
    }
  return m;
}

/// All-open bias, used by the "no mask" policy.
template <typename T>
StructuralMask<T> open_mask(std::size_t text_len, std::size_t image_len, std::size_t style_len, std::size_t ref_len) {
  StructuralMask<T> m;
  m.lengths = {text_len, image_len, style_len, ref_len};
  m.bias.assign(m.total() * m.total(), T(0));
  return m;
}

enum class MaskPolicy : std::uint8_t { none = 0, structural = 1 };

inline MaskPolicy parse_mask_policy(const std::string& s) {
  if (s == "none") return MaskPolicy::none;
  if (s == "structural") return MaskPolicy::structural;
  throw std::invalid_argument("unknown mask policy '" + s + "'");
}
inline const char* mask_policy_name(MaskPolicy p) { return p == MaskPolicy::none ? "none" : "structural"; }

template <typename T>
StructuralMask<T> make_mask(MaskPolicy policy, const std::array<std::size_t, 4>& len) {
  return policy == MaskPolicy::structural ? build_structural_mask<T>(len[0], len[1], len[2], len[3])
                                          : open_mask<T>(len[0], len[1], len[2], len[3]);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct Lora {
  Tensor<T> a;  // [d_in x r]
  Tensor<T> b;  // [r x d_out], zero at initialization
};

template <typename T>
struct BlockWeights {
  Tensor<T> wq, wk, wv, wo;  // [d x d]
  Tensor<T> fc1;             // [d x mlp_mult*d]
  Tensor<T> fc2;             // [mlp_mult*d x d]
  Tensor<T> norm1, norm2;    // [d]
  Tensor<T> mod;             // [d x 4d]: shift1, scale1, shift2, scale2
};

template <typename T>
struct BaseWeights {
  Tensor<T> patch_in;    // [patch_dim x d]
  Tensor<T> text_embed;  // [vocab x d]
  Tensor<T> time_fc1, time_fc2;
  std::vector<BlockWeights<T>> blocks;
  Tensor<T> final_norm;  // [d]
  Tensor<T> final_mod;   // [d x 2d]
  Tensor<T> patch_out;   // [d x patch_dim]
};

template <typename T>
struct BlockAdapters {
  Lora<T> q, k, v, o, fc1, fc2;
};

template <typename T>
struct BranchAdapters {
  Lora<T> in;
  std::vector<BlockAdapters<T>> blocks;
  std::optional<Lora<T>> out;  // main branch only
};

enum class ParamGroup : std::uint8_t { base = 0, ref = 1, style = 2, main = 3 };

inline ParamGroup group_of(Branch b) { return static_cast<ParamGroup>(static_cast<int>(b) + 1); }
inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::base: return "base";
    case ParamGroup::ref: return "ref";
    case ParamGroup::style: return "style";
    case ParamGroup::main: return "main";
  }
  return "?";
}

/// One frozen base shared by every branch, plus three adapter sets.
template <typename T>
struct BranchParams {
  ModelConfig config;
  BaseWeights<T> base;
  BranchAdapters<T> ref, style, main;

  BranchAdapters<T>& adapters(Branch b) { return b == Branch::ref ? ref : b == Branch::style ? style : main; }
  const BranchAdapters<T>& adapters(Branch b) const { return const_cast<BranchParams*>(this)->adapters(b); }

  T lora_scale() const { return T(1) / static_cast<T>(config.lora_rank); }

  using Visitor = std::function<void(const std::string&, const Tensor<T>&, ParamGroup)>;

  /// Visits every parameter in a fixed order with its archive name.
  void visit(const Visitor& fn) const {
    fn("base.patch_in", base.patch_in, ParamGroup::base);
    fn("base.text_embed", base.text_embed, ParamGroup::base);
    fn("base.time.fc1", base.time_fc1, ParamGroup::base);
    fn("base.time.fc2", base.time_fc2, ParamGroup::base);
    for (std::size_t l = 0; l < base.blocks.size(); ++l) {
      const auto p = "base.blocks." + std::to_string(l) + ".";
      const auto& b = base.blocks[l];
      fn(p + "wq", b.wq, ParamGroup::base);
      fn(p + "wk", b.wk, ParamGroup::base);
      fn(p + "wv", b.wv, ParamGroup::base);
      fn(p + "wo", b.wo, ParamGroup::base);
      fn(p + "fc1", b.fc1, ParamGroup::base);
      fn(p + "fc2", b.fc2, ParamGroup::base);
      fn(p + "norm1", b.norm1, ParamGroup::base);
      fn(p + "norm2", b.norm2, ParamGroup::base);
      fn(p + "mod", b.mod, ParamGroup::base);
    }
    fn("base.final.norm", base.final_norm, ParamGroup::base);
    fn("base.final.mod", base.final_mod, ParamGroup::base);
    fn("base.patch_out", base.patch_out, ParamGroup::base);
    for (auto br : kBranches) {
      const auto& ad = adapters(br);
      const auto g = group_of(br);
      const std::string p = branch_name(br);
      auto lora = [&](const std::string& name, const Lora<T>& l) {
        fn(name + ".a", l.a, g);
        fn(name + ".b", l.b, g);
      };
      lora(p + ".in", ad.in);
      for (std::size_t l = 0; l < ad.blocks.size(); ++l) {
        const auto q = p + ".blocks." + std::to_string(l) + ".";
        const auto& b = ad.blocks[l];
        lora(q + "q", b.q);
        lora(q + "k", b.k);
        lora(q + "v", b.v);
        lora(q + "o", b.o);
        lora(q + "fc1", b.fc1);
        lora(q + "fc2", b.fc2);
      }
      if (ad.out) lora(p + ".out", *ad.out);
    }
  }

  std::vector<Tensor<T>> group(ParamGroup g) const {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, const Tensor<T>& t, ParamGroup pg) {
      if (pg == g) out.push_back(t);
    });
    return out;
  }

  /// Fingerprint of one parameter group: names, shapes and exact bytes.
  std::uint64_t hash(ParamGroup g) const {
    Fnv1a h;
    visit([&](const std::string& name, const Tensor<T>& t, ParamGroup pg) {
      if (pg != g) return;
      h.update(name);
      for (auto e : t.shape()) h.update(&e, sizeof e);
      h.update_values(t.values());
    });
    return h.digest();
  }

  /// Marks exactly the adapters of `trainable` as requiring gradients.
  void set_trainable(const AdapterSet& trainable) const {
    visit([&](const std::string&, const Tensor<T>& t, ParamGroup g) {
      const bool on = g != ParamGroup::base && trainable.contains(static_cast<Branch>(static_cast<int>(g) - 1));
      t.set_requires_grad(on);
    });
  }

  /// Deep copy with fresh leaves, so the copy trains independently.
  BranchParams clone() const {
    BranchParams c = *this;
    c.for_each_mut([](Tensor<T>& t) { t = t.detached(t.requires_grad()); });
    return c;
  }

  void for_each_mut(const std::function<void(Tensor<T>&)>& fn) {
    fn(base.patch_in);
    fn(base.text_embed);
    fn(base.time_fc1);
    fn(base.time_fc2);
    for (auto& b : base.blocks)
      for (auto* t : {&b.wq, &b.wk, &b.wv, &b.wo, &b.fc1, &b.fc2, &b.norm1, &b.norm2, &b.mod}) fn(*t);
    fn(base.final_norm);
    fn(base.final_mod);
    fn(base.patch_out);
    for (auto br : kBranches) {
      auto& ad = adapters(br);
      fn(ad.in.a);
      fn(ad.in.b);
      for (auto& b : ad.blocks)
        for (auto* l : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) {
          fn(l->a);
          fn(l->b);
        }
      if (ad.out) {
        fn(ad.out->a);
        fn(ad.out->b);
      }
    }
  }
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  Fnv1a h;
  h.update(&seed, sizeof seed);
  h.update(tag);
  return h.digest();
}

template <typename T>
Tensor<T> normal_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(Shape{rows, cols}, std::move(v));
}

template <typename T>
Lora<T> init_lora(std::mt19937_64& rng, std::size_t din, std::size_t dout, std::size_t rank) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(din));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> a(din * rank);
  for (auto& x : a) x = static_cast<T>(dist(rng));
  return {Tensor<T>(Shape{din, rank}, std::move(a)), Tensor<T>::zeros(Shape{rank, dout})};
}

template <typename T>
BranchAdapters<T> init_adapters(const ModelConfig& c, std::uint64_t seed, Branch br) {
  std::mt19937_64 rng(derive_seed(seed, std::string("adapters.") + branch_name(br)));
  const auto d = c.d_model, h = c.d_model * c.mlp_mult, r = c.lora_rank;
  BranchAdapters<T> ad;
  ad.in = init_lora<T>(rng, c.patch_dim(), d, r);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    BlockAdapters<T> b;
    b.q = init_lora<T>(rng, d, d, r);
    b.k = init_lora<T>(rng, d, d, r);
    b.v = init_lora<T>(rng, d, d, r);
    b.o = init_lora<T>(rng, d, d, r);
    b.fc1 = init_lora<T>(rng, d, h, r);
    b.fc2 = init_lora<T>(rng, h, d, r);
    ad.blocks.push_back(std::move(b));
  }
  if (br == Branch::main) ad.out = init_lora<T>(rng, d, c.patch_dim(), r);
  return ad;
}

}  // namespace detail

/// Deterministic initialization. Adapters start at zero delta; the base is
/// only trained by the pretraining stage.
template <typename T>
BranchParams<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  BranchParams<T> p;
  p.config = c;
  std::mt19937_64 rng(detail::derive_seed(seed, "base"));
  const auto d = c.d_model, h = c.d_model * c.mlp_mult;
  auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  p.base.patch_in = detail::normal_matrix<T>(rng, c.patch_dim(), d, inv_sqrt(c.patch_dim()));
  p.base.text_embed = detail::normal_matrix<T>(rng, c.text_vocab, d, 1.0);
  p.base.time_fc1 = detail::normal_matrix<T>(rng, d, d, inv_sqrt(d));
  p.base.time_fc2 = detail::normal_matrix<T>(rng, d, d, inv_sqrt(d));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    BlockWeights<T> b;
    b.wq = detail::normal_matrix<T>(rng, d, d, inv_sqrt(d));
    b.wk = detail::normal_matrix<T>(rng, d, d, inv_sqrt(d));
    b.wv = detail::normal_matrix<T>(rng, d, d, inv_sqrt(d));
    b.wo = detail::normal_matrix<T>(rng, d, d, inv_sqrt(d));
    b.fc1 = detail::normal_matrix<T>(rng, d, h, inv_sqrt(d));
    b.fc2 = detail::normal_matrix<T>(rng, h, d, inv_sqrt(h));
    b.norm1 = Tensor<T>::filled(Shape{d}, T(1));
    b.norm2 = Tensor<T>::filled(Shape{d}, T(1));
    b.mod = detail::normal_matrix<T>(rng, d, 4 * d, 0.1 * inv_sqrt(d));
    p.base.blocks.push_back(std::move(b));
  }
  p.base.final_norm = Tensor<T>::filled(Shape{d}, T(1));
  p.base.final_mod = detail::normal_matrix<T>(rng, d, 2 * d, 0.1 * inv_sqrt(d));
  p.base.patch_out = detail::normal_matrix<T>(rng, d, c.patch_dim(), inv_sqrt(d));
  for (auto br : kBranches) p.adapters(br) = detail::init_adapters<T>(c, seed, br);
  return p;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline void put_config(Checkpoint& ck, const ModelConfig& c) {
  ck.put_scalar("meta.config.d_model", static_cast<double>(c.d_model));
  ck.put_scalar("meta.config.n_heads", static_cast<double>(c.n_heads));
  ck.put_scalar("meta.config.n_layers", static_cast<double>(c.n_layers));
  ck.put_scalar("meta.config.mlp_mult", static_cast<double>(c.mlp_mult));
  ck.put_scalar("meta.config.lora_rank", static_cast<double>(c.lora_rank));
  ck.put_scalar("meta.config.patch_size", static_cast<double>(c.patch_size));
  ck.put_scalar("meta.config.image_hw", static_cast<double>(c.image_hw));
  ck.put_scalar("meta.config.ref_hw", static_cast<double>(c.ref_hw));
  ck.put_scalar("meta.config.channels", static_cast<double>(c.channels));
  ck.put_scalar("meta.config.text_vocab", static_cast<double>(c.text_vocab));
  ck.put_scalar("meta.config.max_text_len", static_cast<double>(c.max_text_len));
}

inline ModelConfig get_config(const Checkpoint& ck) {
  auto g = [&](const char* k) { return static_cast<std::size_t>(ck.scalar(std::string("meta.config.") + k)); };
  ModelConfig c;
  c.d_model = g("d_model");
  c.n_heads = g("n_heads");
  c.n_layers = g("n_layers");
  c.mlp_mult = g("mlp_mult");
  c.lora_rank = g("lora_rank");
  c.patch_size = g("patch_size");
  c.image_hw = g("image_hw");
  c.ref_hw = g("ref_hw");
  c.channels = g("channels");
  c.text_vocab = g("text_vocab");
  c.max_text_len = g("max_text_len");
  c.validate();
  return c;
}

/// Parameters plus config, and the stream-segment lengths the model was
/// trained with, as named scalars.
template <typename T>
Checkpoint to_checkpoint(const BranchParams<T>& p, const std::array<std::size_t, 4>& segments) {
  Checkpoint ck;
  put_config(ck, p.config);
  for (auto s : kStreamOrder)
    ck.put_scalar(std::string("meta.segments.") + stream_name(s), static_cast<double>(segments[static_cast<int>(s)]));
  p.visit([&](const std::string& name, const Tensor<T>& t, ParamGroup) { ck.put(name, t); });
  return ck;
}

template <typename T>
BranchParams<T> from_checkpoint(const Checkpoint& ck) {
  auto p = init_params<T>(get_config(ck), 0);
  // Re-point every slot at the archived values, walking in visit() order.
  std::vector<std::string> names;
  p.visit([&](const std::string& name, const Tensor<T>&, ParamGroup) { names.push_back(name); });
  std::size_t i = 0;
  p.for_each_mut([&](Tensor<T>& t) {
    const auto& e = ck.at(names[i++]);
    if (e.shape != t.shape()) throw FormatError("shape mismatch for '" + e.name + "'");
    t = e.to<T>();
  });
  return p;
}

// ---------------------------------------------------------------------------
// Patches and positions
// ---------------------------------------------------------------------------

/// [H x W x C] image -> [(H/p * W/p) x (p*p*C)] tokens, grid row-major,
/// each token laid out (py, px, c).
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
  if (image.rank() != 3) throw ShapeError("patchify: expected [H x W x C], got " + shape_str(image.shape()));
  const auto h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (p == 0 || h % p != 0 || w % p != 0)
    throw ShapeError("patchify: " + shape_str(image.shape()) + " not divisible by patch " + std::to_string(p));
  const auto gh = h / p, gw = w / p, width = p * p * c;
  auto v = image.values();
  std::vector<T> out(gh * gw * width);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[(gy * gw + gx) * width + (py * p + px) * c + ch] = v[((gy * p + py) * w + gx * p + px) * c + ch];
  return Tensor<T>(Shape{gh * gw, width}, std::move(out));
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t h, std::size_t w, std::size_t c, std::size_t p) {
  if (p == 0 || h % p != 0 || w % p != 0) throw ShapeError("unpatchify: size not divisible by patch");
  const auto gh = h / p, gw = w / p, width = p * p * c;
  if (tokens.rank() != 2 || tokens.rows() != gh * gw || tokens.cols() != width)
    throw ShapeError("unpatchify: token shape " + shape_str(tokens.shape()) + " does not match image");
  auto v = tokens.values();
  std::vector<T> out(h * w * c);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t ch = 0; ch < c; ++ch)
            out[((gy * p + py) * w + gx * p + px) * c + ch] = v[(gy * gw + gx) * width + (py * p + px) * c + ch];
  return Tensor<T>(Shape{h, w, c}, std::move(out));
}

/// Three-axis position id: (sequence, row, column).
struct PositionId {
  std::size_t seq = 0, row = 0, col = 0;
};

/// Text: sequence positions. Image and style: the same 2-D patch grid.
/// Reference: a grid shifted past the image grid so the two never collide.
inline std::vector<PositionId> stream_positions(const ModelConfig& c, Stream s, std::size_t length) {
  std::vector<PositionId> ids(length);
  switch (s) {
    case Stream::text:
      for (std::size_t i = 0; i < length; ++i) ids[i] = {i + 1, 0, 0};
      break;
    case Stream::image:
    case Stream::style:
      for (std::size_t i = 0; i < length; ++i) ids[i] = {0, i / c.grid(), i % c.grid()};
      break;
    case Stream::ref: {
      const auto g = c.ref_grid(), off = c.grid();
      for (std::size_t i = 0; i < length; ++i) ids[i] = {0, off + i / g, off + i % g};
      break;
    }
  }
  return ids;
}

/// Fixed sinusoidal embedding, a third of the width per axis.
template <typename T>
Tensor<T> position_embedding(std::span<const PositionId> ids, std::size_t d) {
  const std::size_t axis = (d / 3) & ~std::size_t{1};
  std::vector<T> out(ids.size() * d, T(0));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t coord[3] = {ids[i].seq, ids[i].row, ids[i].col};
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t f = 0; f < axis / 2; ++f) {
        const double freq = std::pow(100.0, -static_cast<double>(2 * f) / static_cast<double>(axis));
        const double x = static_cast<double>(coord[a]) * freq;
        out[i * d + a * axis + 2 * f] = static_cast<T>(std::sin(x));
        out[i * d + a * axis + 2 * f + 1] = static_cast<T>(std::cos(x));
      }
  }
  return Tensor<T>(Shape{ids.size(), d}, std::move(out));
}

/// Sinusoidal features of t in [0, 1], width d.
template <typename T>
Tensor<T> timestep_features(double t, std::size_t d) {
  std::vector<T> out(d, T(0));
  const std::size_t half = d / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[2 * i] = static_cast<T>(std::cos(1000.0 * t * freq));
    out[2 * i + 1] = static_cast<T>(std::sin(1000.0 * t * freq));
  }
  return Tensor<T>(Shape{1, d}, std::move(out));
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> project(const Tensor<T>& x, const Tensor<T>& w, const Lora<T>* adapter, T scale) {
  if (adapter == nullptr) return matmul(x, w);
  return linear_lora(x, w, adapter->a, adapter->b, scale);
}

template <typename T>
const BlockAdapters<T>* block_adapters(const BranchParams<T>& p, Stream s, std::size_t layer,
                                       const AdapterSet& active) {
  const auto br = branch_of(s);
  if (!br || !active.contains(*br)) return nullptr;
  return &p.adapters(*br).blocks.at(layer);
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale_minus_one) {
  return add(mul(x, add_scalar(scale_minus_one, T(1))), shift);
}

}  // namespace detail

/// Timestep conditioning for one forward pass. The image and text streams see
/// the sampled t; the style and reference streams are clean context and see t=0.
template <typename T>
struct TimeConditioning {
  Tensor<T> noisy;  // [1 x d]
  Tensor<T> clean;  // [1 x d]

  const Tensor<T>& for_stream(Stream s) const {
    return (s == Stream::style || s == Stream::ref) ? clean : noisy;
  }
};

template <typename T>
Tensor<T> time_embedding(const BranchParams<T>& p, double t) {
  auto f = timestep_features<T>(t, p.config.d_model);
  return matmul(silu(matmul(f, p.base.time_fc1)), p.base.time_fc2);
}

template <typename T>
TimeConditioning<T> time_conditioning(const BranchParams<T>& p, double t) {
  return {time_embedding(p, t), time_embedding(p, 0.0)};
}

/// Shared self-attention over [text; image; style; ref]. Each stream's Q, K, V
/// come from the shared base weights plus that stream's adapter (if active).
/// Inputs are the already-normalized stream activations; outputs are the
/// per-stream slices of softmax(QK^T / sqrt(d_head) + M) V, before the output
/// projection.
template <typename T>
TokenStreams<T> joint_attention(const TokenStreams<T>& streams, const BranchParams<T>& params, std::size_t layer,
                                const StructuralMask<T>& mask, const AdapterSet& active) {
  const auto& c = params.config;
  const auto& w = params.base.blocks.at(layer);
  const T s = params.lora_scale();
  if (streams.lengths() != mask.lengths) throw ShapeError("joint_attention: mask segments do not match streams");
  std::vector<Tensor<T>> qs, ks, vs;
  for (auto st : kStreamOrder) {
    const auto& x = streams[st];
    if (!x.defined()) continue;
    if (x.rank() != 2 || x.cols() != c.d_model)
      throw ShapeError(std::string("joint_attention: ") + stream_name(st) + " stream width " + shape_str(x.shape()) +
                       " != d_model " + std::to_string(c.d_model));
    const auto* ad = detail::block_adapters(params, st, layer, active);
    qs.push_back(detail::project(x, w.wq, ad ? &ad->q : nullptr, s));
    ks.push_back(detail::project(x, w.wk, ad ? &ad->k : nullptr, s));
    vs.push_back(detail::project(x, w.wv, ad ? &ad->v : nullptr, s));
  }
  if (qs.empty()) throw ShapeError("joint_attention: no streams");
  const auto q = qs.size() == 1 ? qs[0] : concat_rows(qs);
  const auto k = ks.size() == 1 ? ks[0] : concat_rows(ks);
  const auto v = vs.size() == 1 ? vs[0] : concat_rows(vs);
  const auto o = multi_head_attention(q, k, v, mask.tensor(), c.n_heads);
  TokenStreams<T> out;
  std::size_t off = 0;
  for (auto st : kStreamOrder) {
    const auto n = streams.length(st);
    if (n == 0) continue;
    out[st] = slice_rows(o, off, n);
    off += n;
  }
  return out;
}

/// Pre-norm attention and MLP residual block with per-stream shift/scale
/// modulation.
template <typename T>
TokenStreams<T> forward_block(const TokenStreams<T>& streams, const BranchParams<T>& params, std::size_t layer,
                              const StructuralMask<T>& mask, const TimeConditioning<T>& time,
                              const AdapterSet& active) {
  const auto& c = params.config;
  const auto& w = params.base.blocks.at(layer);
  const auto d = c.d_model;
  const T s = params.lora_scale();
  auto mod_noisy = matmul(silu(time.noisy), w.mod);
  auto mod_clean = matmul(silu(time.clean), w.mod);
  auto piece = [&](const Tensor<T>& m, std::size_t i) { return reshape(slice_cols(m, i * d, d), Shape{d}); };
  struct Mod {
    Tensor<T> shift1, scale1, shift2, scale2;
  };
  const Mod noisy{piece(mod_noisy, 0), piece(mod_noisy, 1), piece(mod_noisy, 2), piece(mod_noisy, 3)};
  const Mod clean{piece(mod_clean, 0), piece(mod_clean, 1), piece(mod_clean, 2), piece(mod_clean, 3)};
  auto mod_for = [&](Stream st) -> const Mod& { return (st == Stream::style || st == Stream::ref) ? clean : noisy; };

  TokenStreams<T> normed;
  for (auto st : kStreamOrder) {
    if (!streams[st].defined()) continue;
    const auto& m = mod_for(st);
    normed[st] = detail::modulate(rms_norm(streams[st], w.norm1), m.shift1, m.scale1);
  }
  const auto attn = joint_attention(normed, params, layer, mask, active);
  TokenStreams<T> out;
  for (auto st : kStreamOrder) {
    if (!streams[st].defined()) continue;
    const auto* ad = detail::block_adapters(params, st, layer, active);
    auto x = add(streams[st], detail::project(attn[st], w.wo, ad ? &ad->o : nullptr, s));
    const auto& m = mod_for(st);
    auto h = detail::modulate(rms_norm(x, w.norm2), m.shift2, m.scale2);
    auto hidden = silu(detail::project(h, w.fc1, ad ? &ad->fc1 : nullptr, s));
    out[st] = add(x, detail::project(hidden, w.fc2, ad ? &ad->fc2 : nullptr, s));
  }
  return out;
}

/// Model inputs in patch space. Undefined tensors / empty text mean the
/// stream is absent.
template <typename T>
struct ModelInputs {
  Tensor<T> image;  // noisy image tokens [L_t x patch_dim]
  std::vector<std::size_t> text;
  Tensor<T> style;  // [L_s x patch_dim]
  Tensor<T> ref;    // [L_r x patch_dim]

  std::array<std::size_t, 4> lengths() const {
    return {text.size(), image.defined() ? image.rows() : 0, style.defined() ? style.rows() : 0,
            ref.defined() ? ref.rows() : 0};
  }
};

/// Embeds every present stream: patch projection (with the stream's input
/// adapter) or text lookup, plus fixed positions.
template <typename T>
TokenStreams<T> embed_streams(const ModelInputs<T>& in, const BranchParams<T>& params, const AdapterSet& active) {
  const auto& c = params.config;
  const T s = params.lora_scale();
  TokenStreams<T> z;
  auto embed_patches = [&](const Tensor<T>& patches, Stream st) {
    if (patches.rank() != 2 || patches.cols() != c.patch_dim())
      throw ShapeError(std::string(stream_name(st)) + " tokens must have width " + std::to_string(c.patch_dim()));
    const auto br = branch_of(st);
    const Lora<T>* ad = (br && active.contains(*br)) ? &params.adapters(*br).in : nullptr;
    auto pos = stream_positions(c, st, patches.rows());
    return add(detail::project(patches, params.base.patch_in, ad, s), position_embedding<T>(pos, c.d_model));
  };
  if (!in.text.empty()) {
    if (in.text.size() > c.max_text_len) throw ShapeError("text longer than max_text_len");
    for (auto id : in.text)
      if (id >= c.text_vocab) throw ShapeError("text token id out of vocabulary");
    auto pos = stream_positions(c, Stream::text, in.text.size());
    z.text = add(select_rows(params.base.text_embed, std::span<const std::size_t>(in.text)),
                 position_embedding<T>(pos, c.d_model));
  }
  if (in.image.defined()) z.image = embed_patches(in.image, Stream::image);
  if (in.style.defined()) z.style = embed_patches(in.style, Stream::style);
  if (in.ref.defined()) z.ref = embed_patches(in.ref, Stream::ref);
  return z;
}

/// Velocity prediction for the image stream, [L_t x patch_dim].
template <typename T>
Tensor<T> model_forward(const ModelInputs<T>& in, double t, const BranchParams<T>& params,
                        const StructuralMask<T>& mask, const AdapterSet& active) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("model_forward: t must lie in [0, 1]");
  if (!in.image.defined()) throw ShapeError("model_forward: image stream is required");
  const auto& c = params.config;
  auto z = embed_streams(in, params, active);
  const auto time = time_conditioning(params, t);
  for (std::size_t l = 0; l < c.n_layers; ++l) z = forward_block(z, params, l, mask, time, active);
  auto mod = matmul(silu(time.noisy), params.base.final_mod);
  auto shift = reshape(slice_cols(mod, 0, c.d_model), Shape{c.d_model});
  auto scl = reshape(slice_cols(mod, c.d_model, c.d_model), Shape{c.d_model});
  auto h = detail::modulate(rms_norm(z.image, params.base.final_norm), shift, scl);
  const Lora<T>* out = active.contains(Branch::main) && params.main.out ? &*params.main.out : nullptr;
  return detail::project(h, params.base.patch_out, out, params.lora_scale());
}

}  // namespace stylecomp
