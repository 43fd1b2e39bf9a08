// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Slow, direct reference implementations for cross-checking the fast paths:
// the attention mask by per-pair rule lookup, threshold calibration by
// exhaustive search, and the transformer as plain attention over one
// concatenated sequence.

#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "stylecomp/curation.hpp"
#include "stylecomp/model.hpp"

namespace stylecomp::reference {

/// Stream owning position i of the concatenated [text; image; style; ref]
/// sequence.
inline Stream stream_at(const std::array<std::size_t, 4>& len, std::size_t i) {
  std::size_t end = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    end += len[s];
    if (i < end) return kStreamOrder[s];
  }
  throw std::out_of_range("stream_at: position past the sequence");
}

/// Rule table: may a query of stream q attend to a key of stream k?
inline bool allowed(Stream q, Stream k) {
  const bool q_ctx = q == Stream::style || q == Stream::ref;
  const bool k_ctx = k == Stream::style || k == Stream::ref;
  return !(q_ctx && k_ctx && q != k);
}

/// Row-major blocked flags, one per (query, key) pair.
inline std::vector<bool> blocked_pairs(const std::array<std::size_t, 4>& len) {
  const auto n = len[0] + len[1] + len[2] + len[3];
  std::vector<bool> out(n * n);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t k = 0; k < n; ++k) out[q * n + k] = !allowed(stream_at(len, q), stream_at(len, k));
  return out;
}

struct SearchResult {
  double interval_lo = 0, interval_hi = 0;
  std::size_t accepted = 0, accepted_good = 0, rejected = 0;
  double precision = 0, rejection = 0;
};

/// Tries "reject nothing" and "reject every score <= s" for every observed
/// score s, counting from scratch each time. Highest precision wins, then
/// fewer rejections.
inline SearchResult exhaustive_calibration(const std::vector<LabeledScore>& data, double cap) {
  std::vector<double> cuts{-std::numeric_limits<double>::infinity()};
  for (const auto& d : data) cuts.push_back(d.score);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  const auto n = data.size();
  bool have = false;
  SearchResult best;
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    std::size_t acc = 0, acc_good = 0;
    for (const auto& d : data)
      if (d.score > cuts[i]) ++acc, acc_good += d.good;
    const auto rej = n - acc;
    if (acc == 0 || static_cast<double>(rej) > cap * static_cast<double>(n)) continue;
    bool better = !have;
    if (have) {
      const auto l = static_cast<unsigned __int128>(acc_good) * best.accepted;
      const auto r = static_cast<unsigned __int128>(best.accepted_good) * acc;
      better = l > r || (l == r && rej < best.rejected);
    }
    if (!better) continue;
    have = true;
    best.interval_lo = cuts[i];
    best.interval_hi = i + 1 < cuts.size() ? cuts[i + 1] : std::numeric_limits<double>::infinity();
    best.accepted = acc;
    best.accepted_good = acc_good;
    best.rejected = rej;
  }
  if (!have) throw CurationError("exhaustive_calibration: no feasible threshold");
  best.precision = static_cast<double>(best.accepted_good) / static_cast<double>(best.accepted);
  best.rejection = static_cast<double>(best.rejected) / static_cast<double>(n);
  return best;
}

/// The backbone written as one unmasked transformer over the concatenated
/// sequence, with a per-token modulation table. Ignores adapters entirely,
/// so it matches model_forward exactly when every adapter delta is zero.
template <typename T>
Tensor<T> unified_forward(const ModelInputs<T>& in, double t, const BranchParams<T>& p) {
  const auto& c = p.config;
  const auto d = c.d_model;
  const auto len = in.lengths();
  std::vector<Tensor<T>> parts;
  if (!in.text.empty())
    parts.push_back(add(select_rows(p.base.text_embed, std::span<const std::size_t>(in.text)),
                        position_embedding<T>(stream_positions(c, Stream::text, in.text.size()), d)));
  for (auto [st, x] : {std::pair{Stream::image, &in.image}, {Stream::style, &in.style}, {Stream::ref, &in.ref}})
    if (x->defined())
      parts.push_back(add(matmul(*x, p.base.patch_in), position_embedding<T>(stream_positions(c, st, x->rows()), d)));
  auto x = concat_rows(parts);
  const auto n = x.rows();

  auto temb = [&](double tt) { return matmul(silu(matmul(timestep_features<T>(tt, d), p.base.time_fc1)), p.base.time_fc2); };
  const auto e_noisy = silu(temb(t)), e_clean = silu(temb(0.0));
  // One [n x width] row per token: the noisy or clean conditioning vector.
  std::vector<Tensor<T>> cond_rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = stream_at(len, i);
    cond_rows.push_back(s == Stream::style || s == Stream::ref ? e_clean : e_noisy);
  }
  const auto cond = concat_rows(cond_rows);
  const auto zero_bias = Tensor<T>::zeros(Shape{n, n});

  for (const auto& w : p.base.blocks) {
    const auto m = matmul(cond, w.mod);  // [n x 4d]
    auto col = [&](std::size_t i) { return slice_cols(m, i * d, d); };
    auto h = add(mul(rms_norm(x, w.norm1), add_scalar(col(1), T(1))), col(0));
    const auto a = multi_head_attention(matmul(h, w.wq), matmul(h, w.wk), matmul(h, w.wv), zero_bias, c.n_heads);
    x = add(x, matmul(a, w.wo));
    h = add(mul(rms_norm(x, w.norm2), add_scalar(col(3), T(1))), col(2));
    x = add(x, matmul(silu(matmul(h, w.fc1)), w.fc2));
  }
  const auto img = slice_rows(x, len[0], len[1]);
  const auto fm = matmul(concat_rows(std::vector<Tensor<T>>(len[1], e_noisy)), p.base.final_mod);
  const auto h = add(mul(rms_norm(img, p.base.final_norm), add_scalar(slice_cols(fm, d, d), T(1))), slice_cols(fm, 0, d));
  return matmul(h, p.base.patch_out);
}

}  // namespace stylecomp::reference
