// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Manifest-level orchestration shared by the command-line tool and the
// acceptance run: building stage examples from a dataset on disk, training
// one stage, and initializing stage 3 for each ablation variant.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stylecomp/checkpoint.hpp"
#include "stylecomp/synth.hpp"
#include "stylecomp/training.hpp"

namespace stylecomp {

template <typename T>
struct StageData {
  std::vector<TrainExample<T>> train, heldout;
  std::vector<std::string> skipped;
};

inline bool rejected_record(const SampleRecord& r) { return r.verdict.rfind("rejected", 0) == 0; }

/// Training examples from records of `train_split`, held-out examples from
/// `heldout_split` (at most `heldout_max`). Records a filter rejected are
/// ignored.
template <typename T>
StageData<T> stage_data(const Manifest& m, const StageSpec& spec, const ModelConfig& c, std::size_t heldout_max,
                        const std::string& train_split = "train", const std::string& heldout_split = "val") {
  StageData<T> out;
  for (const auto& r : m.records) {
    if (rejected_record(r)) continue;
    const bool is_train = r.split == train_split;
    const bool is_heldout = r.split == heldout_split && out.heldout.size() < heldout_max;
    if (!is_train && !is_heldout) continue;
    const auto l = load_sample(m, r);
    auto& dst = is_train ? out.train : out.heldout;
    auto add = [&](const ExampleImages& im) {
      std::string why;
      if (auto ex = make_example<T>(spec, c, im, &why))
        dst.push_back(std::move(*ex));
      else
        out.skipped.push_back(why);
    };
    if (spec.source == DataSource::scenes) {
      add({r.id + ":c", nullptr, &l.c, nullptr, nullptr});
      add({r.id + ":s", nullptr, nullptr, &l.s, nullptr});
    } else {
      add({r.id, &l.f, &l.c, &l.s, &l.m});
    }
  }
  if (out.heldout.size() > heldout_max) out.heldout.resize(heldout_max);
  return out;
}

template <typename T>
struct StageRun {
  BranchParams<T> params;
  StageReport report;
  Checkpoint checkpoint;
};

/// Trains one stage from `init` on a manifest and packages the result.
template <typename T>
StageRun<T> train_on_manifest(const BranchParams<T>& init, const StageSpec& spec, const TrainOptions& opt,
                              const Manifest& m, const ProgressFn& progress = {}) {
  auto data = stage_data<T>(m, spec, init.config, opt.heldout);
  if (data.train.empty()) throw TrainingError(spec.name + ": manifest has no usable training records");
  StageRun<T> run{init.clone(), {}, {}};
  run.report = run_stage(run.params, spec, opt, data.train, data.heldout, progress);
  run.report.skipped = data.skipped;
  run.checkpoint = stage_checkpoint(run.params, spec, run.report, opt.seed);
  return run;
}

/// Stage-3 initialization for a variant. `subject` and `style` are the
/// stage-1 and stage-2 checkpoints the variant needs (others may be null).
template <typename T>
BranchParams<T> variant_init(Variant v, const BranchParams<T>& base, const Checkpoint* subject,
                             const Checkpoint* style, std::uint64_t seed) {
  const bool need1 = v == Variant::full || v == Variant::no_mask || v == Variant::no_style;
  const bool need2 = v == Variant::full || v == Variant::no_mask || v == Variant::no_subject;
  if (need1 && subject == nullptr) throw TrainingError(std::string(variant_name(v)) + " needs a stage-1 checkpoint");
  if (need2 && style == nullptr) throw TrainingError(std::string(variant_name(v)) + " needs a stage-2 checkpoint");
  return assemble_from(base, need1 ? subject : nullptr, need2 ? style : nullptr, sub_seed(seed, "main"));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Manifest with file paths re-expressed relative to `dir`.
inline Manifest rebase(const Manifest& m, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  Manifest out = m;
  out.dir = dir;
  const auto target = fs::weakly_canonical(dir);
  for (auto& r : out.records)
    for (auto* p : {&r.f, &r.c, &r.m, &r.s, &r.b})
      if (!p->empty()) *p = fs::relative(fs::weakly_canonical(m.dir / *p), target).generic_string();
  return out;
}

inline std::string loss_csv(const StageReport& r) {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < r.losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, r.losses[i]);
    out += buf;
  }
  return out;
}

}  // namespace stylecomp
