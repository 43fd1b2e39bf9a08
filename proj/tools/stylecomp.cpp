// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// stylecomp: data generation, filtering, staged training, composition and
// evaluation from one binary.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stylecomp/compose.hpp"
#include "stylecomp/config.hpp"
#include "stylecomp/curation.hpp"
#include "stylecomp/eval.hpp"
#include "stylecomp/pipeline.hpp"
#include "stylecomp/synth.hpp"
#include "stylecomp/training.hpp"

namespace fs = std::filesystem;
using namespace stylecomp;
using Real = float;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed for all randomness (falls back to MC_SEED)");
  cmd->add_option("--config", c.config_path, "Key-value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Config override key=value (repeatable)");
}

/// File config, then --set overrides, then the seed: --seed, MC_SEED, the
/// config's `seed`, or `fallback`.
Config resolve(const Common& c, const std::string& command, std::uint64_t fallback_seed) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::uint64_t seed = fallback_seed;
  if (c.seed) {
    seed = *c.seed;
  } else if (const char* env = std::getenv("MC_SEED"); env != nullptr && *env != '\0') {
    Config e;
    e.set("MC_SEED", std::string(env));
    seed = e.u64("MC_SEED");
  } else if (cfg.has("seed")) {
    seed = cfg.u64("seed");
  }
  cfg.set("seed", seed);
  cfg.set("command", command);
  cfg.set("tool_version", std::string(kVersion));
  return cfg;
}

/// Provenance: the resolved config next to the outputs.
void write_provenance(const fs::path& dir, const Config& cfg) {
  fs::create_directories(dir);
  write_text(dir / "run.cfg", cfg.dump());
}

fs::path make_out_dir(const std::string& out) {
  fs::path p(out);
  fs::create_directories(p);
  return p;
}

Manifest load_manifest(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("manifest '" + path + "' does not exist");
  return Manifest::load(path);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& co, const std::string& out, std::optional<std::size_t> count,
                 std::optional<double> rate) {
  auto cfg = resolve(co, "gen-data", 7);
  if (count) cfg.set("data.count", *count);
  if (rate) cfg.set("data.corruption_rate", *rate);
  DataConfig dc;
  dc.count = cfg.size("data.count", dc.count);
  dc.corruption_rate = cfg.real("data.corruption_rate", dc.corruption_rate);
  dc.n_styles = cfg.size("data.styles", dc.n_styles);
  dc.image_size = cfg.size("data.image_size", dc.image_size);
  dc.object_size = cfg.size("data.object_size", dc.object_size);
  dc.min_place = cfg.size("data.min_place", dc.min_place);
  dc.max_place = cfg.size("data.max_place", dc.max_place);
  dc.seed = cfg.u64("seed");
  cfg.set("data.count", dc.count);
  cfg.set("data.corruption_rate", dc.corruption_rate);
  cfg.set("data.styles", dc.n_styles);
  cfg.set("data.image_size", dc.image_size);
  cfg.set("data.object_size", dc.object_size);
  cfg.set("data.min_place", dc.min_place);
  cfg.set("data.max_place", dc.max_place);
  if (!(dc.corruption_rate >= 0.0 && dc.corruption_rate <= 1.0))
    throw UsageError("data.corruption_rate must lie in [0, 1]");
  const auto dir = make_out_dir(out);
  const auto m = build_dataset(dc, dir);
  write_provenance(dir, cfg);
  std::cout << "wrote " << m.records.size() << " samples to " << (dir / "manifest.jsonl").string() << "\n";
  return 0;
}

int cmd_calibrate(const Common& co, const std::string& manifest, double cap, const std::string& out) {
  auto cfg = resolve(co, "calibrate", 0);
  cfg.set("calibrate.manifest", manifest);
  cfg.set("calibrate.rejection_cap", cap);
  auto m = load_manifest(manifest);
  const auto t = calibrate_manifest(m, cap);
  const auto dir = make_out_dir(out);
  write_text(dir / "thresholds.json", thresholds_json(t).dump(2) + "\n");
  rebase(m, dir).save(dir / "scored.jsonl");
  write_provenance(dir, cfg);
  std::printf("clip > %.6f  dino > %.6f  csd > %.6f\n", t.clip, t.dino, t.csd);
  return 0;
}

int cmd_filter(const Common& co, const std::string& manifest, const std::string& thresholds, const std::string& out) {
  auto cfg = resolve(co, "filter", 0);
  cfg.set("filter.manifest", manifest);
  cfg.set("filter.thresholds", thresholds);
  const auto m = load_manifest(manifest);
  std::ifstream is(thresholds);
  if (!is) throw std::runtime_error("cannot open thresholds '" + thresholds + "'");
  const auto t = thresholds_from_json(nlohmann::ordered_json::parse(is));
  const auto r = filter_dataset(m, t);
  const auto dir = make_out_dir(out);
  rebase(r.accepted, dir).save(dir / "accepted.jsonl");
  rebase(r.rejected, dir).save(dir / "rejected.jsonl");
  write_provenance(dir, cfg);
  std::cout << "accepted " << r.accepted.records.size() << ", rejected " << r.rejected.records.size() << "\n";
  return 0;
}

struct TrainArgs {
  int stage = -1;
  std::string data, out, base, ckpt1, ckpt2, variant = "full";
  std::optional<std::size_t> steps;
  std::optional<double> lr;
};

int cmd_train(const Common& co, const TrainArgs& a) {
  auto cfg = resolve(co, "train", 0);
  const auto seed = cfg.u64("seed");
  const auto scoped = "train.stage" + std::to_string(a.stage) + ".";
  if (a.steps) cfg.set(scoped + "steps", *a.steps);
  if (a.lr) cfg.set(scoped + "lr", *a.lr);
  cfg.set("train.stage", a.stage);
  cfg.set("train.data", a.data);
  const auto v = parse_variant(a.variant);
  if (a.stage == 3) {
    const bool need1 = v == Variant::full || v == Variant::no_mask || v == Variant::no_style;
    const bool need2 = v == Variant::full || v == Variant::no_mask || v == Variant::no_subject;
    if ((need1 && a.ckpt1.empty()) || (need2 && a.ckpt2.empty()))
      throw UsageError(std::string("train --stage 3 (variant ") + variant_name(v) + ") requires" +
                       (need1 ? " --ckpt1" : "") + (need1 && need2 ? " and" : "") + (need2 ? " --ckpt2" : ""));
    if (v == Variant::naive_e2e && a.base.empty()) throw UsageError("train --stage 3 --variant naive-e2e requires --base");
    cfg.set("train.variant", variant_name(v));
  } else if (a.variant != "full") {
    throw UsageError("--variant only applies to --stage 3");
  }
  std::optional<Checkpoint> ck1, ck2;
  if (!a.ckpt1.empty()) ck1 = Checkpoint::load(a.ckpt1), cfg.set("train.ckpt1", a.ckpt1);
  if (!a.ckpt2.empty()) ck2 = Checkpoint::load(a.ckpt2), cfg.set("train.ckpt2", a.ckpt2);
  BranchParams<Real> init;
  if (!a.base.empty()) {
    init = from_checkpoint<Real>(Checkpoint::load(a.base));
    cfg.set("train.base", a.base);
  } else if (ck1) {
    init = from_checkpoint<Real>(*ck1);
  } else if (ck2) {
    init = from_checkpoint<Real>(*ck2);
  } else {
    init = init_params<Real>(model_config(cfg), sub_seed(seed, "init"));
  }
  put_model_config(cfg, init.config);
  StageSpec spec;
  switch (a.stage) {
    case 0: spec = StageSpec::pretrain(); break;
    case 1: spec = StageSpec::stage1(); break;
    case 2: spec = StageSpec::stage2(); break;
    case 3:
      spec = variant_plan(v).back();
      init = variant_init(v, init, ck1 ? &*ck1 : nullptr, ck2 ? &*ck2 : nullptr, seed);
      break;
    default: throw UsageError("--stage must be 0, 1, 2 or 3");
  }
  const auto opt = train_options(cfg, seed, a.stage);
  put_train_options(cfg, opt, a.stage);
  const auto m = load_manifest(a.data);
  const auto dir = make_out_dir(a.out);
  auto run = train_on_manifest(init, spec, opt, m, [&](std::size_t step, double loss) {
    if (step % 100 == 0 || step == opt.steps) std::fprintf(stderr, "%s step %zu loss %.5f\n", spec.name.c_str(), step, loss);
  });
  if (a.stage == 3) run.checkpoint.put_scalar("meta.variant", static_cast<double>(v));
  run.checkpoint.save((dir / "model.ckpt").string());
  write_text(dir / "loss.csv", loss_csv(run.report));
  nlohmann::ordered_json rep{{"stage", spec.name},
                             {"steps", run.report.steps},
                             {"train_examples", run.report.train_examples},
                             {"heldout_examples", run.report.heldout_examples},
                             {"heldout_initial", run.report.heldout_initial},
                             {"heldout_final", run.report.heldout_final},
                             {"skipped", run.report.skipped}};
  write_text(dir / "report.json", rep.dump(2) + "\n");
  write_provenance(dir, cfg);
  for (const auto& s : run.report.skipped) std::fprintf(stderr, "warning: skipped %s\n", s.c_str());
  std::printf("%s: held-out loss %.5f -> %.5f\n", spec.name.c_str(), run.report.heldout_initial,
              run.report.heldout_final);
  return 0;
}

/// Inference spec stored with a stage-3 checkpoint.
StageSpec inference_spec(const Checkpoint& ck) {
  if (checkpoint_stage(ck) != 3) throw std::runtime_error("compose needs a stage-3 checkpoint");
  const auto v = static_cast<Variant>(static_cast<int>(ck.scalar_or("meta.variant").value_or(4)));
  return variant_plan(v).back();
}

int cmd_compose(const Common& co, const std::string& ckpt, const std::string& ref, const std::string& bg,
                const std::string& mask, const std::string& out, std::size_t steps) {
  auto cfg = resolve(co, "compose", 0);
  cfg.set("compose.ckpt", ckpt);
  cfg.set("compose.reference", ref);
  cfg.set("compose.background", bg);
  cfg.set("compose.mask", mask);
  cfg.set("compose.steps", steps);
  const auto ck = Checkpoint::load(ckpt);
  const ModelCompositor<Real> model(from_checkpoint<Real>(ck), inference_spec(ck), steps, cfg.u64("seed"));
  const auto r = read_png(ref), b = read_png(bg);
  const auto m = read_mask(mask);
  if (!b.same_size(m)) throw std::runtime_error("mask and background differ in size");
  const auto img = model(CompositionInput{fs::path(out).stem().string(), r, b, m, nullptr});
  const auto path = fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_png(path.string(), img);
  write_provenance(path.has_parent_path() ? path.parent_path() : fs::path("."), cfg);
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_evaluate(const Common& co, const std::string& manifest, const std::vector<std::string>& methods,
                 const std::string& out, std::size_t steps, const std::string& format, std::optional<std::string> split,
                 std::optional<std::size_t> limit, double pixel_threshold, double gate) {
  auto cfg = resolve(co, "evaluate", 0);
  cfg.set("eval.manifest", manifest);
  cfg.set("eval.steps", steps);
  cfg.set("eval.pixel_threshold", pixel_threshold);
  cfg.set("eval.gate", gate);
  if (split) cfg.set("eval.split", *split);
  if (limit) cfg.set("eval.limit", *limit);
  std::string mlist;
  for (const auto& m : methods) mlist += (mlist.empty() ? "" : ",") + m;
  cfg.set("eval.methods", mlist);
  auto m = load_manifest(manifest);
  if (split) std::erase_if(m.records, [&](const SampleRecord& r) { return r.split != *split; });
  if (limit && m.records.size() > *limit) m.records.resize(*limit);
  if (m.records.empty()) throw std::runtime_error("no records to evaluate");
  std::vector<Method> ms;
  for (const auto& spec : methods) {
    if (spec == "copy-paste") {
      ms.push_back({spec, copy_paste});
    } else if (spec == "oracle") {
      ms.push_back({spec, oracle_composite});
    } else if (const auto eq = spec.find('='); eq != std::string::npos && eq > 0) {
      const auto ck = Checkpoint::load(spec.substr(eq + 1));
      ms.push_back({spec.substr(0, eq),
                    ModelCompositor<Real>(from_checkpoint<Real>(ck), inference_spec(ck), steps, cfg.u64("seed")).fn()});
    } else {
      throw UsageError("unknown method '" + spec + "' (expected copy-paste, oracle or NAME=CKPT)");
    }
  }
  EvalOptions eo;
  eo.pixel_threshold = pixel_threshold;
  eo.gate = gate;
  const auto rep = run_benchmark(load_bench_samples(m), ms, eo);
  const auto dir = make_out_dir(out);
  if (format == "table" || format == "both") write_text(dir / "report.txt", rep.table());
  if (format == "jsonl" || format == "both") write_text(dir / "report.jsonl", rep.jsonl());
  write_provenance(dir, cfg);
  std::cout << rep.table();
  return 0;
}

/// Writes one config per stage and the command sequence that reproduces a
/// variant.
int cmd_ablate(const Common& co, const std::string& variant, const std::string& data, const std::string& out) {
  auto cfg = resolve(co, "ablate", 0);
  const auto v = parse_variant(variant);
  cfg.set("ablate.variant", variant_name(v));
  cfg.set("ablate.label", variant_label(v));
  const auto dir = make_out_dir(out);
  const auto seed = cfg.u64("seed");
  std::string script = "#!/bin/sh\n# " + std::string(variant_label(v)) + "\nset -e\n";
  const std::string d = data.empty() ? "DATA/accepted.jsonl" : data;
  const std::string tool = "stylecomp";
  std::string ck1, ck2;
  Config c0 = cfg;
  c0.set("command", "train");
  c0.set("train.stage", 0);
  write_text(dir / "stage0.cfg", c0.dump());
  script += tool + " train --stage 0 --config " + (dir / "stage0.cfg").string() + " --data " + d + " --out " +
            (dir / "stage0").string() + " --seed " + std::to_string(seed) + "\n";
  const auto base = (dir / "stage0" / "model.ckpt").string();
  for (const auto& s : variant_plan(v)) {
    Config c = cfg;
    c.set("command", "train");
    c.set("train.stage", s.stage);
    c.set("train.mask_policy", mask_policy_name(s.mask));
    const auto name = "stage" + std::to_string(s.stage);
    write_text(dir / (name + ".cfg"), c.dump());
    script += tool + " train --stage " + std::to_string(s.stage) + " --config " + (dir / (name + ".cfg")).string() +
              " --data " + d + " --out " + (dir / name).string() + " --seed " + std::to_string(seed);
    if (s.stage == 3) {
      script += std::string(" --variant ") + variant_name(v);
      if (!ck1.empty()) script += " --ckpt1 " + ck1;
      if (!ck2.empty()) script += " --ckpt2 " + ck2;
      if (v == Variant::naive_e2e) script += " --base " + base;
    } else {
      script += " --base " + base;
    }
    script += "\n";
    if (s.stage == 1) ck1 = (dir / "stage1" / "model.ckpt").string();
    if (s.stage == 2) ck2 = (dir / "stage2" / "model.ckpt").string();
  }
  write_text(dir / "commands.sh", script);
  fs::permissions(dir / "commands.sh", fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec,
                  fs::perm_options::add);
  write_provenance(dir, cfg);
  std::cout << variant_label(v) << ": " << (dir / "commands.sh").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stylecomp: style-consistent object insertion on synthetic scenes"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1, 1);
  Common co;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and manifest");
  std::string gen_out;
  std::optional<std::size_t> gen_count;
  std::optional<double> gen_rate;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Number of samples");
  gen->add_option("--corruption-rate", gen_rate, "Fraction of planted bad samples");
  add_common(gen, co);

  auto* cal = app.add_subcommand("calibrate", "Calibrate filter thresholds on a labeled manifest");
  std::string cal_manifest, cal_out;
  double cap = 0;
  cal->add_option("--manifest", cal_manifest, "Labeled manifest")->required();
  cal->add_option("--rejection-cap", cap, "Maximum fraction rejected")->required()->check(CLI::Range(0.0, 1.0));
  cal->add_option("--out", cal_out, "Output directory")->required();
  add_common(cal, co);

  auto* fil = app.add_subcommand("filter", "Split a manifest into accepted and rejected records");
  std::string fil_manifest, fil_thr, fil_out;
  fil->add_option("--manifest", fil_manifest, "Manifest to filter")->required();
  fil->add_option("--thresholds", fil_thr, "thresholds.json from calibrate")->required();
  fil->add_option("--out", fil_out, "Output directory")->required();
  add_common(fil, co);

  auto* tr = app.add_subcommand("train", "Train one stage");
  TrainArgs ta;
  tr->add_option("--stage", ta.stage, "0 (backbone), 1, 2 or 3")->required()->check(CLI::Range(0, 3));
  tr->add_option("--data", ta.data, "Training manifest")->required();
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--base", ta.base, "Backbone checkpoint (stage 0 output)");
  tr->add_option("--ckpt1", ta.ckpt1, "Stage-1 checkpoint");
  tr->add_option("--ckpt2", ta.ckpt2, "Stage-2 checkpoint");
  tr->add_option("--variant", ta.variant, "Stage-3 variant: naive-e2e, no-subject, no-style, no-mask, full");
  tr->add_option("--steps", ta.steps, "Optimizer updates");
  tr->add_option("--lr", ta.lr, "Learning rate");
  add_common(tr, co);

  auto* cmp = app.add_subcommand("compose", "Insert a reference object into a background");
  std::string c_ckpt, c_ref, c_bg, c_mask, c_out;
  std::size_t c_steps = 20;
  cmp->add_option("--ckpt", c_ckpt, "Stage-3 checkpoint")->required();
  cmp->add_option("--reference", c_ref, "Reference object image")->required();
  cmp->add_option("--background", c_bg, "Background image")->required();
  cmp->add_option("--mask", c_mask, "Placement mask")->required();
  cmp->add_option("--out", c_out, "Output PNG")->required();
  cmp->add_option("--steps", c_steps, "Sampling steps")->check(CLI::PositiveNumber);
  add_common(cmp, co);

  auto* ev = app.add_subcommand("evaluate", "Benchmark compositors on a manifest");
  std::string e_manifest, e_out, e_format = "both";
  std::vector<std::string> e_methods;
  std::size_t e_steps = 20;
  std::optional<std::string> e_split;
  std::optional<std::size_t> e_limit;
  double e_thr = 8.0 / 255.0, e_gate = 0.20;
  ev->add_option("--manifest", e_manifest, "Benchmark manifest")->required();
  ev->add_option("--method", e_methods, "copy-paste, oracle or NAME=CKPT (repeatable)")->required();
  ev->add_option("--out", e_out, "Output directory")->required();
  ev->add_option("--steps", e_steps, "Sampling steps for model methods")->check(CLI::PositiveNumber);
  ev->add_option("--format", e_format, "table, jsonl or both")->check(CLI::IsMember({"table", "jsonl", "both"}));
  ev->add_option("--split", e_split, "Only records of this split");
  ev->add_option("--limit", e_limit, "At most this many records");
  ev->add_option("--pixel-threshold", e_thr, "Edit detection threshold, fraction of 255")->check(CLI::Range(0.0, 1.0));
  ev->add_option("--gate", e_gate, "Minimum edit fraction for style and aesthetics")->check(CLI::Range(0.0, 1.0));
  add_common(ev, co);

  auto* ab = app.add_subcommand("ablate", "Write the configs and commands of one ablation variant");
  std::string a_variant, a_data, a_out;
  ab->add_option("--variant", a_variant, "naive-e2e, no-subject, no-style, no-mask or full")
      ->required()
      ->check(CLI::IsMember({"naive-e2e", "no-subject", "no-style", "no-mask", "full"}));
  ab->add_option("--data", a_data, "Training manifest used in the generated commands");
  ab->add_option("--out", a_out, "Output directory")->required();
  add_common(ab, co);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "stylecomp: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(co, gen_out, gen_count, gen_rate);
    if (*cal) return cmd_calibrate(co, cal_manifest, cap, cal_out);
    if (*fil) return cmd_filter(co, fil_manifest, fil_thr, fil_out);
    if (*tr) return cmd_train(co, ta);
    if (*cmp) return cmd_compose(co, c_ckpt, c_ref, c_bg, c_mask, c_out, c_steps);
    if (*ev) return cmd_evaluate(co, e_manifest, e_methods, e_out, e_steps, e_format, e_split, e_limit, e_thr, e_gate);
    if (*ab) return cmd_ablate(co, a_variant, a_data, a_out);
  } catch (const UsageError& e) {
    std::cerr << "stylecomp: usage: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "stylecomp: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
