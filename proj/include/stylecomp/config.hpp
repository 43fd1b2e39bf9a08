// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Plain key = value configuration. Lines starting with '#' are comments.
// Later assignments win, so a file can be layered with command-line
// overrides.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "stylecomp/model.hpp"
#include "stylecomp/training.hpp"

#ifndef STYLECOMP_VERSION
#define STYLECOMP_VERSION "0.0.0"
#endif

namespace stylecomp {

inline constexpr const char* kVersion = STYLECOMP_VERSION;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
      ++n;
      const auto s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
      const auto key = trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
      c.values_[key] = trim(s.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  template <typename V>
  void set(const std::string& key, V value) {
    std::ostringstream ss;
    ss.precision(17);
    ss << value;
    values_[key] = ss.str();
  }
  /// Sets `key` only when absent.
  template <typename V>
  void set_default(const std::string& key, V value) {
    if (!has(key)) set(key, value);
  }

  /// Overlays every key of `other`.
  void merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }
  std::string str(const std::string& key, const std::string& fallback) const { return has(key) ? str(key) : fallback; }

  std::uint64_t u64(const std::string& key) const { return number<std::uint64_t>(key); }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) const { return has(key) ? u64(key) : fallback; }
  std::size_t size(const std::string& key, std::size_t fallback) const {
    return has(key) ? static_cast<std::size_t>(u64(key)) : fallback;
  }

  double real(const std::string& key) const {
    const auto s = str(key);
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
    }
  }
  double real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

  /// Sorted "key = value" lines.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  template <typename U>
  U number(const std::string& key) const {
    const auto s = str(key);
    U v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
    return v;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

/// Model extents from `model.*` keys, defaults elsewhere.
inline ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.d_model = c.size("model.d_model", m.d_model);
  m.n_heads = c.size("model.n_heads", m.n_heads);
  m.n_layers = c.size("model.n_layers", m.n_layers);
  m.mlp_mult = c.size("model.mlp_mult", m.mlp_mult);
  m.lora_rank = c.size("model.lora_rank", m.lora_rank);
  m.patch_size = c.size("model.patch_size", m.patch_size);
  m.image_hw = c.size("model.image_hw", m.image_hw);
  m.ref_hw = c.size("model.ref_hw", m.ref_hw);
  m.validate();
  return m;
}

inline void put_model_config(Config& c, const ModelConfig& m) {
  c.set("model.d_model", m.d_model);
  c.set("model.n_heads", m.n_heads);
  c.set("model.n_layers", m.n_layers);
  c.set("model.mlp_mult", m.mlp_mult);
  c.set("model.lora_rank", m.lora_rank);
  c.set("model.patch_size", m.patch_size);
  c.set("model.image_hw", m.image_hw);
  c.set("model.ref_hw", m.ref_hw);
}

/// Training knobs from `train.*` keys. A `train.stageN.*` key overrides
/// the shared one for stage N.
inline TrainOptions train_options(const Config& c, std::uint64_t seed, int stage) {
  const auto scoped = "train.stage" + std::to_string(stage) + ".";
  auto key = [&](const std::string& k) { return c.has(scoped + k) ? scoped + k : "train." + k; };
  TrainOptions t;
  t.steps = c.size(key("steps"), t.steps);
  t.batch = c.size(key("batch"), t.batch);
  t.accumulation = c.size(key("accumulation"), t.accumulation);
  t.adam.lr = c.real(key("lr"), t.adam.lr);
  t.hash_every = c.size(key("hash_every"), t.hash_every);
  t.heldout = c.size(key("heldout"), t.heldout);
  t.seed = seed;
  return t;
}

/// Records the options a stage actually ran with under its scoped keys.
inline void put_train_options(Config& c, const TrainOptions& t, int stage) {
  const auto p = "train.stage" + std::to_string(stage) + ".";
  c.set(p + "steps", t.steps);
  c.set(p + "batch", t.batch);
  c.set(p + "accumulation", t.accumulation);
  c.set(p + "lr", t.adam.lr);
  c.set(p + "hash_every", t.hash_every);
  c.set(p + "heldout", t.heldout);
}

}  // namespace stylecomp
