// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary tensor archive:
//   magic "MCKP" | version u32 | count u32 |
//   count x { name_len u16 | name bytes | dtype u8 | rank u8 | extents u64[rank] | raw values }

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stylecomp/hash.hpp"
#include "stylecomp/tensor.hpp"

namespace stylecomp {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  DType dtype = DType::f64;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian element encoding

  std::size_t numel() const { return shape_numel(shape); }

  template <typename T>
  static StoredTensor from(std::string name, const Tensor<T>& t) {
    StoredTensor s;
    s.name = std::move(name);
    s.dtype = dtype_of<T>();
    s.shape = t.shape();
    s.bytes.reserve(t.numel() * sizeof(T));
    for (T v : t.values()) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      const U bits = std::bit_cast<U>(v);
      for (std::size_t b = 0; b < sizeof(T); ++b) s.bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
    return s;
  }

  /// Decodes into a tensor of element type T; converts when the stored
  /// dtype differs.
  template <typename T>
  Tensor<T> to(bool requires_grad = false) const {
    std::vector<T> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (dtype == DType::f32) {
        std::uint32_t bits = 0;
        for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
        out[i] = static_cast<T>(std::bit_cast<float>(bits));
      } else {
        std::uint64_t bits = 0;
        for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        out[i] = static_cast<T>(std::bit_cast<double>(bits));
      }
    }
    return Tensor<T>(shape, std::move(out), requires_grad);
  }
};

class Checkpoint {
 public:
  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    upsert(StoredTensor::from(name, t));
  }

  /// Named scalar stored as a rank-0 f64 tensor.
  void put_scalar(const std::string& name, double v) { put(name, Tensor<double>::scalar(v)); }

  const StoredTensor* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  const StoredTensor& at(const std::string& name) const {
    if (auto* e = find(name)) return *e;
    throw FormatError("checkpoint has no tensor named '" + name + "'");
  }

  double scalar(const std::string& name) const { return at(name).to<double>().item(); }
  std::optional<double> scalar_or(const std::string& name) const {
    if (auto* e = find(name)) return e->to<double>().item();
    return std::nullopt;
  }

  const std::vector<StoredTensor>& entries() const { return entries_; }

  void write(std::ostream& os) const {
    os.write("MCKP", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      if (e.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + e.name);
      put_uint(os, e.name.size(), 2);
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      os.put(static_cast<char>(e.dtype));
      os.put(static_cast<char>(e.shape.size()));
      for (auto x : e.shape) put_uint(os, x, 8);
      os.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    }
    if (!os) throw FormatError("checkpoint write failed");
  }

  static Checkpoint read(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MCKP", 4) != 0) throw FormatError("not a checkpoint: bad magic");
    const auto version = static_cast<std::uint32_t>(get_uint(is, 4));
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = static_cast<std::uint32_t>(get_uint(is, 4));
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      StoredTensor e;
      const auto len = static_cast<std::size_t>(get_uint(is, 2));
      e.name.resize(len);
      is.read(e.name.data(), static_cast<std::streamsize>(len));
      const int tag = is.get();
      if (tag != 0 && tag != 1) throw FormatError("bad dtype tag for '" + e.name + "'");
      e.dtype = static_cast<DType>(tag);
      const int rank = is.get();
      if (rank < 0) throw FormatError("truncated checkpoint");
      for (int r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(get_uint(is, 8)));
      e.bytes.resize(e.numel() * (e.dtype == DType::f32 ? 4 : 8));
      is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
      if (!is) throw FormatError("truncated checkpoint at '" + e.name + "'");
      ck.entries_.push_back(std::move(e));
    }
    return ck;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    write(os);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
    return read(is);
  }

  std::string bytes() const {
    std::ostringstream os(std::ios::binary);
    write(os);
    return os.str();
  }

 private:
  void upsert(StoredTensor t) {
    for (auto& e : entries_) {
      if (e.name == t.name) {
        e = std::move(t);
        return;
      }
    }
    entries_.push_back(std::move(t));
  }

  static void put_uint(std::ostream& os, std::uint64_t v, int nbytes) {
    for (int b = 0; b < nbytes; ++b) os.put(static_cast<char>((v >> (8 * b)) & 0xFF));
  }
  static void put_u32(std::ostream& os, std::uint32_t v) { put_uint(os, v, 4); }
  static std::uint64_t get_uint(std::istream& is, int nbytes) {
    std::uint64_t v = 0;
    for (int b = 0; b < nbytes; ++b) {
      const int c = is.get();
      if (c < 0) throw FormatError("truncated checkpoint");
      v |= static_cast<std::uint64_t>(c) << (8 * b);
    }
    return v;
  }

  std::vector<StoredTensor> entries_;
};

}  // namespace stylecomp
