/* Copyright 2026 The nmn-dialog Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Checkpoint container: magic "NMNC", u32 version=1, u32 metadata length,
// UTF-8 JSON metadata, then per-tensor records (u16 name length, name bytes,
// u8 dtype=1 for f32, u8 ndim, ndim x u32 dims, little-endian f32 payload)
// until end of file. Parameters are written in lexicographic name order and
// Adam moments ride along as "opt/m/<name>" and "opt/v/<name>".

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nmnd/params.hpp"

namespace nmnd {

inline constexpr char kCheckpointMagic[4] = {'N', 'M', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t x) {
  out.push_back(static_cast<char>(x & 0xff));
  out.push_back(static_cast<char>((x >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string where)
      : data_(data), where_(std::move(where)) {}

  std::uint64_t offset() const { return pos_; }
  bool at_end() const { return pos_ >= data_.size(); }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t x = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[pos_ + 1])) << 8);
    pos_ += 2;
    return x;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i)
      x |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return x;
  }
  float f32() {
    std::uint32_t bits = u32();
    float x;
    std::memcpy(&x, &bits, 4);
    return x;
  }
  std::string bytes(std::uint64_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::uint64_t n) {
    if (pos_ + n > data_.size())
      throw FormatError(where_ + ": truncated record", pos_);
  }
  const std::string& data_;
  std::string where_;
  std::uint64_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file_bytes(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw UsageError("failed writing '" + path + "'");
}

}  // namespace detail

/// A parsed checkpoint: metadata plus named f32 tensors in file order.
struct CheckpointData {
  nlohmann::json metadata;
  std::vector<std::pair<std::string, TensorData<float>>> tensors;

  const TensorData<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline void append_tensor_record(std::string& out, const std::string& name, const Shape& shape,
                                 const float* data, std::int64_t n) {
  if (name.size() > 0xffff) throw UsageError("tensor name too long: " + name);
  detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  out.push_back(static_cast<char>(kDtypeF32));
  out.push_back(static_cast<char>(shape.size()));
  for (int d : shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (std::int64_t i = 0; i < n; ++i) detail::put_f32(out, data[i]);
}

template <typename S>
void save_checkpoint(const std::string& path, const nlohmann::json& metadata,
                     const ParameterStore<S>& store) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  std::string meta = metadata.dump();
  detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  std::vector<float> tmp;
  auto write_array = [&](const std::string& name, const Shape& shape, const ArrayX<S>& a) {
    tmp.resize(a.size());
    for (std::int64_t i = 0; i < a.size(); ++i) tmp[i] = static_cast<float>(a[i]);
    append_tensor_record(out, name, shape, tmp.data(), a.size());
  };
  for (const auto& [name, p] : store) {
    write_array(name, p.shape, p.value);
    if (p.trainable) {
      write_array("opt/m/" + name, p.shape, p.m1);
      write_array("opt/v/" + name, p.shape, p.m2);
    }
  }
  detail::write_file_bytes(path, out);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::string data = detail::read_file_bytes(path);
  detail::ByteReader r(data, path);
  std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(path + ": bad magic, not a checkpoint file", 0);
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CompatError(path + ": unsupported checkpoint version " + std::to_string(version));
  std::uint32_t meta_len = r.u32();
  std::string meta = r.bytes(meta_len);
  CheckpointData ckpt;
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": metadata is not valid JSON: " + e.what(), 12);
  }
  while (!r.at_end()) {
    std::uint64_t rec_off = r.offset();
    std::uint16_t name_len = r.u16();
    std::string name = r.bytes(name_len);
    std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32)
      throw FormatError(path + ": unsupported dtype " + std::to_string(dtype) + " for tensor '" +
                            name + "'",
                        rec_off);
    std::uint8_t ndim = r.u8();
    Shape shape(ndim);
    std::int64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(r.u32());
      n *= shape[d];
    }
    TensorData<float> t{std::move(shape), ArrayX<float>(n)};
    for (std::int64_t i = 0; i < n; ++i) t.v[i] = r.f32();
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

/// Copy checkpoint tensors into an already-constructed store. Every store
/// parameter must be present with a matching shape; trainable entries also
/// restore their Adam moments. Unknown checkpoint tensors are rejected so a
/// mismatched architecture cannot load silently.
template <typename S>
void restore_store(const CheckpointData& ckpt, ParameterStore<S>& store) {
  std::size_t used = 0;
  auto fetch = [&](const std::string& name, const Shape& want) -> const TensorData<float>& {
    const TensorData<float>* t = ckpt.find(name);
    if (!t) throw CompatError("checkpoint is missing tensor '" + name + "'");
    if (t->shape != want)
      throw CompatError("checkpoint tensor '" + name + "' has shape " + shape_str(t->shape) +
                        ", expected " + shape_str(want));
    ++used;
    return *t;
  };
  for (auto& [name, p] : store) {
    const TensorData<float>& t = fetch(name, p.shape);
    for (std::int64_t i = 0; i < t.size(); ++i) p.value[i] = static_cast<S>(t.v[i]);
    if (p.trainable) {
      const TensorData<float>& m = fetch("opt/m/" + name, p.shape);
      const TensorData<float>& v = fetch("opt/v/" + name, p.shape);
      for (std::int64_t i = 0; i < m.size(); ++i) p.m1[i] = static_cast<S>(m.v[i]);
      for (std::int64_t i = 0; i < v.size(); ++i) p.m2[i] = static_cast<S>(v.v[i]);
    }
  }
  if (used != ckpt.tensors.size())
    throw CompatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors but the model consumes " + std::to_string(used));
  if (ckpt.metadata.contains("optimizer_step"))
    store.set_step(ckpt.metadata["optimizer_step"].get<std::int64_t>());
}

}  // namespace nmnd
