#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajcl/param_store.hpp"
#include "trajcl/tensor.hpp"

namespace trajcl {

/// Named-tensor checkpoint container. Tensors are stored as little-endian
/// float32 in parameter order, preceded by a free-form metadata string
/// (JSON in practice). Writing the same content twice yields identical bytes.
struct Checkpoint {
  static constexpr uint32_t kMagic = 0x54504354;  // "TCPT"
  static constexpr uint32_t kVersion = 1;

  std::string metadata;
  struct NamedTensor {
    std::string name;
    Tensor<float> value;
  };
  std::vector<NamedTensor> tensors;

  const Tensor<float>& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw std::runtime_error("checkpoint: missing tensor " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }

  template <typename S>
  static Checkpoint from_store(const ParamStore<S>& store, std::string metadata) {
    Checkpoint ck;
    ck.metadata = std::move(metadata);
    for (const auto& e : store.entries())
      ck.tensors.push_back({e.name, e.value.template cast<float>()});
    return ck;
  }

  /// Restores values into an existing store (shapes must match).
  template <typename S>
  void into_store(ParamStore<S>& store) const {
    for (const auto& t : tensors) {
      auto& e = store.at(t.name);
      if (e.value.dims != t.value.dims)
        throw ShapeError("checkpoint: tensor " + t.name + " has shape " + t.value.shape() +
                         ", store expects " + e.value.shape());
      e.value = t.value.template cast<S>();
    }
  }

  std::string serialize() const {
    std::ostringstream os(std::ios::binary);
    auto put_u32 = [&](uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); };
    put_u32(kMagic);
    put_u32(kVersion);
    put_u32(static_cast<uint32_t>(metadata.size()));
    os.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
    put_u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      put_u32(static_cast<uint32_t>(t.name.size()));
      os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_u32(static_cast<uint32_t>(t.value.rank()));
      for (int64_t dim : t.value.dims) put_u32(static_cast<uint32_t>(dim));
      os.write(reinterpret_cast<const char*>(t.value.data()),
               static_cast<std::streamsize>(t.value.numel() * sizeof(float)));
    }
    return os.str();
  }

  static Checkpoint deserialize(const std::string& bytes) {
    size_t pos = 0;
    auto get_u32 = [&]() -> uint32_t {
      if (pos + 4 > bytes.size()) throw std::runtime_error("checkpoint: truncated");
      uint32_t x;
      std::memcpy(&x, bytes.data() + pos, 4);
      pos += 4;
      return x;
    };
    if (get_u32() != kMagic) throw std::runtime_error("checkpoint: bad magic");
    const uint32_t version = get_u32();
    if (version != kVersion)
      throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const uint32_t meta_len = get_u32();
    if (pos + meta_len > bytes.size()) throw std::runtime_error("checkpoint: truncated");
    ck.metadata = bytes.substr(pos, meta_len);
    pos += meta_len;
    const uint32_t count = get_u32();
    for (uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      const uint32_t name_len = get_u32();
      if (pos + name_len > bytes.size()) throw std::runtime_error("checkpoint: truncated");
      t.name = bytes.substr(pos, name_len);
      pos += name_len;
      const uint32_t rank = get_u32();
      std::vector<int64_t> dims(rank);
      for (uint32_t r = 0; r < rank; ++r) dims[r] = get_u32();
      t.value = Tensor<float>(dims);
      const size_t nbytes = static_cast<size_t>(t.value.numel()) * sizeof(float);
      if (pos + nbytes > bytes.size()) throw std::runtime_error("checkpoint: truncated");
      std::memcpy(t.value.data(), bytes.data() + pos, nbytes);
      pos += nbytes;
      ck.tensors.push_back(std::move(t));
    }
    return ck;
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace trajcl
