#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnsg/tape.hpp"

namespace cfnsg {

// Checkpoint container: magic "CFNSGCKP", u32 version, u64 parameter count,
// then one segment per parameter: u32 name length, name bytes, u32 shape
// rank, u64 dims, and the values as little-endian 64-bit floats.

inline void save_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write("CFNSGCKP", 8);
  const uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const uint64_t count = params.size();
  f.write(reinterpret_cast<const char*>(&count), 8);
  for (const Parameter* p : params) {
    const uint32_t name_len = static_cast<uint32_t>(p->name.size());
    f.write(reinterpret_cast<const char*>(&name_len), 4);
    f.write(p->name.data(), name_len);
    const uint32_t rank = static_cast<uint32_t>(p->shape.size());
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : p->shape) {
      const uint64_t dim = static_cast<uint64_t>(d);
      f.write(reinterpret_cast<const char*>(&dim), 8);
    }
    f.write(reinterpret_cast<const char*>(p->value.data()),
            8 * p->value.size());
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Loads by name into the given parameters; every parameter must be present
// with a matching shape.
inline void load_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "CFNSGCKP")
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 8);

  struct Entry {
    std::vector<int> shape;
    Vec value;
  };
  std::map<std::string, Entry> entries;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = 0;
    f.read(reinterpret_cast<char*>(&name_len), 4);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    Entry e;
    std::size_t total = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint64_t dim = 0;
      f.read(reinterpret_cast<char*>(&dim), 8);
      e.shape.push_back(static_cast<int>(dim));
      total *= dim;
    }
    e.value.resize(total);
    f.read(reinterpret_cast<char*>(e.value.data()), 8 * total);
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    entries.emplace(std::move(name), std::move(e));
  }

  for (Parameter* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint " + path + " missing parameter " +
                               p->name);
    if (it->second.shape != p->shape)
      throw std::runtime_error("checkpoint " + path + ": shape mismatch for " +
                               p->name);
    p->value = it->second.value;
  }
}

}  // namespace cfnsg
