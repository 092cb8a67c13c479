#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfnsg/fields.hpp"

namespace cfnsg {

// Cell address within one component's bin grid. Dynamic components use a 3D
// grid over canonical [-1,1]^3 (c0,c1,c2 = x,y,z cells); the background uses
// a 2D grid per plane (c0 = plane index, c1,c2 = u,v cells).
struct BinIndex {
  int32_t c0 = 0, c1 = 0, c2 = 0;

  uint64_t packed() const {
    return (static_cast<uint64_t>(static_cast<uint32_t>(c0)) << 42) |
           (static_cast<uint64_t>(static_cast<uint32_t>(c1)) << 21) |
           static_cast<uint64_t>(static_cast<uint32_t>(c2));
  }
  bool operator==(const BinIndex&) const = default;
};

inline int32_t quantize_axis(double x, int bins) {
  // Half-open cells [lo, hi); the upper boundary +1 clamps into the last cell.
  if (x < -1.0 - 1e-9 || x > 1.0 + 1e-9)
    throw std::out_of_range("quantize: coordinate outside [-1,1]: " +
                            std::to_string(x));
  int32_t c = static_cast<int32_t>(std::floor((x + 1.0) * 0.5 * bins));
  if (c < 0) c = 0;
  if (c >= bins) c = bins - 1;
  return c;
}

inline BinIndex quantize(const Vec3& x_canonical, int bins) {
  return BinIndex{quantize_axis(x_canonical.x, bins),
                  quantize_axis(x_canonical.y, bins),
                  quantize_axis(x_canonical.z, bins)};
}

inline BinIndex quantize_static(int plane, double u, double v, int bins) {
  if (plane < 0) throw std::out_of_range("quantize_static: bad plane index");
  return BinIndex{plane, quantize_axis(u, bins), quantize_axis(v, bins)};
}

// Payload of one bin, stored single precision. feature holds the low-rank
// factors (4m), a direct rgb triple, or an encoder code (n) depending on the
// store strategy. aux carries the cached transient-gradient norm in the
// naive-baseline strategy and is zero otherwise.
struct BinPayload {
  std::vector<float> feature;
  float sigma = 0.0f;
  float score = 0.0f;
  float aux = 0.0f;
};

inline int feature_len_for(Strategy s, const FieldConfig& cfg) {
  switch (s) {
    case Strategy::kLowRank: return cfg.factor_size();
    case Strategy::kDirectRgb: return 3;
    case Strategy::kEncDec: return cfg.code_size();
    case Strategy::kNaiveRgb: return 3;
  }
  return 0;
}

// Lazily allocated sparse bin grid for one scene component. Updates are
// last-writer-wins. Concurrent retrieve/exists is safe; updates require an
// exclusive phase.
class BinStore {
 public:
  BinStore() = default;
  BinStore(Strategy strategy, int bins_per_axis, int feature_len)
      : strategy_(strategy),
        bins_per_axis_(bins_per_axis),
        feature_len_(feature_len) {}

  Strategy strategy() const { return strategy_; }
  int bins_per_axis() const { return bins_per_axis_; }
  int feature_len() const { return feature_len_; }
  std::size_t size() const { return cells_.size(); }

  bool exists(const BinIndex& idx) const {
    return cells_.find(idx.packed()) != cells_.end();
  }

  void update(const BinIndex& idx, BinPayload payload) {
    if (static_cast<int>(payload.feature.size()) != feature_len_)
      throw std::invalid_argument(
          "bin update: feature length does not match store strategy");
    cells_[idx.packed()] = std::move(payload);
  }

  const BinPayload& retrieve(const BinIndex& idx) const {
    auto it = cells_.find(idx.packed());
    if (it == cells_.end())
      throw std::out_of_range("bin retrieve: missing bin (callers must gate on exists)");
    return it->second;
  }

  // Payload bytes: entries x (scalars per bin) x 4. Scalars per bin are the
  // feature part plus sigma and score (plus the cached gradient norm in the
  // naive strategy). Bin coordinates are not counted here; the snapshot file
  // reports its own size.
  std::size_t memory_usage() const {
    return cells_.size() * payload_scalars() * 4;
  }
  std::size_t payload_scalars() const {
    return static_cast<std::size_t>(feature_len_) + 2 +
           (strategy_ == Strategy::kNaiveRgb ? 1 : 0);
  }

  void clear() { cells_.clear(); }

  template <typename Fn>
  void for_each_sorted(Fn&& fn) const {
    std::vector<uint64_t> keys;
    keys.reserve(cells_.size());
    for (const auto& [k, v] : cells_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (uint64_t k : keys) {
      const BinIndex idx{static_cast<int32_t>(k >> 42),
                         static_cast<int32_t>((k >> 21) & 0x1fffff),
                         static_cast<int32_t>(k & 0x1fffff)};
      fn(idx, cells_.at(k));
    }
  }

  // Snapshot format (little-endian): magic "CFNSGBIN", u32 version, u32
  // strategy, u32 bins per axis, u32 feature length, u64 entry count, then
  // records sorted by packed index: 3 x i32 coordinates followed by the
  // payload scalars as f32 (feature..., sigma, score, aux).
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write("CFNSGBIN", 8);
    write_u32(f, 1);
    write_u32(f, static_cast<uint32_t>(strategy_));
    write_u32(f, static_cast<uint32_t>(bins_per_axis_));
    write_u32(f, static_cast<uint32_t>(feature_len_));
    const uint64_t count = cells_.size();
    f.write(reinterpret_cast<const char*>(&count), 8);
    for_each_sorted([&](const BinIndex& idx, const BinPayload& p) {
      f.write(reinterpret_cast<const char*>(&idx.c0), 4);
      f.write(reinterpret_cast<const char*>(&idx.c1), 4);
      f.write(reinterpret_cast<const char*>(&idx.c2), 4);
      f.write(reinterpret_cast<const char*>(p.feature.data()),
              4 * p.feature.size());
      f.write(reinterpret_cast<const char*>(&p.sigma), 4);
      f.write(reinterpret_cast<const char*>(&p.score), 4);
      f.write(reinterpret_cast<const char*>(&p.aux), 4);
    });
    if (!f) throw std::runtime_error("write failed: " + path);
  }

  static BinStore load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "CFNSGBIN")
      throw std::runtime_error("not a bin snapshot: " + path);
    const uint32_t version = read_u32(f);
    if (version != 1)
      throw std::runtime_error("unsupported snapshot version in " + path);
    BinStore store;
    store.strategy_ = static_cast<Strategy>(read_u32(f));
    store.bins_per_axis_ = static_cast<int>(read_u32(f));
    store.feature_len_ = static_cast<int>(read_u32(f));
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 8);
    for (uint64_t i = 0; i < count; ++i) {
      BinIndex idx;
      f.read(reinterpret_cast<char*>(&idx.c0), 4);
      f.read(reinterpret_cast<char*>(&idx.c1), 4);
      f.read(reinterpret_cast<char*>(&idx.c2), 4);
      BinPayload p;
      p.feature.resize(store.feature_len_);
      f.read(reinterpret_cast<char*>(p.feature.data()), 4 * p.feature.size());
      f.read(reinterpret_cast<char*>(&p.sigma), 4);
      f.read(reinterpret_cast<char*>(&p.score), 4);
      f.read(reinterpret_cast<char*>(&p.aux), 4);
      if (!f) throw std::runtime_error("truncated snapshot: " + path);
      store.cells_[idx.packed()] = std::move(p);
    }
    return store;
  }

 private:
  static void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }

  Strategy strategy_ = Strategy::kLowRank;
  int bins_per_axis_ = 100;
  int feature_len_ = 0;
  std::unordered_map<uint64_t, BinPayload> cells_;
};

// Bytes a hypothetical store would need if it kept the full l-dimensional
// feature per bin; the reference point for the low-rank storage claim.
inline std::size_t direct_feature_bytes(std::size_t entries, int l) {
  return entries * (static_cast<std::size_t>(l) + 2) * 4;
}

// Encoder-decoder round trip: code = ReLU(Enc(y)); y_out = Dec(code).
inline std::pair<Vec, Vec> encode_decode(const Codec& codec, const Vec& y) {
  Vec code = codec.enc.forward(y);
  for (double& c : code) c = c > 0.0 ? c : 0.0;
  Vec y_out = codec.dec.forward(code);
  return {std::move(code), std::move(y_out)};
}

// Bin address of a sample in its component's store.
inline BinIndex bin_index_of(const SceneGraph& scene, const SamplePoint& s,
                             int bins_per_axis) {
  if (s.component == kBackgroundComponent) {
    auto [u, v] = static_plane_uv(scene, s.x_world);
    return quantize_static(s.plane, u, v, bins_per_axis);
  }
  return quantize(s.x_field, bins_per_axis);
}

}  // namespace cfnsg
