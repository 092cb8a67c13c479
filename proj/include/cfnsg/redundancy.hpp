#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <vector>

#include "cfnsg/cache.hpp"
#include "cfnsg/fields.hpp"
#include "cfnsg/render_rays.hpp"

namespace cfnsg {

// Per-bin time series of estimated (rgb, sigma) across frames for one
// tracked component. Density is clamped to [0,1] at record time so all four
// channels share the epsilon range of the redundancy measure.
class RedundancyHistory {
 public:
  explicit RedundancyHistory(int frames) : frames_(frames) {}

  void record(const BinIndex& idx, int frame, const Vec3& rgb, double sigma) {
    auto& acc = cells_[idx.packed()];
    if (acc.empty()) acc.resize(frames_);
    Accum& a = acc[frame];
    a.sum[0] += rgb.x;
    a.sum[1] += rgb.y;
    a.sum[2] += rgb.z;
    a.sum[3] += std::clamp(sigma, 0.0, 1.0);
    a.count += 1;
  }

  int frames() const { return frames_; }

  // Bins observed in every frame, averaged per (bin, frame).
  std::vector<std::vector<std::array<double, 4>>> complete_series() const {
    std::vector<std::vector<std::array<double, 4>>> out;
    for (const auto& [key, acc] : cells_) {
      bool complete = true;
      for (const Accum& a : acc)
        if (a.count == 0) {
          complete = false;
          break;
        }
      if (!complete) continue;
      std::vector<std::array<double, 4>> series(frames_);
      for (int f = 0; f < frames_; ++f)
        for (int c = 0; c < 4; ++c)
          series[f][c] = acc[f].sum[c] / acc[f].count;
      out.push_back(std::move(series));
    }
    return out;
  }

 private:
  struct Accum {
    std::array<double, 4> sum{0, 0, 0, 0};
    int count = 0;
  };
  int frames_;
  std::map<uint64_t, std::vector<Accum>> cells_;
};

// For each epsilon: the fraction of (bin, consecutive-frame-pair) events
// whose max-abs change over (r,g,b,sigma) is below epsilon.
inline std::vector<double> analyze_redundancy(const RedundancyHistory& history,
                                              const std::vector<double>& eps_grid) {
  if (history.frames() < 2)
    throw std::invalid_argument("analyze_redundancy: need >= 2 frames");
  const auto series = history.complete_series();
  std::vector<double> changes;
  for (const auto& s : series)
    for (std::size_t f = 0; f + 1 < s.size(); ++f) {
      double change = 0.0;
      for (int c = 0; c < 4; ++c)
        change = std::max(change, std::abs(s[f + 1][c] - s[f][c]));
      changes.push_back(change);
    }
  std::vector<double> ratios(eps_grid.size(), 0.0);
  if (changes.empty()) return ratios;
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    std::size_t below = 0;
    for (double c : changes) below += c < eps_grid[i];
    ratios[i] = static_cast<double>(below) / changes.size();
  }
  return ratios;
}

// Sweeps the training rays of every frame and records the model's full-pass
// outputs for the tracked component into per-bin series.
inline RedundancyHistory collect_redundancy(const ModelSet& model,
                                            const SceneGraph& scene,
                                            const Camera& camera, int component,
                                            int bins_per_axis) {
  RedundancyHistory history(scene.frame_count);
  for (int f = 0; f < scene.frame_count; ++f)
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = generate_ray(camera, x, y, f);
        for (const SamplePoint& q : sample_ray(ray, scene, f)) {
          if (q.component != component) continue;
          const RadianceSample out = full_forward(model, scene, q);
          history.record(bin_index_of(scene, q, bins_per_axis), f, out.rgb,
                         out.sigma);
        }
      }
  return history;
}

inline void write_redundancy_csv(std::ostream& os,
                                 const std::vector<double>& eps_grid,
                                 const std::vector<double>& ratios) {
  os << "epsilon,ratio\n";
  for (std::size_t i = 0; i < eps_grid.size(); ++i)
    os << eps_grid[i] << ',' << ratios[i] << '\n';
}

}  // namespace cfnsg
