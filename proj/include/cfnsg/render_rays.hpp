#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "cfnsg/scene.hpp"

namespace cfnsg {

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
  int px = 0, py = 0;
  int frame = 0;
};

// Pinhole ray through the pixel center (px + 0.5, py + 0.5). Camera space is
// x right, y up, looking along +z; pixel rows run top to bottom.
inline Ray generate_ray(const Camera& camera, int px, int py, int frame) {
  if (px < 0 || px >= camera.width || py < 0 || py >= camera.height)
    throw std::out_of_range("generate_ray: pixel outside image");
  const CameraPose& pose = camera.pose_at(frame);
  const Vec3 dir_cam{(px + 0.5 - camera.cx) / camera.focal,
                     -(py + 0.5 - camera.cy) / camera.focal, 1.0};
  return Ray{pose.position, normalized(pose.orientation * dir_cam), px, py,
             frame};
}

constexpr int kBackgroundComponent = -1;

// One shading query along a ray. x_field is the position in the owning
// field's input domain: canonical coordinates for dynamic components,
// world-bounds-normalized global coordinates for the background.
struct SamplePoint {
  double t = 0.0;
  double delta = 0.0;
  int component = kBackgroundComponent;  // -1 background, else object index
  int plane = -1;                        // background only
  Vec3 x_world;
  Vec3 x_field;
  Vec3 d_canonical;  // d_o for dynamic, global d for background
  Vec3 p_obj;        // object global location (dynamic only)
};

inline Vec3 normalize_position(const Aabb& bounds, const Vec3& x) {
  const Vec3 c = bounds.center();
  const Vec3 h = bounds.half_extent();
  return {(x.x - c.x) / h.x, (x.y - c.y) / h.y, (x.z - c.z) / h.z};
}

// In-plane coordinates of a background sample, normalized to [-1,1] by the
// world bounds; used for bin addressing.
inline std::pair<double, double> static_plane_uv(const SceneGraph& scene,
                                                 const Vec3& x_world) {
  const Vec3 c = scene.bounds.center();
  const Vec3 h = scene.bounds.half_extent();
  const int ua = scene.planes.u_axis(), va = scene.planes.v_axis();
  return {(x_world[ua] - c[ua]) / h[ua], (x_world[va] - c[va]) / h[va]};
}

inline constexpr int kBoxSamplesPerRay = 7;

// One sample per intersected background plane (dropped where the hit falls
// outside the plane's world-bounds extent) plus kBoxSamplesPerRay equispaced
// midpoint samples inside each intersected object box, merged and sorted by
// t. delta is the forward difference; the trailing delta continues the
// plane discretization (the mean plane spacing), so the backdrop trains to
// a density on the same scale as solid content rather than to the tiny
// value a scene-diagonal cap would reward.
inline std::vector<SamplePoint> sample_ray(const Ray& ray,
                                           const SceneGraph& scene, int frame,
                                           int box_samples = kBoxSamplesPerRay) {
  std::vector<SamplePoint> samples;

  const double dn = ray.dir[scene.planes.normal_axis];
  if (std::abs(dn) >= 1e-12) {
    const double on = ray.origin[scene.planes.normal_axis];
    for (std::size_t p = 0; p < scene.planes.offsets.size(); ++p) {
      const double t = (scene.planes.offsets[p] - on) / dn;
      if (t <= 0.0) continue;
      const Vec3 x = ray.origin + ray.dir * t;
      auto [u, v] = static_plane_uv(scene, x);
      if (std::abs(u) > 1.0 || std::abs(v) > 1.0) continue;
      SamplePoint s;
      s.t = t;
      s.component = kBackgroundComponent;
      s.plane = static_cast<int>(p);
      s.x_world = x;
      s.x_field = normalize_position(scene.bounds, x);
      s.d_canonical = ray.dir;
      samples.push_back(s);
    }
  }

  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const Pose& pose = scene.objects[oi].pose_at(frame);
    const auto hit = ray_box_intersect(ray.origin, ray.dir, pose);
    if (!hit) continue;
    const double span = hit->second - hit->first;
    for (int i = 0; i < box_samples; ++i) {
      const double t = hit->first + (i + 0.5) * span / box_samples;
      const Vec3 x = ray.origin + ray.dir * t;
      auto [x_o, d_o] = global_to_canonical(x, ray.dir, pose);
      // Midpoint samples are strictly interior; clamp fp spill.
      x_o.x = std::clamp(x_o.x, -1.0, 1.0);
      x_o.y = std::clamp(x_o.y, -1.0, 1.0);
      x_o.z = std::clamp(x_o.z, -1.0, 1.0);
      SamplePoint s;
      s.t = t;
      s.component = static_cast<int>(oi);
      s.x_world = x;
      s.x_field = x_o;
      s.d_canonical = d_o;
      s.p_obj = pose.translation;
      samples.push_back(s);
    }
  }

  std::sort(samples.begin(), samples.end(),
            [](const SamplePoint& a, const SamplePoint& b) { return a.t < b.t; });

  const std::size_t planes = scene.planes.offsets.size();
  const double trailing =
      planes >= 2 ? (scene.planes.offsets.back() - scene.planes.offsets.front()) /
                        static_cast<double>(planes - 1)
                  : std::max(0.0, scene.bounds.diagonal() -
                                      (samples.empty() ? 0.0 : samples.back().t));
  for (std::size_t i = 0; i < samples.size(); ++i)
    samples[i].delta = i + 1 < samples.size() ? samples[i + 1].t - samples[i].t
                                              : trailing;
  return samples;
}

}  // namespace cfnsg
