#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cfnsg/image.hpp"
#include "cfnsg/render_rays.hpp"
#include "cfnsg/scene.hpp"

namespace cfnsg {

// Analytic stand-in for a captured dataset: solid primitives riding the
// scene graph's object tracks, each with an intrinsic albedo and a
// time-varying scalar tint that emulates transient lighting, in front of a
// procedurally textured backdrop on the far background plane.
struct Primitive {
  enum class Kind { kBox, kSphere };

  std::string object_id;
  Kind kind = Kind::kBox;
  Vec3 albedo{0.5, 0.5, 0.5};
  double alpha = 1.0;        // 1 = opaque
  double radius = 1.0;       // canonical-frame radius (spheres)
  double tint_amp = 0.0;     // tint(f) = 1 + amp * sin(2 pi f / period + phase)
  double tint_phase = 0.0;
  double tint_period = 30.0;

  double tint(int frame) const {
    if (tint_amp == 0.0) return 1.0;
    return 1.0 + tint_amp * std::sin(2.0 * std::numbers::pi * frame /
                                         tint_period +
                                     tint_phase);
  }
};

struct SyntheticSceneSpec {
  std::vector<Primitive> primitives;

  // Every primitive's bounding box must stay inside world bounds in every
  // frame.
  void validate(const SceneGraph& scene) const {
    for (const Primitive& prim : primitives) {
      const int idx = scene.object_index(prim.object_id);
      const ObjectTrack& obj = scene.objects[idx];
      for (int f = 0; f < scene.frame_count; ++f) {
        const Pose& pose = obj.pose_at(f);
        for (int corner = 0; corner < 8; ++corner) {
          const Vec3 c{corner & 1 ? 1.0 : -1.0, corner & 2 ? 1.0 : -1.0,
                       corner & 4 ? 1.0 : -1.0};
          const Vec3 world = canonical_to_global(c, Vec3{0, 0, 1}, pose).first;
          if (!scene.bounds.contains(world, 1e-9))
            throw std::invalid_argument("primitive " + prim.object_id +
                                        " leaves world bounds at frame " +
                                        std::to_string(f));
        }
      }
    }
  }
};

// Smooth low-frequency backdrop painted on the farthest background plane,
// evaluated at world-bounds-normalized in-plane coordinates.
inline Vec3 backdrop_texture(double u, double v) {
  return {0.45 + 0.25 * std::sin(1.7 * u + 0.3),
          0.45 + 0.25 * std::sin(2.3 * v + 1.1),
          0.45 + 0.25 * std::sin(1.3 * (u + v) + 2.0)};
}

inline std::optional<double> primitive_hit(const Primitive& prim,
                                           const Pose& pose,
                                           const Vec3& origin,
                                           const Vec3& dir) {
  if (prim.kind == Primitive::Kind::kBox) {
    auto hit = ray_box_intersect(origin, dir, pose);
    if (!hit) return std::nullopt;
    return hit->first;
  }
  // Canonical-frame sphere |x_o| = radius; solve the quadratic along the
  // canonical ray (t stays in global units because we scale the direction).
  const Vec3 o_local = pose.rotation.transposed_mul(origin - pose.translation);
  const Vec3 d_local = pose.rotation.transposed_mul(dir);
  const Vec3 o{o_local.x / pose.scale.x, o_local.y / pose.scale.y,
               o_local.z / pose.scale.z};
  const Vec3 d{d_local.x / pose.scale.x, d_local.y / pose.scale.y,
               d_local.z / pose.scale.z};
  const double a = dot(d, d);
  const double b = 2.0 * dot(o, d);
  const double c = dot(o, o) - prim.radius * prim.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / (2.0 * a);
  if (t <= 0.0) t = (-b + sq) / (2.0 * a);
  if (t <= 0.0) return std::nullopt;
  return t;
}

// Deterministic analytic ray cast: front-to-back over primitive hits with
// per-primitive alpha, terminated by the backdrop on the farthest plane.
inline Vec3 ground_truth_pixel(const SyntheticSceneSpec& spec,
                               const SceneGraph& scene, const Vec3& origin,
                               const Vec3& dir, int frame) {
  struct Hit {
    double t;
    Vec3 rgb;
    double alpha;
  };
  std::vector<Hit> hits;
  for (const Primitive& prim : spec.primitives) {
    const int idx = scene.object_index(prim.object_id);
    const Pose& pose = scene.objects[idx].pose_at(frame);
    if (auto t = primitive_hit(prim, pose, origin, dir)) {
      const double tint = prim.tint(frame);
      Vec3 rgb = prim.albedo * tint;
      rgb.x = std::clamp(rgb.x, 0.0, 1.0);
      rgb.y = std::clamp(rgb.y, 0.0, 1.0);
      rgb.z = std::clamp(rgb.z, 0.0, 1.0);
      hits.push_back({*t, rgb, prim.alpha});
    }
  }
  std::sort(hits.begin(), hits.end(),
            [](const Hit& a, const Hit& b) { return a.t < b.t; });

  Vec3 color{0, 0, 0};
  double transmittance = 1.0;
  const double far_offset = scene.planes.offsets.back();
  const double dn = dir[scene.planes.normal_axis];
  double t_far = std::abs(dn) < 1e-12
                     ? 1e300
                     : (far_offset - origin[scene.planes.normal_axis]) / dn;
  if (t_far <= 0.0) t_far = 1e300;
  for (const Hit& h : hits) {
    if (h.t >= t_far) break;
    color += h.rgb * (transmittance * h.alpha);
    transmittance *= 1.0 - h.alpha;
    if (transmittance <= 0.0) return color;
  }
  // Backdrop at the far plane (mid gray if the ray never reaches it).
  Vec3 bg{0.5, 0.5, 0.5};
  if (t_far < 1e300) {
    const Vec3 p = origin + dir * t_far;
    const Vec3 half = scene.bounds.half_extent();
    const Vec3 center = scene.bounds.center();
    const int ua = scene.planes.u_axis(), va = scene.planes.v_axis();
    bg = backdrop_texture((p[ua] - center[ua]) / half[ua],
                          (p[va] - center[va]) / half[va]);
  }
  return color + bg * transmittance;
}

inline Image render_ground_truth(const SyntheticSceneSpec& spec,
                                 const SceneGraph& scene, const Camera& camera,
                                 int frame) {
  if (frame < 0 || frame >= scene.frame_count)
    throw std::out_of_range("render_ground_truth: frame out of range");
  Image img(camera.width, camera.height);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const Ray ray = generate_ray(camera, x, y, frame);
      const Vec3 rgb = ground_truth_pixel(spec, scene, ray.origin, ray.dir, frame);
      double* p = img.px(x, y);
      p[0] = rgb.x;
      p[1] = rgb.y;
      p[2] = rgb.z;
    }
  return img;
}

}  // namespace cfnsg
