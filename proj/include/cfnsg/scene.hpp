#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfnsg/geometry.hpp"
#include "cfnsg/tape.hpp"

namespace cfnsg {

// Rigid pose plus per-axis half-extents. The canonical frame of an object
// maps its bounding box to [-1,1]^3.
struct Pose {
  Vec3 translation;
  Mat3 rotation;       // orthonormal
  Vec3 scale{1, 1, 1};  // box half-extents, components > 0

  static Pose from_yaw(const Vec3& t, double yaw, const Vec3& half_extents) {
    return Pose{t, rotation_ypr(yaw, 0.0, 0.0), half_extents};
  }

  void validate() const {
    if (scale.x <= 0 || scale.y <= 0 || scale.z <= 0)
      throw std::invalid_argument("pose: non-positive scale");
    const Mat3 rtr = rotation.transposed() * rotation;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double want = i == j ? 1.0 : 0.0;
        if (std::abs(rtr(i, j) - want) > 1e-9)
          throw std::invalid_argument("pose: rotation not orthonormal");
      }
  }
};

// x_o = diag(1/scale) R^T (x - t); d_o = R^T d renormalized. A point is
// inside the box iff x_o is in [-1,1]^3.
inline std::pair<Vec3, Vec3> global_to_canonical(const Vec3& x, const Vec3& d,
                                                 const Pose& pose) {
  if (norm(d) == 0.0)
    throw std::invalid_argument("global_to_canonical: zero direction");
  const Vec3 local = pose.rotation.transposed_mul(x - pose.translation);
  const Vec3 x_o{local.x / pose.scale.x, local.y / pose.scale.y,
                 local.z / pose.scale.z};
  const Vec3 d_o = normalized(pose.rotation.transposed_mul(d));
  return {x_o, d_o};
}

inline std::pair<Vec3, Vec3> canonical_to_global(const Vec3& x_o,
                                                 const Vec3& d_o,
                                                 const Pose& pose) {
  const Vec3 scaled{x_o.x * pose.scale.x, x_o.y * pose.scale.y,
                    x_o.z * pose.scale.z};
  const Vec3 x = pose.rotation * scaled + pose.translation;
  const Vec3 d = normalized(pose.rotation * d_o);
  return {x, d};
}

// Slab test against the canonical unit box; t stays parameterized on the
// global ray. t_near is clamped to >= 0.
inline std::optional<std::pair<double, double>> ray_box_intersect(
    const Vec3& origin, const Vec3& dir, const Pose& pose) {
  const Vec3 o_local = pose.rotation.transposed_mul(origin - pose.translation);
  const Vec3 d_local = pose.rotation.transposed_mul(dir);
  const Vec3 o{o_local.x / pose.scale.x, o_local.y / pose.scale.y,
               o_local.z / pose.scale.z};
  const Vec3 d{d_local.x / pose.scale.x, d_local.y / pose.scale.y,
               d_local.z / pose.scale.z};
  double t_near = -1e300, t_far = 1e300;
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(d[axis]) < 1e-300) {
      if (o[axis] < -1.0 || o[axis] > 1.0) return std::nullopt;
      continue;
    }
    double t0 = (-1.0 - o[axis]) / d[axis];
    double t1 = (1.0 - o[axis]) / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
  }
  if (t_near >= t_far || t_far <= 0.0) return std::nullopt;
  return std::make_pair(std::max(t_near, 0.0), t_far);
}

// Background: P parallel planes, axis-aligned normal, strictly increasing
// offsets. The in-plane axes are the two world axes orthogonal to the
// normal; their extent is the scene's world bounds.
struct PlaneStack {
  int normal_axis = 2;  // 0=x, 1=y, 2=z
  std::vector<double> offsets;

  void validate() const {
    if (offsets.empty()) throw std::invalid_argument("planes: need P >= 1");
    for (std::size_t i = 1; i < offsets.size(); ++i)
      if (offsets[i] <= offsets[i - 1])
        throw std::invalid_argument("planes: offsets must strictly increase");
  }

  Vec3 normal() const {
    Vec3 n;
    n[normal_axis] = 1.0;
    return n;
  }
  int u_axis() const { return normal_axis == 0 ? 1 : 0; }
  int v_axis() const { return normal_axis == 2 ? 1 : 2; }
};

// One positive t per non-parallel plane, ascending.
inline std::vector<double> ray_planes_intersect(const Vec3& origin,
                                                const Vec3& dir,
                                                const PlaneStack& planes) {
  std::vector<double> ts;
  const double dn = dir[planes.normal_axis];
  if (std::abs(dn) < 1e-12) return ts;
  const double on = origin[planes.normal_axis];
  for (double off : planes.offsets) {
    const double t = (off - on) / dn;
    if (t > 0.0) ts.push_back(t);
  }
  std::sort(ts.begin(), ts.end());
  return ts;
}

struct ObjectTrack {
  std::string id;
  std::string class_id;
  std::vector<Pose> poses;  // one per frame, no gaps
  Vec latent;               // initial value; trained copy lives in the model

  const Pose& pose_at(int frame) const {
    if (frame < 0 || frame >= static_cast<int>(poses.size()))
      throw std::out_of_range("object " + id + ": no pose for frame " +
                              std::to_string(frame));
    return poses[frame];
  }
};

struct CameraPose {
  Vec3 position;
  Mat3 orientation;  // camera-to-world; camera looks along +z
};

struct Camera {
  std::vector<CameraPose> poses;  // per frame
  double focal = 0.0;             // pixels
  double cx = 0.0, cy = 0.0;      // principal point, pixels
  int width = 0, height = 0;

  void validate() const {
    if (focal <= 0.0) throw std::invalid_argument("camera: focal must be > 0");
    if (width < 1 || height < 1)
      throw std::invalid_argument("camera: degenerate image size");
    if (poses.empty()) throw std::invalid_argument("camera: no poses");
  }
  const CameraPose& pose_at(int frame) const {
    return poses[std::min<std::size_t>(frame, poses.size() - 1)];
  }
};

struct SceneGraph {
  PlaneStack planes;
  std::vector<ObjectTrack> objects;
  int frame_count = 0;
  Aabb bounds;

  void validate() const {
    planes.validate();
    for (const auto& obj : objects) {
      if (static_cast<int>(obj.poses.size()) != frame_count)
        throw std::invalid_argument("object " + obj.id +
                                    ": pose track does not cover all frames");
      for (const Pose& p : obj.poses) p.validate();
    }
  }

  int object_index(const std::string& id) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (objects[i].id == id) return static_cast<int>(i);
    throw std::invalid_argument("unknown object id: " + id);
  }
};

// Returns a copy of the scene with one object's pose track replaced.
inline SceneGraph manipulate(const SceneGraph& scene, const std::string& id,
                             const std::vector<Pose>& new_track) {
  SceneGraph out = scene;
  const int idx = out.object_index(id);
  if (static_cast<int>(new_track.size()) != scene.frame_count)
    throw std::invalid_argument("manipulate: edit must cover every frame");
  out.objects[idx].poses = new_track;
  return out;
}

}  // namespace cfnsg
