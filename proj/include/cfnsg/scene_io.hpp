#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cfnsg/config.hpp"
#include "cfnsg/scene.hpp"
#include "cfnsg/synthetic.hpp"

namespace cfnsg {

struct SceneBundle {
  SceneGraph graph;
  Camera camera;
  SyntheticSceneSpec synth;
};

// Scene description format: top-level frames/world bounds, a [planes]
// section, a [camera] section, one [object] section per scene-graph object
// (pose tracks generated from start/velocity/yaw_rate) and one [primitive]
// section per synthetic ground-truth primitive tied to an object.
inline SceneBundle load_scene(const std::string& path, int latent_size = 16) {
  const KvFile kv = parse_kv_file(path);
  SceneBundle bundle;
  SceneGraph& scene = bundle.graph;

  scene.frame_count = kv.top().get_int("frames", 1);
  if (scene.frame_count < 1)
    throw std::invalid_argument(path + ": frames must be >= 1");
  scene.bounds.min = kv.top().get_vec3("world_min");
  scene.bounds.max = kv.top().get_vec3("world_max");

  const KvSection& planes = kv.section("planes");
  const std::string axis = planes.get_string("axis", "z");
  if (axis == "x") scene.planes.normal_axis = 0;
  else if (axis == "y") scene.planes.normal_axis = 1;
  else if (axis == "z") scene.planes.normal_axis = 2;
  else throw std::invalid_argument(path + ": plane axis must be x, y or z");
  scene.planes.offsets = planes.get_doubles("offsets");
  scene.planes.validate();

  const KvSection& cam = kv.section("camera");
  Camera& camera = bundle.camera;
  camera.width = cam.get_int("width", 48);
  camera.height = cam.get_int("height", 48);
  camera.focal = cam.get_double("focal", 64.0);
  camera.cx = cam.get_double("cx", camera.width * 0.5);
  camera.cy = cam.get_double("cy", camera.height * 0.5);
  const Vec3 cam_pos = cam.get_vec3("position");
  const Vec3 cam_vel = cam.get_vec3("velocity", Vec3{0, 0, 0});
  // optional lateral sway: x += amp * sin(2 pi f / period)
  const double sway_amp = cam.get_double("sway_amp", 0.0);
  const double sway_period = cam.get_double("sway_period", scene.frame_count);
  const double cam_yaw = cam.get_double("yaw", 0.0);
  const double cam_pitch = cam.get_double("pitch", 0.0);
  for (int f = 0; f < scene.frame_count; ++f) {
    Vec3 pos = cam_pos + cam_vel * static_cast<double>(f);
    pos.x += sway_amp * std::sin(2.0 * std::numbers::pi * f / sway_period);
    camera.poses.push_back(CameraPose{pos, rotation_ypr(cam_yaw, cam_pitch, 0.0)});
  }
  camera.validate();

  for (const KvSection* obj : kv.all("object")) {
    ObjectTrack track;
    track.id = obj->get("id");
    track.class_id = obj->get_string("class", track.id);
    const Vec3 half = obj->get_vec3("half_extents");
    const Vec3 start = obj->get_vec3("start");
    const Vec3 vel = obj->get_vec3("velocity", Vec3{0, 0, 0});
    const double yaw = obj->get_double("yaw", 0.0);
    const double yaw_rate = obj->get_double("yaw_rate", 0.0);
    // yaw-only motion is the default; pitch/roll cover the full 3-angle case
    const double pitch = obj->get_double("pitch", 0.0);
    const double roll = obj->get_double("roll", 0.0);
    for (int f = 0; f < scene.frame_count; ++f)
      track.poses.push_back(Pose{start + vel * static_cast<double>(f),
                                 rotation_ypr(yaw + yaw_rate * f, pitch, roll),
                                 half});
    track.latent.assign(latent_size, 0.0);
    const bool seeded_latent = obj->has("latent");
    if (seeded_latent) {
      const auto l = obj->get_doubles("latent");
      if (static_cast<int>(l.size()) != latent_size)
        throw std::invalid_argument(path + ": object " + track.id +
                                    " latent length mismatch");
      track.latent = l;
    } else {
      track.latent.clear();  // model will seed it
    }
    scene.objects.push_back(std::move(track));
  }
  scene.validate();

  for (const KvSection* prim : kv.all("primitive")) {
    Primitive p;
    p.object_id = prim->get("object");
    scene.object_index(p.object_id);  // throws on unknown object
    const std::string kind = prim->get_string("kind", "box");
    if (kind == "box") p.kind = Primitive::Kind::kBox;
    else if (kind == "sphere") p.kind = Primitive::Kind::kSphere;
    else throw std::invalid_argument(path + ": primitive kind must be box or sphere");
    p.albedo = prim->get_vec3("albedo");
    p.alpha = prim->get_double("alpha", 1.0);
    p.radius = prim->get_double("radius", 1.0);
    p.tint_amp = prim->get_double("tint_amp", 0.0);
    p.tint_phase = prim->get_double("tint_phase", 0.0);
    p.tint_period = prim->get_double("tint_period", scene.frame_count);
    if (p.alpha <= 0.0 || p.alpha > 1.0)
      throw std::invalid_argument(path + ": primitive alpha must be in (0,1]");
    if (std::abs(p.tint_amp) > 0.5)
      throw std::invalid_argument(path + ": |tint_amp| must be <= 0.5");
    bundle.synth.primitives.push_back(std::move(p));
  }
  bundle.synth.validate(scene);
  return bundle;
}

}  // namespace cfnsg
