#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cfnsg/nn.hpp"
#include "cfnsg/render_rays.hpp"
#include "cfnsg/scene.hpp"
#include "cfnsg/tape.hpp"

namespace cfnsg {

enum class Strategy { kLowRank, kDirectRgb, kEncDec, kNaiveRgb };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kLowRank: return "lowrank";
    case Strategy::kDirectRgb: return "direct";
    case Strategy::kEncDec: return "encdec";
    case Strategy::kNaiveRgb: return "naive";
  }
  return "?";
}

struct FieldConfig {
  int first_stage_layers = 8;
  int first_stage_width = 128;
  int second_stage_layers = 4;
  int second_stage_width = 64;
  int enc_position = 6;  // frequencies for x
  int enc_direction = 4; // for d
  int enc_location = 2;  // for p_o
  int rank = 4;          // m; feature size l = m^4
  int latent_size = 16;

  int feature_size() const { return rank * rank * rank * rank; }
  int factor_size() const { return 4 * rank; }
  int code_size() const { return feature_size() / 4; }  // encoder-decoder n = l/4

  int first_stage_input(bool dynamic) const {
    return 3 * (1 + 2 * enc_position) + (dynamic ? latent_size : 0);
  }
  int second_stage_input(bool dynamic) const {
    return feature_size() + 3 * (1 + 2 * enc_direction) +
           (dynamic ? 3 * (1 + 2 * enc_location) : 0);
  }
};

// Single-layer encoder (with ReLU) and decoder used by the encoder-decoder
// payload strategy; trained jointly with the main loss.
struct Codec {
  DenseLayer enc;  // l -> n
  DenseLayer dec;  // n -> l

  Codec() = default;
  Codec(const std::string& name, int l, int n, Rng& rng)
      : enc(name + ".enc", n, l, rng), dec(name + ".dec", l, n, rng) {}
};

struct FirstStageOut {
  Vec factors;
  double sigma = 0.0;
  double score = 0.0;
};

struct FirstStageVars {
  Var factors, sigma, score;
};

struct RadianceSample {
  Vec3 rgb;
  double sigma = 0.0;
  double score = 0.0;
  Vec factors;
};

// Two-stage field of one scene component. The first stage maps (encoded
// position [, latent]) to the feature factors plus density and consistency
// score; density and score therefore cannot depend on viewing direction or
// object location. The second stage maps (reconstructed feature, encoded
// direction [, encoded object location]) to rgb.
struct FieldPair {
  bool dynamic = false;
  FieldConfig cfg;
  Mlp trunk1;
  DenseLayer factor_head, sigma_head, score_head;
  Mlp trunk2;
  DenseLayer rgb_head;
  Parameter z;  // shared per-component feature, length l
  std::optional<Codec> codec;

  FieldPair() = default;
  FieldPair(const std::string& name, bool dyn, const FieldConfig& c, Rng& rng,
            bool with_codec = false)
      : dynamic(dyn),
        cfg(c),
        trunk1(name + ".f1", c.first_stage_input(dyn), c.first_stage_width,
               c.first_stage_layers, rng),
        factor_head(name + ".factors", c.factor_size(), c.first_stage_width, rng),
        sigma_head(name + ".sigma", 1, c.first_stage_width, rng),
        score_head(name + ".score", 1, c.first_stage_width, rng),
        trunk2(name + ".f2", c.second_stage_input(dyn), c.second_stage_width,
               c.second_stage_layers, rng),
        rgb_head(name + ".rgb", 3, c.second_stage_width, rng),
        z(name + ".z", c.feature_size()) {
    // Empty space dominates these scenes; bias density low at init.
    sigma_head.b.value[0] = -1.5;
    if (with_codec)
      codec.emplace(name + ".codec", c.feature_size(), c.code_size(), rng);
  }

  void collect(std::vector<Parameter*>& out) {
    trunk1.collect(out);
    out.push_back(&factor_head.w);
    out.push_back(&factor_head.b);
    out.push_back(&sigma_head.w);
    out.push_back(&sigma_head.b);
    out.push_back(&score_head.w);
    out.push_back(&score_head.b);
    trunk2.collect(out);
    out.push_back(&rgb_head.w);
    out.push_back(&rgb_head.b);
    out.push_back(&z);
    if (codec) {
      out.push_back(&codec->enc.w);
      out.push_back(&codec->enc.b);
      out.push_back(&codec->dec.w);
      out.push_back(&codec->dec.b);
    }
  }
};

inline Vec vec3_to_vec(const Vec3& v) { return Vec{v.x, v.y, v.z}; }

// ---- first stage ----

inline FirstStageOut eval_first_stage(const FieldPair& field, const Vec3& x,
                                      const Vec* latent) {
  if (field.dynamic != (latent != nullptr))
    throw std::invalid_argument("eval_first_stage: latent iff dynamic");
  Vec in = positional_encode(vec3_to_vec(x), field.cfg.enc_position);
  if (latent) {
    if (static_cast<int>(latent->size()) != field.cfg.latent_size)
      throw std::invalid_argument("eval_first_stage: latent size mismatch");
    in.insert(in.end(), latent->begin(), latent->end());
  }
  const Vec h = field.trunk1.forward(in);
  FirstStageOut out;
  out.factors = field.factor_head.forward(h);
  out.sigma = softplus(field.sigma_head.forward(h)[0]);
  out.score = sigmoid(field.score_head.forward(h)[0]);
  return out;
}

inline FirstStageVars eval_first_stage(Tape& tape, FieldPair& field, Var x_enc_in) {
  const Var h = field.trunk1.forward(tape, x_enc_in);
  FirstStageVars out;
  out.factors = field.factor_head.forward(tape, h);
  out.sigma = tape.softplus(field.sigma_head.forward(tape, h));
  out.score = tape.sigmoid(field.score_head.forward(tape, h));
  return out;
}

// Builds the first-stage input on tape: posenc(x) concatenated with the
// latent parameter for dynamic components.
inline Var first_stage_input(Tape& tape, FieldPair& field, const Vec3& x,
                             Parameter* latent) {
  Var enc = tape.posenc(tape.constant(vec3_to_vec(x)), field.cfg.enc_position);
  if (field.dynamic) {
    if (!latent) throw std::invalid_argument("first_stage_input: missing latent");
    return tape.concat({enc, tape.param(*latent)});
  }
  return enc;
}

// ---- low-rank feature reconstruction ----
// factors = [v11 | v12 | v21 | v22], each of length m.
// u_i = flatten(outer(v_i1, v_i2)) in R^{m^2}; y = flatten(outer(u1, u2)) + z.
// All flattening is row-major.

inline Vec reconstruct_feature(const Vec& factors, const Vec& z, int m) {
  if (static_cast<int>(factors.size()) != 4 * m)
    throw std::invalid_argument("reconstruct_feature: factor length != 4m");
  const int l = m * m * m * m;
  if (static_cast<int>(z.size()) != l)
    throw std::invalid_argument("reconstruct_feature: z length != m^4");
  Vec u1(m * m), u2(m * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      u1[i * m + j] = factors[i] * factors[m + j];
      u2[i * m + j] = factors[2 * m + i] * factors[3 * m + j];
    }
  // Two passes (product, then + z) keep this bit-identical to the recorded
  // outer/add ops.
  Vec y(l);
  for (int i = 0; i < m * m; ++i)
    for (int j = 0; j < m * m; ++j) y[i * m * m + j] = u1[i] * u2[j];
  for (int i = 0; i < l; ++i) y[i] += z[i];
  return y;
}

inline Var reconstruct_feature(Tape& tape, Var factors, Var z_leaf, int m) {
  const Var v11 = tape.slice(factors, 0, m);
  const Var v12 = tape.slice(factors, m, m);
  const Var v21 = tape.slice(factors, 2 * m, m);
  const Var v22 = tape.slice(factors, 3 * m, m);
  const Var u1 = tape.outer(v11, v12);
  const Var u2 = tape.outer(v21, v22);
  return tape.add(tape.outer(u1, u2), z_leaf);
}

// ---- second stage ----

struct TransientContext {
  Vec3 d;            // canonical direction (dynamic) / global direction (bg)
  Vec3 p_obj;        // raw global object location (dynamic only)
  Vec3 world_center; // for normalizing p_obj
  Vec3 world_half;
};

inline Vec second_stage_input(const FieldPair& field, const Vec& y,
                              const TransientContext& t) {
  Vec in = y;
  const Vec d_enc = positional_encode(vec3_to_vec(t.d), field.cfg.enc_direction);
  in.insert(in.end(), d_enc.begin(), d_enc.end());
  if (field.dynamic) {
    const Vec3 pn{(t.p_obj.x - t.world_center.x) / t.world_half.x,
                  (t.p_obj.y - t.world_center.y) / t.world_half.y,
                  (t.p_obj.z - t.world_center.z) / t.world_half.z};
    const Vec p_enc = positional_encode(vec3_to_vec(pn), field.cfg.enc_location);
    in.insert(in.end(), p_enc.begin(), p_enc.end());
  }
  return in;
}

inline Vec3 eval_color_head(const FieldPair& field, const Vec& y,
                            const TransientContext& t) {
  const Vec in = second_stage_input(field, y, t);
  const Vec h = field.trunk2.forward(in);
  const Vec o = field.rgb_head.forward(h);
  return {sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])};
}

// Tape version; d_var/p_var are leaves over the raw direction and object
// location so their gradients stay retrievable (the reuse baseline needs
// them). Pass invalid p_var for the background.
inline Var eval_color_head(Tape& tape, FieldPair& field, Var y, Var d_var,
                           Var p_var, const TransientContext& t) {
  std::vector<Var> parts{y, tape.posenc(d_var, field.cfg.enc_direction)};
  if (field.dynamic) {
    if (!p_var.valid())
      throw std::invalid_argument("eval_color_head: missing p_o");
    const Vec center = vec3_to_vec(t.world_center);
    const Vec inv_half{1.0 / t.world_half.x, 1.0 / t.world_half.y,
                       1.0 / t.world_half.z};
    const Var pn = tape.affine_map(p_var, center, inv_half);
    parts.push_back(tape.posenc(pn, field.cfg.enc_location));
  }
  const Var in = tape.concat(std::span<const Var>(parts.data(), parts.size()));
  const Var h = field.trunk2.forward(tape, in);
  return tape.sigmoid(field.rgb_head.forward(tape, h));
}

// ---- whole-field forward ----

struct ModelSet {
  FieldConfig cfg;
  Aabb bounds;
  Strategy strategy = Strategy::kLowRank;
  FieldPair background;
  std::map<std::string, FieldPair> class_fields;
  std::vector<Parameter> latents;  // index-aligned with scene objects

  FieldPair& field_for(const SceneGraph& scene, int component) {
    if (component == kBackgroundComponent) return background;
    return class_fields.at(scene.objects[component].class_id);
  }
  const FieldPair& field_for(const SceneGraph& scene, int component) const {
    if (component == kBackgroundComponent) return background;
    return class_fields.at(scene.objects[component].class_id);
  }
  Parameter* latent_for(int component) {
    return component == kBackgroundComponent ? nullptr : &latents[component];
  }
  const Vec* latent_value(int component) const {
    return component == kBackgroundComponent ? nullptr
                                             : &latents[component].value;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    background.collect(out);
    for (auto& [id, f] : class_fields) f.collect(out);
    for (Parameter& l : latents) out.push_back(&l);
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  TransientContext transients(const SamplePoint& s) const {
    return TransientContext{s.d_canonical, s.p_obj, bounds.center(),
                            bounds.half_extent()};
  }
};

// Deterministic model construction; parameter order is fixed by the scene
// (background, then classes sorted by id, then object latents in scene
// order), which the checkpoint and optimizer state rely on.
inline ModelSet build_model(const SceneGraph& scene, const FieldConfig& cfg,
                            Strategy strategy, uint64_t seed) {
  ModelSet m;
  m.cfg = cfg;
  m.bounds = scene.bounds;
  m.strategy = strategy;
  const bool with_codec = strategy == Strategy::kEncDec;
  Rng rng(seed);
  m.background = FieldPair("bg", false, cfg, rng, with_codec);
  std::vector<std::string> class_ids;
  for (const ObjectTrack& o : scene.objects)
    if (std::find(class_ids.begin(), class_ids.end(), o.class_id) ==
        class_ids.end())
      class_ids.push_back(o.class_id);
  std::sort(class_ids.begin(), class_ids.end());
  for (const std::string& c : class_ids)
    m.class_fields.emplace(c, FieldPair("class." + c, true, cfg, rng, with_codec));
  std::uniform_real_distribution<double> latent_dist(-0.01, 0.01);
  for (const ObjectTrack& o : scene.objects) {
    Parameter l("obj." + o.id + ".latent", cfg.latent_size);
    if (!o.latent.empty()) {
      if (static_cast<int>(o.latent.size()) != cfg.latent_size)
        throw std::invalid_argument("object " + o.id + ": latent size mismatch");
      l.value = o.latent;
    } else {
      for (double& v : l.value) v = latent_dist(rng);
    }
    m.latents.push_back(std::move(l));
  }
  return m;
}

inline RadianceSample full_forward(const ModelSet& model,
                                   const SceneGraph& scene,
                                   const SamplePoint& q) {
  const FieldPair& field = model.field_for(scene, q.component);
  const FirstStageOut first =
      eval_first_stage(field, q.x_field, model.latent_value(q.component));
  const Vec y = reconstruct_feature(first.factors, field.z.value, field.cfg.rank);
  RadianceSample out;
  out.rgb = eval_color_head(field, y, model.transients(q));
  out.sigma = first.sigma;
  out.score = first.score;
  out.factors = first.factors;
  return out;
}

// Sum over omega in {r,g,b,sigma} of squared gradient norms with respect to
// the transient inputs: d_o and p_o for dynamic components, the viewing
// direction alone for the background. Accumulates into Parameter gradients
// as a side effect; callers that train afterwards must zero_grad().
inline double grad_norm_wrt_transients(ModelSet& model, const SceneGraph& scene,
                                       const SamplePoint& q) {
  FieldPair& field = model.field_for(scene, q.component);
  Tape tape;
  const Var x_in = first_stage_input(tape, field, q.x_field,
                                     model.latent_for(q.component));
  const FirstStageVars first = eval_first_stage(tape, field, x_in);
  const Var y = reconstruct_feature(tape, first.factors, tape.param(field.z),
                                    field.cfg.rank);
  const TransientContext t = model.transients(q);
  const Var d_leaf = tape.input(vec3_to_vec(t.d));
  Var p_leaf;
  if (field.dynamic) p_leaf = tape.input(vec3_to_vec(t.p_obj));
  const Var rgb = eval_color_head(tape, field, y, d_leaf, p_leaf, t);

  double total = 0.0;
  auto accumulate = [&] {
    const Vec& gd = tape.grad(d_leaf);
    for (double g : gd) total += g * g;
    if (field.dynamic) {
      const Vec& gp = tape.grad(p_leaf);
      for (double g : gp) total += g * g;
    }
  };
  for (int c = 0; c < 3; ++c) {
    Vec seed(3, 0.0);
    seed[c] = 1.0;
    tape.backward(rgb, seed);
    accumulate();
  }
  // sigma depends only on position; its transient gradient is structurally
  // zero but is included to match the definition.
  tape.backward(first.sigma, Vec{1.0});
  accumulate();
  return total;
}

}  // namespace cfnsg
