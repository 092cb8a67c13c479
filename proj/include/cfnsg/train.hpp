#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfnsg/image.hpp"
#include "cfnsg/render.hpp"
#include "cfnsg/reuse.hpp"

namespace cfnsg {

struct TrainConfig {
  double lambda = 1e-8;        // score-regularizer coefficient
  double latent_prior_v = 1.0; // Gaussian-prior variance on object latents
  double lr = 5e-4;
  double lr_decay = 1.0;       // per-step multiplier; 1 = constant
  int batch_rays = 64;
  int warmup_steps = 4000;
  int finetune_steps = 2000;
  uint64_t seed = 42;
  double score_clamp = 1e-3;   // floor inside the 1/s^2 regularizer
  int checkpoint_every = 0;    // steps between checkpoints; 0 = final only

  void validate() const {
    if (lambda < 0) throw std::invalid_argument("train: lambda must be >= 0");
    if (latent_prior_v <= 0) throw std::invalid_argument("train: v must be > 0");
    if (warmup_steps < 0 || finetune_steps < 0)
      throw std::invalid_argument("train: negative step count");
    if (batch_rays < 1) throw std::invalid_argument("train: batch_rays < 1");
  }
};

enum class Phase { kWarmup, kConsistency };

inline const char* phase_name(Phase p) {
  return p == Phase::kWarmup ? "warmup" : "consistency";
}

// Adaptive moment estimation with bias correction; beta = (0.9, 0.999),
// eps = 1e-8. State is index-aligned with the parameter list.
class Adam {
 public:
  explicit Adam(const std::vector<Parameter*>& params) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Parameter* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(const std::vector<Parameter*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      Vec& m = m_[i];
      Vec& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = p.grad[j];
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g;
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
        p.value[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::vector<Vec> m_, v_;
  int64_t t_ = 0;
};

struct RayBatchEntry {
  int frame = 0, px = 0, py = 0;
  Vec3 target;
};

struct LossParts {
  double total = 0, photometric = 0, mixed = 0, score_reg = 0,
         latent_prior = 0;
};

// Full forward of one query on tape (no cache interaction); used by the
// warmup phase and by gradient checks.
inline TrainPathVars full_forward_vars(Tape& tape, ModelSet& model,
                                       const SceneGraph& scene,
                                       const SamplePoint& q) {
  FieldPair& field = model.field_for(scene, q.component);
  const TransientContext t = model.transients(q);
  const Var x_in = first_stage_input(tape, field, q.x_field,
                                     model.latent_for(q.component));
  const FirstStageVars first = eval_first_stage(tape, field, x_in);
  const Var y = reconstruct_feature(tape, first.factors, tape.param(field.z),
                                    field.cfg.rank);
  const Var d_var = tape.constant(vec3_to_vec(t.d));
  Var p_var;
  if (field.dynamic) p_var = tape.constant(vec3_to_vec(t.p_obj));
  TrainPathVars out;
  out.rgb_full = eval_color_head(tape, field, y, d_var, p_var, t);
  out.sigma_full = first.sigma;
  out.score_full = first.score;
  return out;
}

// Builds the batch objective on tape.
//   Warmup:      sum_r ||C_hat - C||^2 + (1/v) sum_o ||l_o||^2
//   Consistency: sum_r [||C_hat - C||^2 + ||C_hat_mixed - C||^2]
//                + lambda * sum_q 1/max(s_q, clamp)^2 + (1/v) sum_o ||l_o||^2
// Rays whose bins were all fresh use the full outputs inside the mixed
// composite. Consistency mode also queues one bin write per query.
inline Var compute_loss(Tape& tape, ModelSet& model, const SceneGraph& scene,
                        StoreSet& stores, const std::vector<RayBatchEntry>& batch,
                        const Camera& camera, Phase phase,
                        const TrainConfig& cfg,
                        std::vector<PendingWrite>& writes,
                        LossParts* parts_out = nullptr) {
  std::vector<Var> photo_terms, mixed_terms, reg_terms;
  for (const RayBatchEntry& entry : batch) {
    const Ray ray = generate_ray(camera, entry.px, entry.py, entry.frame);
    const auto samples = sample_ray(ray, scene, entry.frame);
    std::vector<Var> rgb_full, sigma_full, rgb_mixed, sigma_mixed;
    std::vector<double> deltas;
    for (const SamplePoint& q : samples) {
      TrainPathVars vars;
      if (phase == Phase::kWarmup) {
        vars = full_forward_vars(tape, model, scene, q);
      } else {
        vars = train_paths(tape, model, scene,
                           stores.for_component(q.component), q, writes);
        reg_terms.push_back(tape.score_reg(vars.score_full, cfg.score_clamp));
      }
      rgb_full.push_back(vars.rgb_full);
      sigma_full.push_back(vars.sigma_full);
      rgb_mixed.push_back(vars.mixed ? vars.rgb_mixed : vars.rgb_full);
      sigma_mixed.push_back(vars.mixed ? vars.sigma_mixed : vars.sigma_full);
      deltas.push_back(q.delta);
    }
    const Var target = tape.constant(vec3_to_vec(entry.target));
    if (!samples.empty()) {
      const Var c_full = tape.composite(rgb_full, sigma_full, deltas);
      photo_terms.push_back(tape.sq_norm(tape.sub(c_full, target)));
      if (phase == Phase::kConsistency) {
        const Var c_mixed = tape.composite(rgb_mixed, sigma_mixed, deltas);
        mixed_terms.push_back(tape.sq_norm(tape.sub(c_mixed, target)));
      }
    } else {
      photo_terms.push_back(tape.sq_norm(target));  // all-miss ray: C_hat = 0
    }
  }

  std::vector<Var> total_terms;
  Var photo = tape.sum(photo_terms);
  total_terms.push_back(photo);
  Var mixed, reg, prior;
  if (!mixed_terms.empty()) {
    mixed = tape.sum(mixed_terms);
    total_terms.push_back(mixed);
  }
  if (!reg_terms.empty() && cfg.lambda > 0.0) {
    reg = tape.scale(tape.sum(reg_terms), cfg.lambda);
    total_terms.push_back(reg);
  }
  if (!model.latents.empty()) {
    std::vector<Var> latent_terms;
    for (Parameter& l : model.latents)
      latent_terms.push_back(tape.sq_norm(tape.param(l)));
    prior = tape.scale(tape.sum(latent_terms), 1.0 / cfg.latent_prior_v);
    total_terms.push_back(prior);
  }
  const Var total = tape.sum(total_terms);
  if (parts_out) {
    parts_out->total = tape.value(total)[0];
    parts_out->photometric = tape.value(photo)[0];
    parts_out->mixed = mixed.valid() ? tape.value(mixed)[0] : 0.0;
    parts_out->score_reg = reg.valid() ? tape.value(reg)[0] : 0.0;
    parts_out->latent_prior = prior.valid() ? tape.value(prior)[0] : 0.0;
  }
  return total;
}

struct LossRow {
  int step = 0;
  Phase phase = Phase::kWarmup;
  LossParts parts;
};

inline void write_loss_csv_header(std::ostream& os) {
  os << "step,phase,total,photometric,mixed,score_reg,latent_prior\n";
}
inline void write_loss_csv_row(std::ostream& os, const LossRow& row) {
  os << row.step << ',' << phase_name(row.phase) << ',' << row.parts.total
     << ',' << row.parts.photometric << ',' << row.parts.mixed << ','
     << row.parts.score_reg << ',' << row.parts.latent_prior << '\n';
}

// Two-phase schedule: warmup on the photometric + latent-prior objective
// with no cache interaction, then the consistency phase with the dual-pass
// objective and per-step bin writes (applied after each optimizer step).
inline std::vector<LossRow> train(
    ModelSet& model, const SceneGraph& scene, const Camera& camera,
    const std::vector<Image>& gt_frames, StoreSet& stores,
    const TrainConfig& cfg, std::ostream* csv = nullptr,
    const std::function<void(int)>& step_callback = {}) {
  cfg.validate();
  if (static_cast<int>(gt_frames.size()) != scene.frame_count)
    throw std::invalid_argument("train: need one oracle frame per scene frame");

  std::vector<Parameter*> params = model.parameters();
  Adam opt(params);
  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> frame_dist(0, scene.frame_count - 1);
  std::uniform_int_distribution<int> px_dist(0, camera.width - 1);
  std::uniform_int_distribution<int> py_dist(0, camera.height - 1);

  std::vector<LossRow> trace;
  if (csv) write_loss_csv_header(*csv);
  const int total_steps = cfg.warmup_steps + cfg.finetune_steps;
  double lr = cfg.lr;
  for (int step = 0; step < total_steps; ++step) {
    const Phase phase =
        step < cfg.warmup_steps ? Phase::kWarmup : Phase::kConsistency;
    std::vector<RayBatchEntry> batch(cfg.batch_rays);
    for (RayBatchEntry& e : batch) {
      e.frame = frame_dist(rng);
      e.px = px_dist(rng);
      e.py = py_dist(rng);
      const double* p = gt_frames[e.frame].px(e.px, e.py);
      e.target = Vec3{p[0], p[1], p[2]};
    }

    Tape tape;
    std::vector<PendingWrite> writes;
    LossParts parts;
    const Var loss = compute_loss(tape, model, scene, stores, batch, camera,
                                  phase, cfg, writes, &parts);
    if (!std::isfinite(parts.total))
      throw std::runtime_error(
          "training diverged: non-finite loss at step " + std::to_string(step) +
          " (" + phase_name(phase) + " phase)");
    tape.backward(loss, Vec{1.0});
    opt.step(params, lr);
    for (Parameter* p : params) p->zero_grad();
    for (PendingWrite& w : writes)
      stores.for_component(w.component).update(w.idx, std::move(w.payload));

    LossRow row{step, phase, parts};
    trace.push_back(row);
    if (csv) write_loss_csv_row(*csv, row);
    if (step_callback) step_callback(step);
    lr *= cfg.lr_decay;
  }
  return trace;
}

}  // namespace cfnsg
