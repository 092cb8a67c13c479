#pragma once

#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cfnsg/cache.hpp"
#include "cfnsg/fields.hpp"
#include "cfnsg/image.hpp"
#include "cfnsg/render_rays.hpp"
#include "cfnsg/reuse.hpp"
#include "cfnsg/volume.hpp"

namespace cfnsg {

enum class RenderMode { kBaseline, kCfInference, kNaive, kMixedTrain };

// One bin store per scene component.
struct StoreSet {
  BinStore background;
  std::vector<BinStore> objects;

  StoreSet() = default;
  StoreSet(const SceneGraph& scene, Strategy strategy, int bins_per_axis,
           const FieldConfig& cfg) {
    const int flen = feature_len_for(strategy, cfg);
    background = BinStore(strategy, bins_per_axis, flen);
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      objects.emplace_back(strategy, bins_per_axis, flen);
  }

  BinStore& for_component(int component) {
    return component == kBackgroundComponent ? background : objects[component];
  }
  const BinStore& for_component(int component) const {
    return component == kBackgroundComponent ? background : objects[component];
  }

  std::size_t memory_usage() const {
    std::size_t total = background.memory_usage();
    for (const BinStore& s : objects) total += s.memory_usage();
    return total;
  }
  std::size_t entries() const {
    std::size_t total = background.size();
    for (const BinStore& s : objects) total += s.size();
    return total;
  }
};

// Eq.-1 compositing over per-sample emissions. Samples must be sorted by t;
// a nullopt sample was skipped and contributes zero density (its delta slot
// is kept so the discretization matches the all-full render).
inline Vec3 composite(const std::vector<std::optional<RadianceSample>>& emitted,
                      const std::vector<SamplePoint>& samples) {
  const std::size_t n = samples.size();
  std::vector<double> rgb(3 * n, 0.0), sigma(n, 0.0), delta(n);
  for (std::size_t i = 0; i < n; ++i) {
    delta[i] = samples[i].delta;
    if (emitted[i]) {
      rgb[3 * i] = emitted[i]->rgb.x;
      rgb[3 * i + 1] = emitted[i]->rgb.y;
      rgb[3 * i + 2] = emitted[i]->rgb.z;
      sigma[i] = emitted[i]->sigma;
    }
  }
  Vec3 out;
  double o[3];
  composite_raw(rgb.data(), sigma.data(), delta.data(), n, o);
  out.x = o[0];
  out.y = o[1];
  out.z = o[2];
  return out;
}

// Plain (tape-free) convenience overload used by tests.
inline Vec3 composite(const std::vector<RadianceSample>& emitted,
                      const std::vector<SamplePoint>& samples) {
  std::vector<std::optional<RadianceSample>> opt(emitted.begin(), emitted.end());
  return composite(opt, samples);
}

inline int render_thread_count() {
  if (const char* env = std::getenv("CFNSG_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

// Renders one frame. Baseline ignores the stores; CF and Naive route each
// query through the stores and tally the per-path counters; MixedTrain runs
// the training-time dual pass (and applies its bin writes after the frame).
// Pixels are independent, so the threaded path is deterministic.
inline Image render_image(const ModelSet& model, const SceneGraph& scene,
                          const StoreSet* stores, const Camera& camera,
                          int frame, RenderMode mode, const ReuseConfig& cfg,
                          PathCounters* counters_out = nullptr) {
  if ((mode == RenderMode::kCfInference || mode == RenderMode::kNaive) &&
      stores == nullptr)
    throw std::invalid_argument("render_image: mode requires filled stores");
  Image img(camera.width, camera.height);
  PathCounters counters;

  if (mode == RenderMode::kMixedTrain) {
    // Serial: this mode mutates the stores.
    StoreSet* mut = const_cast<StoreSet*>(stores);
    if (mut == nullptr)
      throw std::invalid_argument("render_image: mixed-train requires stores");
    std::vector<PendingWrite> writes;
    ModelSet& m = const_cast<ModelSet&>(model);
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = generate_ray(camera, x, y, frame);
        const auto samples = sample_ray(ray, scene, frame);
        std::vector<std::optional<RadianceSample>> emitted(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
          BinStore& store = mut->for_component(samples[i].component);
          RadianceSample full = full_forward(model, scene, samples[i]);
          const BinIndex idx = bin_index_of(scene, samples[i], store.bins_per_axis());
          const bool pre = store.exists(idx);
          Vec code;
          if (store.strategy() == Strategy::kEncDec) {
            const FieldPair& f = m.field_for(scene, samples[i].component);
            const Vec y_full = reconstruct_feature(full.factors, f.z.value, f.cfg.rank);
            code = encode_decode(*f.codec, y_full).first;
          }
          writes.push_back(PendingWrite{
              samples[i].component, idx,
              make_payload(store.strategy(), full.factors,
                           code.empty() ? nullptr : &code, full.rgb, full.sigma,
                           full.score)});
          if (pre) {
            // Reuse rgb from the cached payload, then Eq. 3 with the
            // current score; sigma slot is the current density.
            const BinPayload& p = store.retrieve(idx);
            Vec3 rgb_reuse;
            if (store.strategy() == Strategy::kLowRank) {
              const FieldPair& f = model.field_for(scene, samples[i].component);
              Vec factors(p.feature.begin(), p.feature.end());
              const Vec yv = reconstruct_feature(factors, f.z.value, f.cfg.rank);
              rgb_reuse = eval_color_head(f, yv, model.transients(samples[i]));
            } else if (store.strategy() == Strategy::kEncDec) {
              const FieldPair& f = model.field_for(scene, samples[i].component);
              Vec codev(p.feature.begin(), p.feature.end());
              const Vec yv = f.codec->dec.forward(codev);
              rgb_reuse = eval_color_head(f, yv, model.transients(samples[i]));
            } else {
              rgb_reuse = Vec3{p.feature[0], p.feature[1], p.feature[2]};
            }
            const double s = full.score;
            RadianceSample mixed = full;
            mixed.rgb = rgb_reuse * s + full.rgb * (1.0 - s);
            emitted[i] = mixed;
          } else {
            emitted[i] = full;
          }
        }
        const Vec3 c = composite(emitted, samples);
        double* p = img.px(x, y);
        p[0] = c.x;
        p[1] = c.y;
        p[2] = c.z;
      }
    for (PendingWrite& w : writes)
      mut->for_component(w.component).update(w.idx, std::move(w.payload));
    if (counters_out) *counters_out += counters;
    return img;
  }

  const int threads = render_thread_count();
  std::vector<PathCounters> per_thread(threads);
  auto run_rows = [&](int tid, int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = generate_ray(camera, x, y, frame);
        const auto samples = sample_ray(ray, scene, frame);
        std::vector<std::optional<RadianceSample>> emitted(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
          if (mode == RenderMode::kBaseline) {
            per_thread[tid].count(PathDecision::kFull,
                                  samples[i].component != kBackgroundComponent);
            emitted[i] = full_forward(model, scene, samples[i]);
          } else {
            const BinStore& store = stores->for_component(samples[i].component);
            emitted[i] = infer_query(model, scene, store, samples[i], cfg,
                                     per_thread[tid], mode == RenderMode::kNaive);
          }
        }
        const Vec3 c = composite(emitted, samples);
        double* p = img.px(x, y);
        p[0] = c.x;
        p[1] = c.y;
        p[2] = c.z;
      }
  };
  if (threads == 1) {
    run_rows(0, 0, camera.height);
  } else {
    std::vector<std::thread> pool;
    const int rows = (camera.height + threads - 1) / threads;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back(run_rows, t, std::min(t * rows, camera.height),
                        std::min((t + 1) * rows, camera.height));
    for (auto& th : pool) th.join();
  }
  for (const PathCounters& c : per_thread) counters += c;
  if (counters_out) *counters_out += counters;
  return img;
}

// Rewrites every bin the training rays touch with payloads from the frozen
// model, sweeping all frames in order (last writer wins).
inline void bake_stores(const ModelSet& model, const SceneGraph& scene,
                        const Camera& camera, StoreSet& stores) {
  ModelSet& m = const_cast<ModelSet&>(model);
  for (int f = 0; f < scene.frame_count; ++f)
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = generate_ray(camera, x, y, f);
        for (const SamplePoint& q : sample_ray(ray, scene, f)) {
          BinStore& store = stores.for_component(q.component);
          const RadianceSample full = full_forward(model, scene, q);
          Vec code;
          if (store.strategy() == Strategy::kEncDec) {
            const FieldPair& fld = m.field_for(scene, q.component);
            const Vec yv =
                reconstruct_feature(full.factors, fld.z.value, fld.cfg.rank);
            code = encode_decode(*fld.codec, yv).first;
          }
          store.update(bin_index_of(scene, q, store.bins_per_axis()),
                       make_payload(store.strategy(), full.factors,
                                    code.empty() ? nullptr : &code, full.rgb,
                                    full.sigma, full.score));
        }
      }
}

// Fills a naive-baseline store: cached rgb/sigma plus the transient-gradient
// norm, computed once per bin write from the frozen model.
inline void bake_naive_store(ModelSet& model, const SceneGraph& scene,
                             const Camera& camera, StoreSet& stores,
                             const std::vector<int>& frames) {
  for (int f : frames)
    for (int y = 0; y < camera.height; ++y)
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = generate_ray(camera, x, y, f);
        for (const SamplePoint& q : sample_ray(ray, scene, f)) {
          BinStore& store = stores.for_component(q.component);
          const RadianceSample full = full_forward(model, scene, q);
          const double gnorm = grad_norm_wrt_transients(model, scene, q);
          store.update(bin_index_of(scene, q, store.bins_per_axis()),
                       make_payload(Strategy::kNaiveRgb, full.factors, nullptr,
                                    full.rgb, full.sigma, full.score, gnorm));
        }
      }
  model.zero_grad();
}

}  // namespace cfnsg
