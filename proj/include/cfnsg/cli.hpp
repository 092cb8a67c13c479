#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfnsg/checkpoint.hpp"
#include "cfnsg/config.hpp"
#include "cfnsg/cost.hpp"
#include "cfnsg/metrics.hpp"
#include "cfnsg/redundancy.hpp"
#include "cfnsg/render.hpp"
#include "cfnsg/scene_io.hpp"
#include "cfnsg/train.hpp"

namespace cfnsg {

namespace fs = std::filesystem;

struct RunContext {
  RunConfig cfg;
  SceneBundle scene;
  std::vector<Image> gt;

  static RunContext load(const std::string& config_path, bool with_gt = true) {
    RunContext ctx;
    ctx.cfg = RunConfig::load(config_path);
    ctx.scene = load_scene(ctx.cfg.scene_path, ctx.cfg.fields.latent_size);
    if (with_gt)
      for (int f = 0; f < ctx.scene.graph.frame_count; ++f)
        ctx.gt.push_back(
            render_ground_truth(ctx.scene.synth, ctx.scene.graph, ctx.scene.camera, f));
    return ctx;
  }

  std::string checkpoint_path() const {
    return (fs::path(cfg.out_dir) / "model.ckpt").string();
  }
  std::string store_path(int component) const {
    const std::string name =
        component == kBackgroundComponent
            ? "bg"
            : "obj_" + scene.graph.objects[component].id;
    return (fs::path(cfg.out_dir) / ("cache_" + name + ".bin")).string();
  }
};

inline void save_stores(const RunContext& ctx, const StoreSet& stores) {
  stores.background.save(ctx.store_path(kBackgroundComponent));
  for (std::size_t i = 0; i < stores.objects.size(); ++i)
    stores.objects[i].save(ctx.store_path(static_cast<int>(i)));
}

inline bool stores_exist(const RunContext& ctx) {
  if (!fs::exists(ctx.store_path(kBackgroundComponent))) return false;
  for (std::size_t i = 0; i < ctx.scene.graph.objects.size(); ++i)
    if (!fs::exists(ctx.store_path(static_cast<int>(i)))) return false;
  return true;
}

inline StoreSet load_stores(const RunContext& ctx) {
  StoreSet stores;
  stores.background = BinStore::load(ctx.store_path(kBackgroundComponent));
  for (std::size_t i = 0; i < ctx.scene.graph.objects.size(); ++i)
    stores.objects.push_back(BinStore::load(ctx.store_path(static_cast<int>(i))));
  return stores;
}

inline ModelSet load_model(const RunContext& ctx) {
  const std::string path = ctx.checkpoint_path();
  if (!fs::exists(path))
    throw std::runtime_error("checkpoint does not exist: " + path +
                             " (run `cfnsg train` first)");
  ModelSet model = build_model(ctx.scene.graph, ctx.cfg.fields,
                               ctx.cfg.strategy, ctx.cfg.train.seed);
  std::vector<Parameter*> params = model.parameters();
  load_checkpoint(path, params);
  return model;
}

inline std::string frame_image_name(const std::string& stem, int frame) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_f%03d.ppm", frame);
  return stem + buf;
}

inline RenderMode parse_mode(const std::string& mode) {
  if (mode == "baseline") return RenderMode::kBaseline;
  if (mode == "cf") return RenderMode::kCfInference;
  if (mode == "naive") return RenderMode::kNaive;
  if (mode == "mixed") return RenderMode::kMixedTrain;
  throw std::invalid_argument("unknown render mode: " + mode);
}

inline int cmd_train(const std::string& config_path) {
  RunContext ctx = RunContext::load(config_path);
  fs::create_directories(ctx.cfg.out_dir);
  ModelSet model = build_model(ctx.scene.graph, ctx.cfg.fields, ctx.cfg.strategy,
                               ctx.cfg.train.seed);
  StoreSet stores(ctx.scene.graph, ctx.cfg.strategy, ctx.cfg.bins_per_axis,
                  ctx.cfg.fields);
  std::ofstream loss_csv(fs::path(ctx.cfg.out_dir) / "loss.csv");
  std::cout << "training " << ctx.cfg.train.warmup_steps << " warmup + "
            << ctx.cfg.train.finetune_steps << " consistency steps...\n";
  std::vector<Parameter*> live_params = model.parameters();
  const int every = ctx.cfg.train.checkpoint_every;
  const auto trace = train(
      model, ctx.scene.graph, ctx.scene.camera, ctx.gt, stores, ctx.cfg.train,
      &loss_csv, [&](int step) {
        if (every > 0 && step > 0 && step % every == 0) {
          char name[32];
          std::snprintf(name, sizeof name, "model_step%06d.ckpt", step);
          save_checkpoint((fs::path(ctx.cfg.out_dir) / name).string(),
                          live_params);
        }
      });
  // Refresh every touched bin from the final weights so inference reuses
  // payloads consistent with the shipped checkpoint.
  bake_stores(model, ctx.scene.graph, ctx.scene.camera, stores);
  save_checkpoint(ctx.checkpoint_path(), live_params);
  save_stores(ctx, stores);
  std::cout << "final loss " << (trace.empty() ? 0.0 : trace.back().parts.total)
            << ", cache entries " << stores.entries() << ", payload bytes "
            << stores.memory_usage() << "\n"
            << "checkpoint: " << ctx.checkpoint_path() << "\n";
  return 0;
}

inline StoreSet obtain_stores(const RunContext& ctx, ModelSet& model,
                              RenderMode mode) {
  if (mode == RenderMode::kNaive) {
    const std::string path =
        (fs::path(ctx.cfg.out_dir) / "cache_naive_bg.bin").string();
    if (fs::exists(path)) {
      StoreSet stores;
      stores.background = BinStore::load(path);
      for (std::size_t i = 0; i < ctx.scene.graph.objects.size(); ++i)
        stores.objects.push_back(BinStore::load(
            (fs::path(ctx.cfg.out_dir) /
             ("cache_naive_obj_" + ctx.scene.graph.objects[i].id + ".bin"))
                .string()));
      return stores;
    }
    std::cout << "baking naive-baseline store (rgb/sigma + gradient norms)...\n";
    StoreSet stores(ctx.scene.graph, Strategy::kNaiveRgb, ctx.cfg.bins_per_axis,
                    ctx.cfg.fields);
    std::vector<int> frames(ctx.scene.graph.frame_count);
    for (int f = 0; f < ctx.scene.graph.frame_count; ++f) frames[f] = f;
    bake_naive_store(model, ctx.scene.graph, ctx.scene.camera, stores, frames);
    stores.background.save(path);
    for (std::size_t i = 0; i < stores.objects.size(); ++i)
      stores.objects[i].save(
          (fs::path(ctx.cfg.out_dir) /
           ("cache_naive_obj_" + ctx.scene.graph.objects[i].id + ".bin"))
              .string());
    return stores;
  }
  if (stores_exist(ctx)) return load_stores(ctx);
  std::cout << "cache snapshots missing; baking from the checkpoint...\n";
  StoreSet stores(ctx.scene.graph, ctx.cfg.strategy, ctx.cfg.bins_per_axis,
                  ctx.cfg.fields);
  bake_stores(model, ctx.scene.graph, ctx.scene.camera, stores);
  return stores;
}

inline int render_frames(const RunContext& ctx, ModelSet& model,
                         const SceneGraph& scene, RenderMode mode,
                         const std::vector<int>& frames,
                         const std::string& stem) {
  std::unique_ptr<StoreSet> stores;
  if (mode != RenderMode::kBaseline)
    stores = std::make_unique<StoreSet>(obtain_stores(ctx, model, mode));
  std::ofstream counters_csv(fs::path(ctx.cfg.out_dir) /
                             ("counters_" + stem + ".csv"));
  write_counters_csv_header(counters_csv);
  PathCounters total;
  for (int f : frames) {
    PathCounters c;
    const Image img = render_image(model, scene, stores.get(), ctx.scene.camera,
                                   f, mode, ctx.cfg.reuse, &c);
    write_ppm(img, (fs::path(ctx.cfg.out_dir) / frame_image_name(stem, f)).string());
    write_counters_csv_row(counters_csv, f, c);
    total += c;
  }
  const CostReport cost = count_cost(total, ctx.cfg.fields, ctx.cfg.strategy);
  std::cout << stem << ": " << frames.size() << " frame(s), full fraction "
            << total.full_fraction() << ", queries ratio " << cost.queries_ratio
            << ", network FLOPs " << cost.flops << "\n";
  return 0;
}

inline int cmd_render(const std::string& config_path, const std::string& mode_s,
                      int frame, bool all_frames) {
  RunContext ctx = RunContext::load(config_path, /*with_gt=*/false);
  fs::create_directories(ctx.cfg.out_dir);
  const RenderMode mode = parse_mode(mode_s);
  ModelSet model = load_model(ctx);
  std::vector<int> frames;
  if (all_frames)
    for (int f = 0; f < ctx.scene.graph.frame_count; ++f) frames.push_back(f);
  else
    frames.push_back(frame);
  for (int f : frames)
    if (f < 0 || f >= ctx.scene.graph.frame_count)
      throw std::invalid_argument("frame out of range: " + std::to_string(f));
  return render_frames(ctx, model, ctx.scene.graph, mode, frames,
                       "render_" + mode_s);
}

inline int cmd_manipulate(const std::string& config_path,
                          const std::string& object_id, const Vec3& translate,
                          double rotate_yaw_deg, const std::string& mode_s,
                          int frame, bool all_frames) {
  RunContext ctx = RunContext::load(config_path, /*with_gt=*/false);
  fs::create_directories(ctx.cfg.out_dir);
  ModelSet model = load_model(ctx);
  const SceneGraph& scene = ctx.scene.graph;
  const int idx = scene.object_index(object_id);
  const double yaw = rotate_yaw_deg * std::numbers::pi / 180.0;
  std::vector<Pose> track = scene.objects[idx].poses;
  for (Pose& p : track) {
    p.translation += translate;
    p.rotation = p.rotation * rotation_ypr(yaw, 0.0, 0.0);
  }
  const SceneGraph edited = manipulate(scene, object_id, track);
  std::vector<int> frames;
  if (all_frames)
    for (int f = 0; f < scene.frame_count; ++f) frames.push_back(f);
  else
    frames.push_back(frame);
  return render_frames(ctx, model, edited, parse_mode(mode_s), frames,
                       "manipulated_" + mode_s);
}

inline int cmd_analyze_redundancy(const std::string& config_path,
                                  const std::string& component_id) {
  RunContext ctx = RunContext::load(config_path, /*with_gt=*/false);
  fs::create_directories(ctx.cfg.out_dir);
  ModelSet model = load_model(ctx);
  int component = kBackgroundComponent;
  if (!component_id.empty() && component_id != "bg")
    component = ctx.scene.graph.object_index(component_id);
  else if (component_id.empty() && !ctx.scene.graph.objects.empty())
    component = 0;  // default: first dynamic object
  const RedundancyHistory history =
      collect_redundancy(model, ctx.scene.graph, ctx.scene.camera, component,
                         ctx.cfg.bins_per_axis);
  std::vector<double> eps_grid;
  for (double e = 0.0; e <= 1.0 + 1e-12; e += 0.02) eps_grid.push_back(e);
  const auto ratios = analyze_redundancy(history, eps_grid);
  std::ofstream csv(fs::path(ctx.cfg.out_dir) / "redundancy.csv");
  write_redundancy_csv(csv, eps_grid, ratios);
  std::cout << "redundancy curve written to "
            << (fs::path(ctx.cfg.out_dir) / "redundancy.csv").string() << "\n";
  return 0;
}

// Sweeps the score threshold and reports quality versus cost against the
// same model's all-full render.
inline int cmd_bench(const std::string& config_path,
                     std::vector<double> taus) {
  RunContext ctx = RunContext::load(config_path);
  fs::create_directories(ctx.cfg.out_dir);
  ModelSet model = load_model(ctx);
  StoreSet stores = obtain_stores(ctx, model, RenderMode::kCfInference);
  if (taus.empty())
    for (double t = 0.0; t <= 1.0 + 1e-12; t += 0.1) taus.push_back(t);

  const SceneGraph& scene = ctx.scene.graph;
  std::vector<Image> baseline;
  PathCounters base_counters;
  for (int f = 0; f < scene.frame_count; ++f)
    baseline.push_back(render_image(model, scene, nullptr, ctx.scene.camera, f,
                                    RenderMode::kBaseline, ctx.cfg.reuse,
                                    &base_counters));
  const CostReport base_cost =
      count_cost(base_counters, ctx.cfg.fields, ctx.cfg.strategy);

  std::ofstream csv(fs::path(ctx.cfg.out_dir) / "bench.csv");
  csv << "tau,tau_sigma,full_fraction,reuse_fraction,skip_fraction,"
         "queries_ratio,flops,flops_ratio,psnr_vs_full,ssim_vs_full,"
         "psnr_vs_gt,payload_bytes\n";
  for (double tau : taus) {
    ReuseConfig rc = ctx.cfg.reuse;
    rc.tau = tau;
    PathCounters counters;
    double psnr_accum = 0.0, ssim_accum = 0.0, psnr_gt_accum = 0.0;
    for (int f = 0; f < scene.frame_count; ++f) {
      const Image img = render_image(model, scene, &stores, ctx.scene.camera, f,
                                     RenderMode::kCfInference, rc, &counters);
      psnr_accum += psnr(img, baseline[f]);
      ssim_accum += ssim(img, baseline[f]);
      psnr_gt_accum += psnr(img, ctx.gt[f]);
    }
    const CostReport cost = count_cost(counters, ctx.cfg.fields, ctx.cfg.strategy);
    const double n = scene.frame_count;
    csv << tau << ',' << rc.tau_sigma << ',' << counters.full_fraction() << ','
        << static_cast<double>(counters.reuse) / counters.total() << ','
        << static_cast<double>(counters.skip) / counters.total() << ','
        << cost.queries_ratio << ',' << cost.flops << ','
        << (base_cost.flops ? static_cast<double>(cost.flops) / base_cost.flops
                            : 0.0)
        << ',' << psnr_accum / n << ',' << ssim_accum / n << ','
        << psnr_gt_accum / n << ',' << stores.memory_usage() << '\n';
  }
  std::cout << "sweep written to "
            << (fs::path(ctx.cfg.out_dir) / "bench.csv").string() << "\n";
  return 0;
}

inline int cmd_ablate(const std::string& config_path,
                      const std::string& skip_rule,
                      const std::string& storage) {
  if (skip_rule.empty() == storage.empty())
    throw std::invalid_argument(
        "ablate: pass exactly one of --skip-rule or --storage");
  RunContext ctx = RunContext::load(config_path);
  fs::create_directories(ctx.cfg.out_dir);

  if (!skip_rule.empty()) {
    if (skip_rule != "score+density" && skip_rule != "density-only")
      throw std::invalid_argument("unknown skip rule: " + skip_rule);
    ModelSet model = load_model(ctx);
    StoreSet stores = obtain_stores(ctx, model, RenderMode::kCfInference);
    ReuseConfig rc = ctx.cfg.reuse;
    rc.skip_rule = skip_rule == "density-only" ? SkipRule::kDensityOnly
                                               : SkipRule::kScoreAndDensity;
    PathCounters counters;
    double psnr_accum = 0.0;
    for (int f = 0; f < ctx.scene.graph.frame_count; ++f) {
      const Image full = render_image(model, ctx.scene.graph, nullptr,
                                      ctx.scene.camera, f, RenderMode::kBaseline,
                                      rc, nullptr);
      const Image img = render_image(model, ctx.scene.graph, &stores,
                                     ctx.scene.camera, f,
                                     RenderMode::kCfInference, rc, &counters);
      psnr_accum += psnr(img, full);
    }
    std::cout << "skip rule " << skip_rule << ": full fraction "
              << counters.full_fraction() << ", skip fraction "
              << static_cast<double>(counters.skip) / counters.total()
              << ", psnr vs all-full "
              << psnr_accum / ctx.scene.graph.frame_count << " dB\n";
    return 0;
  }

  // Storage ablation: trains from scratch with the chosen payload strategy.
  const Strategy strategy = parse_strategy(storage);
  ModelSet model = build_model(ctx.scene.graph, ctx.cfg.fields, strategy,
                               ctx.cfg.train.seed);
  StoreSet stores(ctx.scene.graph, strategy, ctx.cfg.bins_per_axis,
                  ctx.cfg.fields);
  train(model, ctx.scene.graph, ctx.scene.camera, ctx.gt, stores,
        ctx.cfg.train, nullptr);
  bake_stores(model, ctx.scene.graph, ctx.scene.camera, stores);
  PathCounters counters;
  double psnr_full = 0.0, psnr_gt_a = 0.0;
  for (int f = 0; f < ctx.scene.graph.frame_count; ++f) {
    const Image full = render_image(model, ctx.scene.graph, nullptr,
                                    ctx.scene.camera, f, RenderMode::kBaseline,
                                    ctx.cfg.reuse, nullptr);
    const Image img = render_image(model, ctx.scene.graph, &stores,
                                   ctx.scene.camera, f, RenderMode::kCfInference,
                                   ctx.cfg.reuse, &counters);
    psnr_full += psnr(img, full);
    psnr_gt_a += psnr(img, ctx.gt[f]);
  }
  const double n = ctx.scene.graph.frame_count;
  std::cout << "storage " << storage << ": payload bytes "
            << stores.memory_usage() << " (" << stores.entries()
            << " bins), psnr vs all-full " << psnr_full / n
            << " dB, psnr vs ground truth " << psnr_gt_a / n
            << " dB, full fraction " << counters.full_fraction() << "\n";
  return 0;
}

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"consistency-field scene-graph renderer"};
  app.require_subcommand(1);

  std::string config_path, mode = "cf", object_id, component_id;
  std::string skip_rule, storage;
  int frame = 0;
  bool all_frames = false;
  std::vector<double> translate{0, 0, 0}, taus;
  double rotate_yaw = 0.0;

  auto* t = app.add_subcommand("train", "train a model and fill the caches");
  t->add_option("config", config_path, "run config file")->required();

  auto* r = app.add_subcommand("render", "render frames with a trained model");
  r->add_option("config", config_path, "run config file")->required();
  r->add_option("--mode", mode, "baseline | cf | naive | mixed");
  r->add_option("--frame", frame, "frame index");
  r->add_flag("--all-frames", all_frames, "render every frame");

  auto* m = app.add_subcommand("manipulate",
                               "re-arrange an object and render the result");
  m->add_option("config", config_path)->required();
  m->add_option("--object", object_id, "object id")->required();
  m->add_option("--translate", translate, "dx dy dz")->expected(3);
  m->add_option("--rotate-yaw", rotate_yaw, "degrees about the vertical axis");
  m->add_option("--mode", mode, "baseline | cf");
  m->add_option("--frame", frame, "frame index");
  m->add_flag("--all-frames", all_frames);

  auto* a = app.add_subcommand("analyze-redundancy",
                               "per-bin change ratios across frames");
  a->add_option("config", config_path)->required();
  a->add_option("--component", component_id, "object id or 'bg'");

  auto* b = app.add_subcommand("bench", "sweep tau: quality vs cost CSV");
  b->add_option("config", config_path)->required();
  b->add_option("--taus", taus, "tau values to sweep");

  auto* ab = app.add_subcommand("ablate", "skip-rule or storage ablations");
  ab->add_option("config", config_path)->required();
  ab->add_option("--skip-rule", skip_rule, "score+density | density-only");
  ab->add_option("--storage", storage, "lowrank | direct | encdec");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*t) return cmd_train(config_path);
    if (*r) return cmd_render(config_path, mode, frame, all_frames);
    if (*m)
      return cmd_manipulate(config_path, object_id,
                            Vec3{translate[0], translate[1], translate[2]},
                            rotate_yaw, mode, frame, all_frames);
    if (*a) return cmd_analyze_redundancy(config_path, component_id);
    if (*b) return cmd_bench(config_path, taus);
    if (*ab) return cmd_ablate(config_path, skip_rule, storage);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cfnsg
