#include <gtest/gtest.h>

#include <cstring>

#include "cfnsg/fields.hpp"
#include "test_util.hpp"

using namespace cfnsg;
using testutil::central_diff;
using testutil::random_unit;
using testutil::random_vec;
using testutil::rel_close;

namespace {

FieldConfig small_config() {
  FieldConfig cfg;
  cfg.first_stage_layers = 2;
  cfg.first_stage_width = 24;
  cfg.second_stage_layers = 2;
  cfg.second_stage_width = 16;
  cfg.enc_position = 3;
  cfg.enc_direction = 2;
  cfg.enc_location = 1;
  cfg.rank = 2;  // l = 16
  cfg.latent_size = 4;
  return cfg;
}

SceneGraph one_object_scene(int frames = 4) {
  SceneGraph scene;
  scene.frame_count = frames;
  scene.bounds = {{-8, -8, -2}, {8, 8, 12}};
  scene.planes.normal_axis = 2;
  scene.planes.offsets = {6, 7, 8};
  ObjectTrack box;
  box.id = "box";
  box.class_id = "box";
  for (int f = 0; f < frames; ++f)
    box.poses.push_back(Pose::from_yaw({0.1 * f, 0.2, 3.0}, 0.0, {1, 1, 1}));
  scene.objects.push_back(box);
  scene.validate();
  return scene;
}

SamplePoint dynamic_query(const Vec3& x_o, const Vec3& d, const Vec3& p) {
  SamplePoint q;
  q.component = 0;
  q.x_field = x_o;
  q.d_canonical = d;
  q.p_obj = p;
  return q;
}

TEST(FieldPair, DeterministicConstructionAndEval) {
  const SceneGraph scene = one_object_scene();
  ModelSet m1 = build_model(scene, small_config(), Strategy::kLowRank, 9);
  ModelSet m2 = build_model(scene, small_config(), Strategy::kLowRank, 9);
  const SamplePoint q = dynamic_query({0.2, -0.4, 0.6}, {0, 0, 1}, {0.1, 0.2, 3.0});
  const RadianceSample a = full_forward(m1, scene, q);
  const RadianceSample b = full_forward(m2, scene, q);
  EXPECT_EQ(a.rgb.x, b.rgb.x);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.score, b.score);
  const RadianceSample c = full_forward(m1, scene, q);
  EXPECT_EQ(a.rgb.y, c.rgb.y);  // bit-identical across calls
}

TEST(FieldPair, HeadRangesOverRandomInputs) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 3);
  Rng rng(4);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 x{random_vec(rng, 1)[0], random_vec(rng, 1)[0],
                 random_vec(rng, 1)[0]};
    const Vec latent = random_vec(rng, 4);
    const FirstStageOut out =
        eval_first_stage(model.class_fields.at("box"), x, &latent);
    EXPECT_GE(out.sigma, 0.0);
    EXPECT_GT(out.score, 0.0);
    EXPECT_LT(out.score, 1.0);
  }
}

TEST(FieldPair, LatentShapeMismatchThrows) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 3);
  Rng rng(1);
  const Vec bad = random_vec(rng, 7);
  EXPECT_THROW(eval_first_stage(model.class_fields.at("box"), {0, 0, 0}, &bad),
               std::invalid_argument);
  EXPECT_THROW(eval_first_stage(model.background, {0, 0, 0}, &bad),
               std::invalid_argument);
}

TEST(Reconstruct, ZeroFactorsGiveZ) {
  const int m = 4;
  Rng rng(5);
  const Vec z = random_vec(rng, 256);
  const Vec y = reconstruct_feature(Vec(16, 0.0), z, m);
  EXPECT_EQ(y, z);
}

TEST(Reconstruct, RankOneScalars) {
  // m=1: y = (a*b*c*d) + z
  const Vec y = reconstruct_feature({2.0, 3.0, 5.0, 7.0}, {0.0}, 1);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y[0], 2.0 * 3.0 * 5.0 * 7.0);
}

TEST(Reconstruct, MatchesNestedOuterProductOracle) {
  const int m = 2;
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec f = random_vec(rng, 4 * m);
    const Vec z = random_vec(rng, 16);
    const Vec y = reconstruct_feature(f, z, m);
    // independent brute-force nested loops
    for (int i1 = 0; i1 < m; ++i1)
      for (int j1 = 0; j1 < m; ++j1)
        for (int i2 = 0; i2 < m; ++i2)
          for (int j2 = 0; j2 < m; ++j2) {
            const std::size_t idx = ((i1 * m + j1) * m + i2) * m + j2;
            const double want =
                f[i1] * f[m + j1] * f[2 * m + i2] * f[3 * m + j2] + z[idx];
            EXPECT_NEAR(y[idx], want, 1e-12);
          }
  }
}

TEST(Reconstruct, MultilinearInEachFactor) {
  const int m = 4;
  Rng rng(7);
  const Vec f = random_vec(rng, 16);
  const Vec z = random_vec(rng, 256);
  Vec f_scaled = f;
  const double alpha = 2.75;
  for (int i = 0; i < m; ++i) f_scaled[i] *= alpha;  // scale v_{1,1}
  const Vec y = reconstruct_feature(f, z, m);
  const Vec ys = reconstruct_feature(f_scaled, z, m);
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_NEAR(ys[i] - z[i], alpha * (y[i] - z[i]), 1e-12);
}

TEST(Reconstruct, TapeMatchesPlain) {
  const int m = 4;
  Rng rng(8);
  const Vec f = random_vec(rng, 16);
  Parameter z("z", 256);
  z.value = random_vec(rng, 256);
  Tape tape;
  const Var y = reconstruct_feature(tape, tape.input(f), tape.param(z), m);
  EXPECT_EQ(tape.value(y), reconstruct_feature(f, z.value, m));
}

TEST(ColorHead, BoundedAndViewDependent) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 11);
  const FieldPair& field = model.class_fields.at("box");
  Rng rng(12);
  const Vec y = random_vec(rng, field.cfg.feature_size());
  TransientContext t{{0, 0, 1}, {0, 0, 3}, scene.bounds.center(),
                     scene.bounds.half_extent()};
  for (int i = 0; i < 10000; ++i) {
    t.d = random_unit(rng);
    const Vec3 rgb = eval_color_head(field, y, t);
    EXPECT_GT(rgb.x, 0.0);
    EXPECT_LT(rgb.x, 1.0);
    EXPECT_GT(rgb.y, 0.0);
    EXPECT_LT(rgb.z, 1.0);
  }
  t.d = {0, 0, 1};
  const Vec3 a = eval_color_head(field, y, t);
  t.d = {1, 0, 0};
  const Vec3 b = eval_color_head(field, y, t);
  EXPECT_NE(a.x, b.x);  // direction reaches rgb
}

TEST(FieldPair, SigmaScoreInvariantToTransients) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 13);
  Rng rng(14);
  const Vec3 x{0.3, -0.1, 0.8};
  const Vec latent = model.latents[0].value;
  const FirstStageOut ref =
      eval_first_stage(model.class_fields.at("box"), x, &latent);
  for (int i = 0; i < 100; ++i) {
    SamplePoint q = dynamic_query(x, random_unit(rng),
                                  Vec3{random_vec(rng, 1)[0], 0.0, 3.0});
    const RadianceSample out = full_forward(model, scene, q);
    EXPECT_EQ(out.sigma, ref.sigma);
    EXPECT_EQ(out.score, ref.score);
  }
}

TEST(FieldPair, FullForwardEqualsManualComposition) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 15);
  const SamplePoint q = dynamic_query({0.4, 0.2, -0.6}, {0, 1, 0}, {0.2, 0.2, 3.0});
  const RadianceSample full = full_forward(model, scene, q);

  const FieldPair& field = model.class_fields.at("box");
  const FirstStageOut first =
      eval_first_stage(field, q.x_field, &model.latents[0].value);
  const Vec y = reconstruct_feature(first.factors, field.z.value, field.cfg.rank);
  const Vec3 rgb = eval_color_head(field, y, model.transients(q));
  EXPECT_EQ(full.rgb.x, rgb.x);
  EXPECT_EQ(full.rgb.y, rgb.y);
  EXPECT_EQ(full.rgb.z, rgb.z);
  EXPECT_EQ(full.sigma, first.sigma);
  EXPECT_EQ(full.score, first.score);
}

TEST(FieldPair, CornerInputsStayFinite) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 16);
  for (int corner = 0; corner < 8; ++corner) {
    const SamplePoint q = dynamic_query({corner & 1 ? 1.0 : -1.0,
                                         corner & 2 ? 1.0 : -1.0,
                                         corner & 4 ? 1.0 : -1.0},
                                        {0, 0, 1}, {0, 0.2, 3.0});
    const RadianceSample out = full_forward(model, scene, q);
    EXPECT_TRUE(std::isfinite(out.rgb.x));
    EXPECT_TRUE(std::isfinite(out.sigma));
    EXPECT_TRUE(std::isfinite(out.score));
  }
}

TEST(FieldPair, FactorHeadSmallerThanDirectFeatureHead) {
  const FieldConfig cfg;  // defaults: m=4, l=256, width 128
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, cfg, Strategy::kLowRank, 1);
  const FieldPair& field = model.class_fields.at("box");
  EXPECT_EQ(field.factor_head.w.size(),
            static_cast<std::size_t>(4 * cfg.rank * cfg.first_stage_width));
  EXPECT_LT(field.factor_head.w.size(),
            static_cast<std::size_t>(cfg.feature_size() * cfg.first_stage_width));
}

TEST(GradNorm, TransientBlindNetworkScoresZero) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 17);
  FieldPair& field = model.class_fields.at("box");
  // Zero the trunk2 input columns that read the encoded direction and
  // location, leaving only the feature path; rgb then ignores d and p.
  const int y_len = field.cfg.feature_size();
  Parameter& w0 = field.trunk2.layers[0].w;
  for (int r = 0; r < w0.rows(); ++r)
    for (int c = y_len; c < w0.cols(); ++c) w0.value[r * w0.cols() + c] = 0.0;
  const SamplePoint q = dynamic_query({0.1, 0.5, -0.3}, {0, 0, 1}, {0.3, 0.2, 3.0});
  EXPECT_NEAR(grad_norm_wrt_transients(model, scene, q), 0.0, 1e-18);
  model.zero_grad();
}

TEST(GradNorm, MatchesFiniteDifferences) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 18);
  Rng rng(19);
  for (int trial = 0; trial < 5; ++trial) {
    SamplePoint q = dynamic_query(
        {random_vec(rng, 1)[0], random_vec(rng, 1)[0], random_vec(rng, 1)[0]},
        random_unit(rng), Vec3{0.2 * trial, 0.2, 3.0});
    const double analytic = grad_norm_wrt_transients(model, scene, q);
    model.zero_grad();

    // FD of each output in {r,g,b,sigma} w.r.t. each raw transient slot.
    auto output = [&](int omega) {
      const RadianceSample out = full_forward(model, scene, q);
      return omega < 3
                 ? (omega == 0 ? out.rgb.x : (omega == 1 ? out.rgb.y : out.rgb.z))
                 : out.sigma;
    };
    double fd_total = 0.0;
    for (int omega = 0; omega < 4; ++omega) {
      for (int axis = 0; axis < 3; ++axis) {
        auto eval = [&]() { return output(omega); };
        const double gd = central_diff(eval, &q.d_canonical[axis], 1e-5);
        const double gp = central_diff(eval, &q.p_obj[axis], 1e-5);
        fd_total += gd * gd + gp * gp;
      }
    }
    EXPECT_TRUE(rel_close(analytic, fd_total, 1e-3))
        << "trial " << trial << ": ad=" << analytic << " fd=" << fd_total;
  }
}

TEST(GradNorm, StaticUsesDirectionOnly) {
  const SceneGraph scene = one_object_scene();
  ModelSet model = build_model(scene, small_config(), Strategy::kLowRank, 20);
  SamplePoint q;
  q.component = kBackgroundComponent;
  q.plane = 0;
  q.x_field = {0.1, 0.2, 0.7};
  q.d_canonical = {0, 0, 1};
  const double analytic = grad_norm_wrt_transients(model, scene, q);
  model.zero_grad();
  EXPECT_GT(analytic, 0.0);

  auto output = [&](int omega) {
    const RadianceSample out = full_forward(model, scene, q);
    return omega < 3
               ? (omega == 0 ? out.rgb.x : (omega == 1 ? out.rgb.y : out.rgb.z))
               : out.sigma;
  };
  double fd_total = 0.0;
  for (int omega = 0; omega < 4; ++omega)
    for (int axis = 0; axis < 3; ++axis) {
      auto eval = [&]() { return output(omega); };
      const double gd = central_diff(eval, &q.d_canonical[axis], 1e-5);
      fd_total += gd * gd;
    }
  EXPECT_TRUE(rel_close(analytic, fd_total, 1e-3));
}

TEST(Codec, BuiltOnlyForEncDecStrategy) {
  const SceneGraph scene = one_object_scene();
  ModelSet plain = build_model(scene, small_config(), Strategy::kLowRank, 21);
  EXPECT_FALSE(plain.background.codec.has_value());
  ModelSet coded = build_model(scene, small_config(), Strategy::kEncDec, 21);
  ASSERT_TRUE(coded.background.codec.has_value());
  EXPECT_EQ(coded.background.codec->enc.out_dim(), small_config().code_size());
}

}  // namespace
