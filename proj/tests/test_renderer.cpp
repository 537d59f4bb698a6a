#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "att3d/model.hpp"
#include "support.hpp"

using namespace att3d;
using att3d::testing::ks_p_value;
using att3d::testing::random_matrix;
using att3d::testing::uniform_cdf;

namespace {

using M = Matrix<double>;
constexpr double kPi = std::numbers::pi;

std::vector<CameraSample> draw_cameras(std::size_t n, std::uint64_t seed, const CameraConfig& cfg = {}) {
  Rng rng(seed);
  std::vector<CameraSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_camera(rng, cfg));
  return out;
}

template <class F>
std::vector<double> field(const std::vector<CameraSample>& cams, F f) {
  std::vector<double> out;
  for (const auto& c : cams) out.push_back(f(c));
  return out;
}

ModelParams<double> zero_model(const ModelConfig& cfg) {
  ModelParams<double> p = ModelParams<double>::init(cfg, 1);
  for (auto& [name, t] : p.named_tensors()) t->fill(0.0);
  return p;
}

Rgb random_rgb(Rng& rng) { return {uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}; }

}  // namespace

TEST(SampleCamera, DistanceStaysInRange) {
  const auto cams = draw_cameras(10000, 1);
  const auto d = field(cams, [](const CameraSample& c) { return c.distance; });
  EXPECT_GE(*std::min_element(d.begin(), d.end()), 2.0);
  EXPECT_LE(*std::max_element(d.begin(), d.end()), 3.0);
  EXPECT_GT(ks_p_value(d, uniform_cdf(2, 3)), 0.01);
}

TEST(SampleCamera, FocalIsUniform) {
  const auto cams = draw_cameras(10000, 2);
  EXPECT_GT(ks_p_value(field(cams, [](const CameraSample& c) { return c.focal; }), uniform_cdf(0.7, 1.35)), 0.01);
}

TEST(SampleCamera, AzimuthAndElevationAreUniform) {
  const auto cams = draw_cameras(10000, 3);
  EXPECT_GT(ks_p_value(field(cams, [](const CameraSample& c) { return c.azimuth; }), uniform_cdf(0, 2 * kPi)), 0.01);
  EXPECT_GT(ks_p_value(field(cams, [](const CameraSample& c) { return c.elevation; }),
                       uniform_cdf(degrees(-10), degrees(45))),
            0.01);
}

TEST(SampleCamera, LightDistanceAndAngle) {
  const auto cams = draw_cameras(10000, 4);
  const auto dist = field(cams, [](const CameraSample& c) { return norm(c.light); });
  const auto ang = field(cams, [](const CameraSample& c) { return light_angle(c); });
  for (std::size_t i = 0; i < cams.size(); ++i) {
    ASSERT_GE(dist[i], 1.0 - 1e-12);
    ASSERT_LE(dist[i], 3.0 + 1e-12);
    ASSERT_LE(ang[i], kPi / 4 + 1e-9);
  }
  EXPECT_GT(ks_p_value(dist, uniform_cdf(1, 3)), 0.01);
  EXPECT_GT(ks_p_value(ang, uniform_cdf(0, kPi / 4)), 0.01);
}

TEST(SampleCamera, ShadingModeFrequencies) {
  const auto cams = draw_cameras(10000, 5);
  double albedo = 0, full = 0;
  for (const auto& c : cams) {
    albedo += c.mode == ShadingMode::albedo;
    full += c.mode == ShadingMode::full;
    ASSERT_GE(c.ambient, 0.2);
    ASSERT_LE(c.ambient, 1.0);
  }
  // Binomial standard error at n = 10^4 is at most 0.005.
  EXPECT_NEAR(albedo / 1e4, 0.5, 0.02);
  EXPECT_NEAR(full / 1e4, 0.25, 0.02);
}

TEST(SampleCamera, ReplayIsIdentical) { EXPECT_EQ(draw_cameras(50, 9), draw_cameras(50, 9)); }

TEST(ViewBucket, QuarterAndHalfTurns) {
  EXPECT_EQ(view_bucket(0), ViewBucket::front);
  EXPECT_EQ(view_bucket(kPi / 2), ViewBucket::side);
  EXPECT_EQ(view_bucket(kPi), ViewBucket::rear);
  EXPECT_EQ(view_bucket(3 * kPi / 2), ViewBucket::side);
  EXPECT_EQ(view_bucket(-0.1), ViewBucket::front);
}

TEST(RaySphere, TowardCenterFromOutside) {
  const auto seg = ray_sphere_segment({2.5, 0, 0}, {-1, 0, 0});
  ASSERT_TRUE(seg);
  EXPECT_NEAR(seg->first, 0.5, 1e-14);
  EXPECT_NEAR(seg->second, 4.5, 1e-14);
}

TEST(RaySphere, FromCenter) {
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vec3 d = normalized(Vec3{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
    const auto seg = ray_sphere_segment({0, 0, 0}, d);
    ASSERT_TRUE(seg);
    EXPECT_EQ(seg->first, 0.0);
    EXPECT_NEAR(seg->second, 2.0, 1e-14);
  }
}

TEST(RaySphere, TangentAndPassingRaysMiss) {
  EXPECT_FALSE(ray_sphere_segment({2.5, 2, 0}, {-1, 0, 0}));
  EXPECT_FALSE(ray_sphere_segment({2.5, 2.1, 0}, {-1, 0, 0}));
  EXPECT_FALSE(ray_sphere_segment({2.5, 0, 0}, {1, 0, 0}));  // pointing away
}

TEST(GenerateRays, SegmentsAndSamplesStayInsideSphere) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const CameraSample cam = sample_camera(rng, {});
    const auto rays = generate_rays(cam, 16, 16);
    std::vector<double> jit(rays.size());
    for (auto& j : jit) j = uniform(rng, 0, 1);
    const RaySamples<double> s = sample_rays<double>(rays, {128, true, 2.0}, jit);
    for (std::size_t r = 0; r < rays.size(); ++r) {
      if (!rays[r].hit) continue;
      EXPECT_LT(rays[r].t_near, rays[r].t_far);
      EXPECT_NEAR(norm(rays[r].dir), 1.0, 1e-12);
    }
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
      EXPECT_LE(norm({s.points(i, 0), s.points(i, 1), s.points(i, 2)}), 2.0 + 1e-9);
    }
  }
}

TEST(Composite, ZeroDensityShowsBackground) {
  const std::vector<double> sig(5, 0.0), del(5, 0.3);
  const std::vector<Rgb> col(5, Rgb{1, 0, 0});
  const auto r = composite(sig, col, del, {0.1, 0.2, 0.3});
  EXPECT_EQ(r.rgb, (Rgb{0.1, 0.2, 0.3}));
  EXPECT_EQ(r.alpha, 0.0);
}

TEST(Composite, OpaqueSampleSaturates) {
  const std::vector<double> sig = {100}, del = {0.5};
  const std::vector<Rgb> col = {{0.2, 0.4, 0.6}};
  const Rgb bg{0.9, 0.9, 0.9};
  const auto r = composite(sig, col, del, bg);
  const double t = std::exp(-50.0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.rgb[c], col[0][c] * (1 - t) + bg[c] * t, 1e-20);
  EXPECT_NEAR(r.alpha, 1.0, 1e-20);
}

TEST(Composite, TwoHalfOpacitySamples) {
  const std::vector<double> sig = {std::numbers::ln2, std::numbers::ln2}, del = {1, 1};
  const std::vector<Rgb> col = {{0.8, 0.2, 0.4}, {0.4, 1.0, 0.0}};
  const auto r = composite(sig, col, del, {0, 0, 0});
  EXPECT_NEAR(r.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(r.weights[1], 0.25, 1e-15);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.rgb[c], col[0][c] / 2 + col[1][c] / 4, 1e-15);
  EXPECT_NEAR(r.alpha, 0.75, 1e-15);
}

TEST(Composite, LengthMismatchIsStructuralError) {
  const std::vector<double> sig(3, 1.0), del(2, 1.0);
  const std::vector<Rgb> col(3);
  EXPECT_THROW(composite(sig, col, del, {}), StructuralError);
}

TEST(Composite, RandomizedPartitionConvexityAndRefinement) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 128;
    std::vector<double> sig(n), del(n);
    std::vector<Rgb> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      sig[i] = uniform(rng, 0, 1) < 0.3 ? 0.0 : std::exp(uniform(rng, -5, 4));
      del[i] = uniform(rng, 1e-3, 0.2);
      col[i] = random_rgb(rng);
    }
    const Rgb bg = random_rgb(rng);
    const auto r = composite(sig, col, del, bg);
    double total = r.transmittance;
    for (double w : r.weights) total += w;
    ASSERT_NEAR(total, 1.0, 1e-12);
    ASSERT_GE(r.alpha, 0.0);
    ASSERT_LE(r.alpha, 1.0);
    for (double c : r.rgb) {
      ASSERT_GE(c, 0.0);
      ASSERT_LE(c, 1.0);
    }
    // Insert a zero-density sample with arbitrary color and length.
    const std::size_t at = rng() % (n + 1);
    sig.insert(sig.begin() + static_cast<long>(at), 0.0);
    del.insert(del.begin() + static_cast<long>(at), uniform(rng, 1e-3, 0.5));
    col.insert(col.begin() + static_cast<long>(at), random_rgb(rng));
    const auto r2 = composite(sig, col, del, bg);
    for (int c = 0; c < 3; ++c) ASSERT_NEAR(r2.rgb[c], r.rgb[c], 1e-7);
  }
}

TEST(Composite, SinglePrecisionRenderGraphSumsToOne) {
  Rng rng(9);
  GridConfig grid;
  grid.resolutions = {4, 8};
  NerfHeadParams<float> head = NerfHeadParams<float>::init(grid.feature_width(), 8, rng);
  std::vector<Matrix<float>> levels;
  for (std::size_t l = 0; l < grid.levels(); ++l) levels.push_back(random_matrix(grid.level_rows(l), 4, rng).cast<float>());
  EnvMapParams<float> env = EnvMapParams<float>::init(3, rng);
  const auto rays = generate_rays(make_camera(0.4, 0.3, 2.5, 0.8), 8, 8);
  const RaySamples<float> s = sample_rays<float>(rays, {128, false, 2.0});
  Tape<float> t;
  FieldVars f;
  for (const auto& l : levels) f.levels.push_back(t.constant(l));
  f.head = head_vars(t, head, false);
  f.env_w_hat = t.constant(spectral_apply(env.w, env.sn));
  f.env_b = t.constant(env.b);
  f.v = t.constant(Matrix<float>(1, 3, 0.5f));
  const ChunkVars out = render_chunk(t, f, grid, s, env.frequencies, static_cast<const ShadingTerms<float>*>(nullptr));
  const auto& w = t.value(out.weights);
  for (std::size_t r = 0; r < s.rays; ++r) {
    double total = t.value(out.transmittance)[r];
    for (std::size_t i = 0; i < s.samples; ++i) total += w(r, i);
    EXPECT_NEAR(total, 1.0, 1e-6);
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(t.value(out.rgb)(r, c), 0.0f);
      EXPECT_LE(t.value(out.rgb)(r, c), 1.0f);
    }
  }
}

TEST(Shade, AlbedoModeIsIdentity) {
  const Rgb a{0.3, 0.6, 0.9};
  EXPECT_EQ(shade(a, Vec3{0, 0, 1}, {0, 0, 3}, {0, 0, 0}, ShadingMode::albedo, 0.3), a);
}

TEST(Shade, FullModeFacingLightKeepsAlbedo) {
  const Rgb a{0.3, 0.6, 0.9};
  for (double amb : {0.2, 0.5, 1.0}) {
    const Rgb s = shade(a, Vec3{0, 0, 1}, {0, 0, 3}, {0, 0, 0.5}, ShadingMode::full, amb);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s[c], a[c], 1e-15);
  }
}

TEST(Shade, FullModeFacingAwayGivesAmbient) {
  const Rgb a{0.3, 0.6, 0.9};
  const Rgb s = shade(a, Vec3{0, 0, -1}, {0, 0, 3}, {0, 0, 0}, ShadingMode::full, 0.4);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(s[c], 0.4 * a[c], 1e-15);
}

TEST(Shade, TexturelessIgnoresAlbedoHue) {
  const Vec3 n = normalized(Vec3{1, 0, 1});
  const Rgb s1 = shade({1, 0, 0}, n, {0, 0, 3}, {0, 0, 0}, ShadingMode::textureless, 0.3);
  const Rgb s2 = shade({0, 0.2, 1}, n, {0, 0, 3}, {0, 0, 0}, ShadingMode::textureless, 0.3);
  EXPECT_EQ(s1, s2);
  EXPECT_EQ(s1[0], s1[1]);
  EXPECT_EQ(s1[1], s1[2]);
}

TEST(Shade, MissingNormalFallsBackToAlbedo) {
  const Rgb a{0.3, 0.6, 0.9};
  EXPECT_EQ(shade(a, std::nullopt, {0, 0, 3}, {0, 0, 0}, ShadingMode::full, 0.3), a);
  EXPECT_EQ(shade(a, std::nullopt, {0, 0, 3}, {0, 0, 0}, ShadingMode::textureless, 0.3), a);
}

TEST(DensityNormals, InitialFieldPointsOutward) {
  GridConfig grid;
  grid.resolutions = {4};
  const auto head = NerfHeadParams<double>::zeros(grid.feature_width(), 4);
  std::vector<M> levels = {M(grid.level_rows(0), 4)};
  M pts(3, 3);
  pts(0, 0) = 0.5;
  pts(1, 1) = -1.0;
  pts(2, 2) = 0.0;  // origin: norm gradient is undefined there
  const auto n = density_normals(levels, head, grid, pts);
  ASSERT_TRUE(n[0]);
  EXPECT_NEAR((*n[0]).x, 1.0, 1e-9);
  ASSERT_TRUE(n[1]);
  EXPECT_NEAR((*n[1]).y, -1.0, 1e-9);
}

TEST(RenderFrame, ZeroModelIsCenteredBlob) {
  const ModelConfig cfg = att3d::testing::desk_model();
  const auto p = zero_model(cfg);
  RenderOptions opt;
  opt.width = opt.height = 32;
  const RenderedFrame f = render_frame(p, PromptEmbedding(cfg.tokens, cfg.embed_dim), make_camera(0, 0, 2.5, 1.0), opt);
  EXPECT_GT(f.alpha_at(16, 16), 0.5);
  EXPECT_GT(f.alpha_at(15, 15), 0.5);
  for (auto [x, y] : {std::pair{0, 0}, {31, 0}, {0, 31}, {31, 31}}) EXPECT_LT(f.alpha_at(x, y), 0.1);
  // Zero head gives sigmoid(0) albedo, zero env weights give a gray background.
  for (double c : f.rgb) EXPECT_NEAR(c, 0.5, 1e-12);
  for (double a : f.alpha) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(RenderFrame, DefaultSampleCountIs32) { EXPECT_EQ(RenderOptions{}.sampling.n_samples, 32u); }

TEST(RenderFrame, SameSeedGivesBitIdenticalFrames) {
  const ModelConfig cfg = att3d::testing::desk_model();
  const auto p = ModelParams<float>::init(cfg, 3);
  Rng crng(10);
  PromptEmbedding c(cfg.tokens, cfg.embed_dim);
  for (auto& x : c.values) x = uniform(crng, -1, 1);
  RenderOptions opt;
  opt.width = opt.height = 24;
  opt.sampling.jitter = true;
  opt.chunk_rays = 100;
  CameraSample cam = make_camera(1.0, 0.3, 2.4, 1.1);
  cam.mode = ShadingMode::full;
  cam.ambient = 0.4;
  auto run = [&](unsigned threads) {
    Rng rng(77);
    RenderOptions o = opt;
    o.threads = threads;
    return render_frame(p, c, cam, o, &rng);
  };
  const RenderedFrame a = run(1), b = run(1), d = run(3);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.rgb, d.rgb);
}

TEST(RenderFrame, PixelGradientWithRespectToMappingNetwork) {
  const ModelConfig cfg = att3d::testing::tiny_model();
  ModelParams<double> p = ModelParams<double>::init(cfg, 5);
  for (auto& x : p.map.w2.values()) x *= 30;  // visible grid features
  power_iterate(p.map.w1, p.map.sn1, 200);
  power_iterate(p.map.w2, p.map.sn2, 200);
  Rng rng(11);
  PromptEmbedding c(cfg.tokens, cfg.embed_dim);
  for (auto& x : c.values) x = uniform(rng, -1, 1);
  const auto rays = generate_rays(make_camera(0.3, 0.2, 2.5, 1.0), 1, 1);
  // Opacity of the 4 samples is moderate so neither the field nor the
  // background dominates the pixel.
  const RaySamples<double> s = sample_rays<double>(rays, {4, false, 2.0});
  const M coef = random_matrix(1, 3, rng, 0.5, 1.5);
  for (int which = 0; which < 3; ++which) {
    const M* inputs[] = {&p.map.w1, &p.map.b1, &p.map.w2};
    auto build = [&](Tape<double>& t, Var x) {
      MapVars mv = map_vars(t, p.map, false);
      (which == 0 ? mv.w1 : which == 1 ? mv.b1 : mv.w2) = x;
      const ModulationVars mod = modulate_on_tape(t, mv, p.map, t.constant(c.flattened<double>()), cfg.grid);
      FieldVars f;
      f.levels = mod.levels;
      f.head = head_vars(t, p.head, false);
      f.env_w_hat = spectral_normalized(t, t.constant(p.env.w), p.env.sn);
      f.env_b = t.constant(p.env.b);
      f.v = mod.v;
      const ChunkVars out = render_chunk(t, f, cfg.grid, s, p.env.frequencies, static_cast<const ShadingTerms<double>*>(nullptr));
      return t.add(t.sum(t.mul(out.rgb, t.constant(coef))), t.scale(t.sum(out.alpha), 0.3));
    };
    const GradCheckReport rep = grad_check(build, *inputs[which], 1e-6);
    ASSERT_TRUE(rep.finite) << rep.message;
    EXPECT_LT(rep.max_rel_error, 1e-5) << "input " << which;
  }
}
