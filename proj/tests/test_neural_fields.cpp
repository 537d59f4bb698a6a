#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "att3d/neural_fields.hpp"
#include "support.hpp"

using namespace att3d;
using att3d::testing::random_matrix;

namespace {

using M = Matrix<double>;

NerfHeadParams<double> random_head(std::size_t width, std::size_t hidden, Rng& rng) {
  NerfHeadParams<double> p = NerfHeadParams<double>::zeros(width, hidden);
  p.w1 = random_matrix(width, hidden, rng, -1, 1);
  p.b1 = random_matrix(1, hidden, rng, -1, 1);
  p.w2 = random_matrix(hidden, 4, rng, -1, 1);
  p.b2 = random_matrix(1, 4, rng, -1, 1);
  return p;
}

Vec3 random_point(Rng& rng, double r = 2) {
  return {uniform(rng, -r, r), uniform(rng, -r, r), uniform(rng, -r, r)};
}

EnvMapParams<double> random_env(std::size_t v_dim, Rng& rng) {
  EnvMapParams<double> e = EnvMapParams<double>::init(v_dim, rng);
  e.w = random_matrix(e.w.rows(), 3, rng, -1, 1);
  e.b = random_matrix(1, 3, rng, -0.5, 0.5);
  power_iterate(e.w, e.sn, 500);
  return e;
}

}  // namespace

TEST(DensityBias, FormulaValues) {
  EXPECT_EQ(density_bias({0, 0, 0}), 10.0);
  EXPECT_NEAR(density_bias({0.3, 0.4, 0}), 0.0, 1e-14);
  EXPECT_NEAR(density_bias({0, 0, 2}), -30.0, 1e-14);
}

TEST(NerfEval, ZeroParamsAtOrigin) {
  const auto p = NerfHeadParams<double>::zeros(6, 32);
  const std::vector<double> f(6, 0.0);
  const RadianceSample s = nerf_eval<double>(f, {0, 0, 0}, p);
  EXPECT_NEAR(s.sigma, std::log1p(std::exp(10.0)), 1e-12);
  for (double c : s.rgb) EXPECT_EQ(c, 0.5);
}

TEST(NerfEval, ZeroParamsOnHalfRadiusShell) {
  const auto p = NerfHeadParams<double>::zeros(6, 32);
  const std::vector<double> f(6, 0.0);
  const RadianceSample s = nerf_eval<double>(f, {0, 0.5, 0}, p);
  EXPECT_NEAR(s.sigma, std::numbers::ln2, 1e-14);
  for (double c : s.rgb) EXPECT_EQ(c, 0.5);
}

TEST(NerfEval, OutputRangesForRandomParams) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_head(6, 8, rng);
    std::vector<double> f(6);
    for (auto& x : f) x = uniform(rng, -3, 3);
    const RadianceSample s = nerf_eval<double>(f, random_point(rng), p);
    EXPECT_GE(s.sigma, 0.0);
    for (double c : s.rgb) {
      EXPECT_GT(c, 0.0);
      EXPECT_LT(c, 1.0);
    }
  }
}

TEST(NerfEval, WrongFeatureWidthIsStructuralError) {
  const auto p = NerfHeadParams<double>::zeros(6, 4);
  const std::vector<double> f(5, 0.0);
  EXPECT_THROW(nerf_eval<double>(f, {0, 0, 0}, p), StructuralError);
}

TEST(NerfEval, InitialDensityFallsWithRadius) {
  const auto p = NerfHeadParams<double>::zeros(6, 32);
  const std::vector<double> f(6, 0.0);
  double prev = INFINITY;
  for (int i = 0; i <= 200; ++i) {
    const double r = 2.0 * i / 200;
    const double s = nerf_eval<double>(f, {r / std::sqrt(3.0), r / std::sqrt(3.0), r / std::sqrt(3.0)}, p).sigma;
    EXPECT_LT(s, prev) << "r = " << r;
    prev = s;
  }
}

TEST(NerfEval, TapeMatchesDirectEvaluation) {
  Rng rng(8);
  const auto p = random_head(6, 8, rng);
  const M feats = random_matrix(10, 6, rng);
  const M pts = random_matrix(10, 3, rng);
  Tape<double> t;
  const HeadVars hv = head_vars(t, p, false);
  const RadianceVars out = nerf_head(t, hv, t.constant(feats), density_bias_on_tape(t, t.constant(pts)));
  for (std::size_t i = 0; i < 10; ++i) {
    const std::vector<double> f(feats.data() + i * 6, feats.data() + (i + 1) * 6);
    const RadianceSample s = nerf_eval<double>(f, {pts(i, 0), pts(i, 1), pts(i, 2)}, p);
    EXPECT_NEAR(t.value(out.sigma)[i], s.sigma, 1e-12);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(t.value(out.rgb)(i, c), s.rgb[c], 1e-12);
  }
}

// Gradients of a weighted sum of [sigma, rgb] with respect to each input of the head.
class HeadGradient : public ::testing::TestWithParam<int> {};

TEST_P(HeadGradient, MatchesCentralDifferences) {
  const int which = GetParam();  // 0 features, 1 w1, 2 b1, 3 w2, 4 b2, 5 points
  Rng rng(40 + which);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_head(6, 5, rng);
    const M feats = random_matrix(4, 6, rng);
    const M pts = random_matrix(4, 3, rng, -0.6, 0.6);
    const M coef_s = random_matrix(4, 1, rng, -1, 1), coef_c = random_matrix(4, 3, rng, -1, 1);
    const M* inputs[] = {&feats, &p.w1, &p.b1, &p.w2, &p.b2, &pts};
    auto build = [&](Tape<double>& t, Var x) {
      HeadVars hv = head_vars(t, p, false);
      Var f = t.constant(feats), q = t.constant(pts);
      switch (which) {
        case 0: f = x; break;
        case 1: hv.w1 = x; break;
        case 2: hv.b1 = x; break;
        case 3: hv.w2 = x; break;
        case 4: hv.b2 = x; break;
        default: q = x;
      }
      const RadianceVars r = nerf_head(t, hv, f, density_bias_on_tape(t, q));
      return t.add(t.sum(t.mul(r.sigma, t.constant(coef_s))), t.sum(t.mul(r.rgb, t.constant(coef_c))));
    };
    const GradCheckReport rep = grad_check(build, *inputs[which], 1e-6);
    ASSERT_TRUE(rep.finite) << rep.message;
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LT(worst, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(AllInputs, HeadGradient, ::testing::Range(0, 6));

TEST(Posenc, DefaultLengthIs48) { EXPECT_EQ(posenc({0.1, 0.2, 0.3}).size(), 48u); }

TEST(Posenc, ZeroDirection) {
  const auto pe = posenc({0, 0, 0});
  for (std::size_t i = 0; i < pe.size(); i += 2) {
    EXPECT_EQ(pe[i], 0.0);
    EXPECT_EQ(pe[i + 1], 1.0);
  }
}

TEST(Posenc, QuarterTurnOnFirstAxis) {
  const auto pe = posenc({std::numbers::pi / 2, 0, 0});
  EXPECT_NEAR(pe[0], 1.0, 1e-15);
}

TEST(Posenc, ComponentsBoundedByOne) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    for (double v : posenc(normalized(random_point(rng)))) {
      EXPECT_LE(std::abs(v), 1.0);
    }
  }
}

TEST(Posenc, RejectsZeroFrequencies) { EXPECT_THROW(posenc({1, 0, 0}, 0), InputError); }

TEST(EnvMap, ZeroWeightsGiveMidGray) {
  Rng rng(1);
  EnvMapParams<double> e = EnvMapParams<double>::init(4, rng);
  e.w = M(e.w.rows(), 3);
  const std::vector<double> v = {0.3, -1, 2, 0.5};
  for (double c : envmap_eval<double>({0, 0, 1}, v, e)) EXPECT_EQ(c, 0.5);
}

TEST(EnvMap, OutputInOpenUnitCube) {
  Rng rng(3);
  const auto e = random_env(4, rng);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(4);
    for (auto& x : v) x = uniform(rng, -5, 5);
    for (double c : envmap_eval<double>(normalized(random_point(rng)), v, e)) {
      EXPECT_GT(c, 0.0);
      EXPECT_LT(c, 1.0);
    }
  }
}

TEST(EnvMap, DifferentVectorsGiveDifferentBackgrounds) {
  Rng rng(4);
  const auto e = random_env(4, rng);
  const std::vector<double> v1 = {1, 0, -1, 0.5}, v2 = {-0.5, 2, 0, 1};
  const auto a = envmap_eval<double>({0, 0, 1}, v1, e), b = envmap_eval<double>({0, 0, 1}, v2, e);
  double diff = 0;
  for (int c = 0; c < 3; ++c) diff += std::abs(a[c] - b[c]);
  EXPECT_GT(diff, 1e-3);
}

TEST(EnvMap, VectorWidthMismatchIsStructuralError) {
  Rng rng(5);
  const auto e = random_env(4, rng);
  const std::vector<double> v(3, 0.0);
  EXPECT_THROW(envmap_eval<double>({0, 0, 1}, v, e), StructuralError);
}

TEST(EnvMap, WeightIsSpectrallyNormalizedWhenRead) {
  Rng rng(6);
  const auto e = random_env(4, rng);
  EXPECT_NEAR(att3d::testing::svd_sigma_max(spectral_apply(e.w, e.sn)), 1.0, 1e-6);
}

TEST(EnvMap, TapeMatchesDirectEvaluation) {
  Rng rng(7);
  const auto e = random_env(4, rng);
  const Vec3 d = normalized(Vec3{0.2, -0.7, 0.4});
  const std::vector<double> v = {0.5, -0.5, 1.5, 0.1};
  const auto direct = envmap_eval<double>(d, v, e);
  Tape<double> t;
  const auto pe = posenc(d);
  M pe_row(1, pe.size());
  for (std::size_t i = 0; i < pe.size(); ++i) pe_row[i] = pe[i];
  M v_row(1, 4);
  for (std::size_t i = 0; i < 4; ++i) v_row[i] = v[i];
  const Var w_hat = spectral_normalized(t, t.constant(e.w), e.sn);
  const Var rgb = envmap_on_tape(t, w_hat, t.constant(e.b), t.constant(pe_row), t.constant(v_row));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(t.value(rgb)[c], direct[c], 1e-12);
}
