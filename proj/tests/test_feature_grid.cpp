#include <gtest/gtest.h>

#include <numeric>

#include "att3d/feature_grid.hpp"
#include "support.hpp"

using namespace att3d;

namespace {

GridConfig single_level(std::size_t res, std::size_t features = 1) {
  GridConfig c;
  c.resolutions = {res};
  c.features_per_level = features;
  return c;
}

GridParams<double> random_grid(const GridConfig& cfg, Rng& rng, double scale = 1.0) {
  GridParams<double> g = GridParams<double>::zeros(cfg);
  for (auto& l : g.levels) {
    for (auto& x : l.values()) x = scale * uniform(rng, -1, 1);
  }
  return g;
}

void set_axis(Vec3& v, int axis, double value) {
  (axis == 0 ? v.x : axis == 1 ? v.y : v.z) = value;
}

}  // namespace

TEST(GridConfig, DefaultsGiveTwentyFeatures) {
  const GridConfig c;
  EXPECT_EQ(c.resolutions, (std::vector<std::size_t>{9, 14, 22, 36, 58}));
  EXPECT_EQ(c.feature_width(), 20u);
  EXPECT_EQ(c.radius, 2.0);
  EXPECT_EQ(c.param_count(), (9u * 9 * 9 + 14u * 14 * 14 + 22u * 22 * 22 + 36u * 36 * 36 + 58u * 58 * 58) * 4);
}

TEST(GridConfig, RejectsBadResolutions) {
  GridConfig c;
  c.resolutions = {4, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  c.resolutions = {1, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  c.resolutions = {};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrilinearWeights, GridNodeHasSingleUnitWeight) {
  // res 5 over [-2, 2] puts nodes at integer coordinates.
  const TrilinearCorners t = trilinear_weights({1.0, -1.0, 0.0}, 5);
  int ones = 0;
  for (int c = 0; c < 8; ++c) {
    if (t.weight[c] == 1.0) ++ones;
    else EXPECT_EQ(t.weight[c], 0.0);
  }
  EXPECT_EQ(ones, 1);
}

TEST(TrilinearWeights, CellCenterWeightsAreOneEighth) {
  const TrilinearCorners t = trilinear_weights({-1.0, -1.0, -1.0}, 3);
  for (double w : t.weight) EXPECT_DOUBLE_EQ(w, 0.125);
}

TEST(TrilinearWeights, ConvexAndIndicesValid) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x{uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)};
    const TrilinearCorners t = trilinear_weights(x, 7);
    double s = 0;
    for (int c = 0; c < 8; ++c) {
      EXPECT_GE(t.weight[c], 0.0);
      EXPECT_LT(t.index[c], 7u * 7 * 7);
      s += t.weight[c];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(TrilinearWeights, NonFiniteQueryIsInputError) {
  EXPECT_THROW(trilinear_weights({std::nan(""), 0, 0}, 4), InputError);
}

TEST(TrilinearWeights, OutsideQueriesClampToBoundary) {
  const GridConfig cfg = single_level(3);
  Rng rng(2);
  const GridParams<double> g = random_grid(cfg, rng);
  EXPECT_EQ(encode_point({5.0, 0.3, -0.2}, g, cfg), encode_point({2.0, 0.3, -0.2}, g, cfg));
}

TEST(EncodePoint, CornerFeaturesZeroToSevenGiveMeanAtCenter) {
  const GridConfig cfg = single_level(2);  // one cell covering the cube
  GridParams<double> g = GridParams<double>::zeros(cfg);
  const TrilinearCorners t = trilinear_weights({0, 0, 0}, 2);
  for (int c = 0; c < 8; ++c) g.levels[0](t.index[c], 0) = c;
  EXPECT_DOUBLE_EQ(encode_point({0, 0, 0}, g, cfg)[0], 3.5);
}

TEST(EncodePoint, ZeroParamsGiveZeroFeatures) {
  const GridConfig cfg;
  const GridParams<double> g = GridParams<double>::zeros(cfg);
  const std::vector<double> f = encode_point({0.3, -1.2, 0.7}, g, cfg);
  EXPECT_EQ(f.size(), 20u);
  for (double x : f) EXPECT_EQ(x, 0.0);
}

TEST(EncodePoint, EdgeMidpointAveragesItsTwoNodes) {
  const GridConfig cfg = single_level(2, 3);
  Rng rng(3);
  const GridParams<double> g = random_grid(cfg, rng);
  // Edge from (-2,-2,-2) to (2,-2,-2): nodes 0 and 1.
  const std::vector<double> f = encode_point({0, -2, -2}, g, cfg);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(f[k], 0.5 * (g.levels[0](0, k) + g.levels[0](1, k)), 1e-15);
}

TEST(EncodePoint, LevelsConcatenateLowToHigh) {
  GridConfig cfg;
  cfg.resolutions = {2, 3};
  cfg.features_per_level = 1;
  GridParams<double> g = GridParams<double>::zeros(cfg);
  for (auto& x : g.levels[0].values()) x = 1.0;
  for (auto& x : g.levels[1].values()) x = 2.0;
  EXPECT_EQ(encode_point({0.1, 0.2, 0.3}, g, cfg), (std::vector<double>{1.0, 2.0}));
}

TEST(EncodePoint, ShapeMismatchIsStructuralError) {
  const GridConfig cfg = single_level(3);
  const GridParams<double> wrong = GridParams<double>::zeros(single_level(4));
  EXPECT_THROW(encode_point({0, 0, 0}, wrong, cfg), StructuralError);
  std::vector<double> flat(10);
  EXPECT_THROW(GridParams<double>::from_flat(flat, cfg), StructuralError);
}

TEST(EncodePoint, ExactOnNodesAndAffineAlongAxesWithinACell) {
  const GridConfig cfg = single_level(6, 2);
  Rng rng(4);
  const GridParams<double> g = random_grid(cfg, rng);
  const double h = 4.0 / 5.0;  // node spacing
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int ix = static_cast<int>(uniform(rng, 0, 5)), iy = static_cast<int>(uniform(rng, 0, 5)),
              iz = static_cast<int>(uniform(rng, 0, 5));
    const Vec3 node{-2 + ix * h, -2 + iy * h, -2 + iz * h};
    const std::vector<double> at_node = encode_point(node, g, cfg);
    const std::size_t flat = (static_cast<std::size_t>(iz) * 6 + iy) * 6 + ix;
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(at_node[k], g.levels[0](flat, k), 1e-12);

    // Segment along one axis inside the cell; midpoint equals the mean of the ends.
    const int axis = trial % 3;
    Vec3 base{node.x + uniform(rng, 0.01, 0.99) * h, node.y + uniform(rng, 0.01, 0.99) * h,
              node.z + uniform(rng, 0.01, 0.99) * h};
    const double lo = base[axis] - (base[axis] - node[axis]) * uniform(rng, 0, 0.99);
    const double hi = base[axis] + (node[axis] + h - base[axis]) * uniform(rng, 0, 0.99);
    Vec3 a = base, b = base;
    set_axis(a, axis, lo);
    set_axis(b, axis, hi);
    for (double s : {0.25, 0.5, 0.8}) {
      Vec3 m = base;
      set_axis(m, axis, lo + s * (hi - lo));
      const auto fa = encode_point(a, g, cfg), fb = encode_point(b, g, cfg), fm = encode_point(m, g, cfg);
      for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(fm[k] - ((1 - s) * fa[k] + s * fb[k])));
    }
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(EncodePoint, ContinuousAcrossCellFaces) {
  const GridConfig cfg;
  Rng rng(5);
  // Features of order 1e-4 keep the Lipschitz constant small, so 1e-7-apart
  // points can only differ by more than 1e-9 through a jump at the face.
  const GridParams<double> g = random_grid(cfg, rng, 1e-4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t res = cfg.resolutions[trial % cfg.levels()];
    const double h = 4.0 / static_cast<double>(res - 1);
    const int node = 1 + static_cast<int>(uniform(rng, 0, static_cast<double>(res - 2)));
    Vec3 x{uniform(rng, -1.9, 1.9), uniform(rng, -1.9, 1.9), uniform(rng, -1.9, 1.9)};
    const int axis = trial % 3;
    set_axis(x, axis, -2 + node * h);
    Vec3 a = x, b = x;
    set_axis(a, axis, x[axis] - 0.5e-7);
    set_axis(b, axis, x[axis] + 0.5e-7);
    const auto fa = encode_point(a, g, cfg), fb = encode_point(b, g, cfg);
    for (std::size_t k = 0; k < fa.size(); ++k) ASSERT_LT(std::abs(fa[k] - fb[k]), 1e-9);
  }
}

TEST(EncodePoint, TapeFormMatchesDirectEvaluation) {
  GridConfig cfg;
  cfg.resolutions = {3, 5};
  cfg.features_per_level = 2;
  Rng rng(6);
  const GridParams<double> g = random_grid(cfg, rng);
  const Matrix<double> pts = att3d::testing::random_matrix(7, 3, rng, -2, 2);
  Tape<double> t;
  std::vector<Var> tables;
  for (const auto& l : g.levels) tables.push_back(t.constant(l));
  const Matrix<double>& out = t.value(encode_points(t, tables, t.constant(pts), cfg));
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const auto f = encode_point({pts(i, 0), pts(i, 1), pts(i, 2)}, g, cfg);
    for (std::size_t k = 0; k < f.size(); ++k) EXPECT_NEAR(out(i, k), f[k], 1e-14);
  }
}

TEST(EncodePoint, GradientsMatchFiniteDifferences) {
  GridConfig cfg;
  cfg.resolutions = {3, 4};
  cfg.features_per_level = 2;
  Rng rng(7);
  const Matrix<double> pts = att3d::testing::random_matrix(4, 3, rng, -1.9, 1.9);
  const Matrix<double> wts = att3d::testing::random_matrix(4, cfg.feature_width(), rng);
  const GridParams<double> g = random_grid(cfg, rng);
  // Flat parameters: both level tables followed by the points.
  std::vector<double> x;
  for (const auto& l : g.levels) x.insert(x.end(), l.values().begin(), l.values().end());
  x.insert(x.end(), pts.values().begin(), pts.values().end());
  const std::size_t n0 = g.levels[0].size(), n1 = g.levels[1].size();
  auto eval = [&](const std::vector<double>& p, std::vector<double>* grad) {
    Tape<double> t;
    const Var l0 = t.leaf(Matrix<double>(g.levels[0].rows(), 2, std::vector<double>(p.begin(), p.begin() + n0)));
    const Var l1 = t.leaf(Matrix<double>(g.levels[1].rows(), 2, std::vector<double>(p.begin() + n0, p.begin() + n0 + n1)));
    const Var q = t.leaf(Matrix<double>(4, 3, std::vector<double>(p.begin() + n0 + n1, p.end())));
    const Var tables[] = {l0, l1};
    const Var root = t.sum(t.mul(encode_points(t, tables, q, cfg), t.constant(wts)));
    if (grad) {
      t.backward(root);
      grad->clear();
      for (Var v : {l0, l1, q}) grad->insert(grad->end(), t.grad(v).values().begin(), t.grad(v).values().end());
    }
    return t.value(root)[0];
  };
  const GradCheckReport rep = grad_check([&](const std::vector<double>& p) { return eval(p, nullptr); },
                                         [&](const std::vector<double>& p) {
                                           std::vector<double> gr;
                                           eval(p, &gr);
                                           return gr;
                                         },
                                         x, 1e-6);
  EXPECT_TRUE(rep.passed(1e-6)) << rep.max_rel_error;
}
