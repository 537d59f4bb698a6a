#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "att3d/evaluation.hpp"
#include "support.hpp"

using namespace att3d;

namespace {

class UniformScorer : public Scorer {
 public:
  std::vector<double> probabilities(const std::vector<Image>&, const std::vector<CameraSample>&,
                                    const std::vector<std::size_t>& query) const override {
    return std::vector<double>(query.size(), 1.0 / static_cast<double>(query.size()));
  }
};

/// Softmax of a fixed logit table row, keyed by the rendered prompt encoded in
/// the first pixel, passed through a monotone transform.
class TableScorer : public Scorer {
 public:
  TableScorer(std::vector<std::vector<double>> table, std::function<double(double)> f)
      : table_(std::move(table)), f_(std::move(f)) {}
  std::vector<double> probabilities(const std::vector<Image>& views, const std::vector<CameraSample>&,
                                    const std::vector<std::size_t>& query) const override {
    const auto& row = table_.at(static_cast<std::size_t>(views.at(0).rgb[0]));
    std::vector<double> l;
    for (std::size_t q : query) l.push_back(f_(row.at(q)));
    return softmax(l);
  }

 private:
  std::vector<std::vector<double>> table_;
  std::function<double(double)> f_;
};

ViewRenderer id_renderer() {
  return [](std::size_t id, const CameraSample&) {
    Image img(1, 1);
    img.rgb[0] = static_cast<double>(id);
    return img;
  };
}

/// Teacher target of `id` blended toward mid-gray.
ViewRenderer blurred_teacher(const AnalyticTeacher& teacher, const Corpus& corpus, double mix, std::size_t size) {
  return [&teacher, &corpus, mix, size](std::size_t id, const CameraSample& cam) {
    Image img = teacher.target(corpus.embedding(id), cam, size, size);
    for (double& v : img.rgb) v = (1 - mix) * v + mix * 0.5;
    return img;
  };
}

}  // namespace

TEST(FramesPerPrompt, Examples) {
  EXPECT_EQ(frames_per_prompt(100, 32, 16), 200.0);
  EXPECT_EQ(frames_per_prompt(0, 8, 5), 0.0);
  EXPECT_EQ(frames_per_prompt(100, 32, 1), 3200.0);
  EXPECT_THROW(frames_per_prompt(10, 1, 0), ContractError);
}

TEST(EvalCameras, CanonicalPoses) {
  const auto cams = eval_cameras();
  ASSERT_EQ(cams.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(cams[k].azimuth, k * std::numbers::pi / 2, 1e-15);
    EXPECT_NEAR(cams[k].elevation, 20 * std::numbers::pi / 180, 1e-15);
    EXPECT_EQ(cams[k].distance, 2.5);
    EXPECT_EQ(cams[k].focal, 1.0);
    EXPECT_EQ(cams[k].mode, ShadingMode::albedo);
  }
}

TEST(RProbability, SingletonQueryIsOne) {
  const Corpus corpus = att3d::testing::desk_corpus();
  const AnalyticTeacher teacher(corpus);
  const DeskScorer scorer(teacher, corpus);
  const EvalReport rep = r_probability(blurred_teacher(teacher, corpus, 0.7, 8), {3}, {3}, scorer);
  EXPECT_NEAR(rep.mean_r_probability, 1.0, 1e-15);
  EXPECT_EQ(rep.r_precision, 1.0);
  EXPECT_EQ(rep.views, 4u);
  EXPECT_EQ(r_precision(blurred_teacher(teacher, corpus, 0.7, 8), {3}, {3}, scorer), 1.0);
}

TEST(RProbability, UniformScorerGivesOneOverK) {
  const UniformScorer scorer;
  for (std::size_t k : {2u, 5u, 16u}) {
    const auto ids = att3d::testing::iota_ids(k);
    const EvalReport rep = r_probability(id_renderer(), ids, ids, scorer);
    EXPECT_NEAR(rep.mean_r_probability, 1.0 / k, 1e-15);
    // Ties go to the lowest index, so only prompt 0 counts as correct.
    EXPECT_NEAR(rep.r_precision, 1.0 / k, 1e-15);
    EXPECT_TRUE(rep.per_prompt[0].correct);
    for (std::size_t i = 1; i < k; ++i) EXPECT_FALSE(rep.per_prompt[i].correct);
  }
}

TEST(RProbability, ExactTargetsScoreNearOne) {
  const Corpus corpus = att3d::testing::desk_corpus();
  const AnalyticTeacher teacher(corpus);
  const DeskScorer scorer(teacher, corpus);
  const auto ids = att3d::testing::iota_ids(corpus.size());
  const EvalReport rep = r_probability(teacher_renderer(teacher, corpus, 32, 32), ids, ids, scorer);
  EXPECT_GE(rep.mean_r_probability, 1 - 1e-6);
  EXPECT_EQ(rep.r_precision, 1.0);
}

TEST(RProbability, OneHotImpliesPerfectPrecision) {
  std::vector<std::vector<double>> table(6, std::vector<double>(6, -1e3));
  for (std::size_t i = 0; i < 6; ++i) table[i][i] = 0;
  const TableScorer scorer(table, [](double x) { return x; });
  const auto ids = att3d::testing::iota_ids(6);
  const EvalReport rep = r_probability(id_renderer(), ids, ids, scorer);
  EXPECT_EQ(rep.mean_r_probability, 1.0);
  EXPECT_EQ(rep.r_precision, 1.0);
}

TEST(RProbability, MissingPromptIsContractError) {
  const UniformScorer scorer;
  EXPECT_THROW(r_probability(id_renderer(), {0, 4}, {0, 1, 2}, scorer), ContractError);
}

TEST(DeskScorer, ScoresFormProbabilityVector) {
  const Corpus corpus = att3d::testing::desk_corpus();
  const AnalyticTeacher teacher(corpus);
  const DeskScorer scorer(teacher, corpus);
  const auto cams = eval_cameras();
  const auto render = blurred_teacher(teacher, corpus, 0.4, 12);
  const auto ids = att3d::testing::iota_ids(corpus.size());
  for (std::size_t id : {0u, 7u, 13u}) {
    std::vector<Image> views;
    for (const auto& c : cams) views.push_back(render(id, c));
    const auto p = scorer.probabilities(views, cams, ids);
    double sum = 0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
  std::vector<Image> one(1, Image(12, 12));
  EXPECT_THROW(scorer.probabilities(one, cams, ids), StructuralError);
}

TEST(RPrecision, InvariantUnderMonotoneRescaling) {
  Rng rng(4);
  const std::vector<std::function<double(double)>> maps = {
      [](double x) { return 3 * x + 1; }, [](double x) { return -std::exp(-x); },
      [](double x) { return std::cbrt(x); }, [](double x) { return x * x * x; }};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + static_cast<std::size_t>(uniform(rng, 0, 10));
    std::vector<std::vector<double>> table(k, std::vector<double>(k));
    for (auto& row : table) {
      for (double& x : row) x = -uniform(rng, 0, 5);  // negative MSE values
    }
    const auto ids = att3d::testing::iota_ids(k);
    const double ref = evaluate(id_renderer(), ids, ids, TableScorer(table, [](double x) { return x; }),
                                eval_cameras(1)).r_precision;
    for (const auto& f : maps) {
      EXPECT_EQ(evaluate(id_renderer(), ids, ids, TableScorer(table, f), eval_cameras(1)).r_precision, ref);
    }
  }
}

TEST(RProbability, DistractorsNeverRaiseScores) {
  const Corpus corpus = att3d::testing::desk_corpus();
  const AnalyticTeacher teacher(corpus);
  const DeskScorer scorer(teacher, corpus);
  const auto render = blurred_teacher(teacher, corpus, 0.8, 12);
  const std::vector<std::size_t> prompts = {1, 2, 6};
  std::vector<std::size_t> query = prompts;
  EvalReport prev = r_probability(render, prompts, query, scorer);
  for (std::size_t extra : {0u, 9u, 14u, 3u, 11u}) {
    query.push_back(extra);
    const EvalReport cur = r_probability(render, prompts, query, scorer);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      EXPECT_LE(cur.per_prompt[i].r_probability, prev.per_prompt[i].r_probability + 1e-15);
    }
    prev = cur;
  }
}

TEST(RProbability, ThreadedMatchesSerial) {
  const Corpus corpus = att3d::testing::desk_corpus();
  const AnalyticTeacher teacher(corpus);
  const DeskScorer scorer(teacher, corpus);
  const auto ids = att3d::testing::iota_ids(corpus.size());
  const auto render = blurred_teacher(teacher, corpus, 0.5, 8);
  const EvalReport a = evaluate(render, ids, ids, scorer, eval_cameras(), "all", 1);
  const EvalReport b = evaluate(render, ids, ids, scorer, eval_cameras(), "all", 3);
  EXPECT_EQ(a.mean_r_probability, b.mean_r_probability);
  EXPECT_EQ(a.r_precision, b.r_precision);
}

TEST(EvalReport, JsonFields) {
  const UniformScorer scorer;
  const auto ids = att3d::testing::iota_ids(4);
  EvalReport rep = evaluate(id_renderer(), ids, ids, scorer, eval_cameras(), "unseen");
  rep.frames_per_prompt = 12.5;
  const auto j = rep.to_json();
  EXPECT_EQ(j["mean_r_probability"].get<double>(), 0.25);
  EXPECT_EQ(j["query_set"], "unseen");
  EXPECT_EQ(j["views"], 4);
  EXPECT_EQ(j["frames_per_prompt"].get<double>(), 12.5);
  EXPECT_EQ(j["per_prompt"].size(), 4u);
  EXPECT_GE(j["r_precision"].get<double>(), 0.0);
  EXPECT_LE(j["r_precision"].get<double>(), 1.0);
}

TEST(ModelRenderer, MatchesDirectRender) {
  const Corpus corpus = att3d::testing::desk_corpus();
  const auto params = ModelParams<float>::init(att3d::testing::desk_model(), 1);
  RenderOptions opt;
  opt.width = opt.height = 8;
  const auto render = model_renderer(params, corpus, opt);
  const CameraSample cam = eval_cameras()[1];
  EXPECT_EQ(render(5, cam).rgb, render_frame(params, corpus.embedding(5), cam, opt).rgb);
}
