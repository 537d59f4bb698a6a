#pragma once

// Retrieval-style metrics over a query set of prompts, and the
// frames-per-prompt cost measure.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "att3d/camera.hpp"
#include "att3d/corpus.hpp"
#include "att3d/guidance.hpp"
#include "att3d/image.hpp"
#include "att3d/model.hpp"

namespace att3d {

inline double frames_per_prompt(double iterations, double batch, double n_prompts) {
  if (!(n_prompts > 0)) throw ContractError("frames_per_prompt needs a positive prompt count");
  return iterations * batch / n_prompts;
}

/// Four (or n) azimuths evenly spaced from 0, elevation 20 deg, distance
/// 2.5, focal 1, albedo shading.
inline std::vector<CameraSample> eval_cameras(std::size_t n_views = 4) {
  std::vector<CameraSample> out;
  for (std::size_t k = 0; k < n_views; ++k) {
    out.push_back(make_camera(2 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_views),
                              degrees(20.0), 2.5, 1.0));
  }
  return out;
}

/// Maps rendered views of one prompt to a probability vector over a query
/// set (prompt ids). `views[k]` was rendered from `cameras[k]`.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> probabilities(const std::vector<Image>& views,
                                            const std::vector<CameraSample>& cameras,
                                            const std::vector<std::size_t>& query) const = 0;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

/// Per view: softmax over queries of -SSE(view, teacher target) / temperature;
/// view probabilities are averaged.
class DeskScorer : public Scorer {
 public:
  DeskScorer(const AnalyticTeacher& teacher, const Corpus& corpus, double temperature = 1.0)
      : teacher_(teacher), corpus_(corpus), temperature_(temperature) {}

  std::vector<double> logits(const Image& view, const CameraSample& cam,
                             const std::vector<std::size_t>& query) const {
    std::vector<double> out;
    for (std::size_t id : query) {
      const Image t = teacher_.target(corpus_.embedding(id), cam, view.width, view.height);
      out.push_back(-squared_error(view, t) / temperature_);
    }
    return out;
  }

  std::vector<double> probabilities(const std::vector<Image>& views,
                                    const std::vector<CameraSample>& cameras,
                                    const std::vector<std::size_t>& query) const override {
    if (views.size() != cameras.size()) throw StructuralError("views and cameras differ in count");
    std::vector<double> mean(query.size(), 0.0);
    for (std::size_t k = 0; k < views.size(); ++k) {
      const std::vector<double> p = softmax(logits(views[k], cameras[k], query));
      for (std::size_t i = 0; i < p.size(); ++i) mean[i] += p[i];
    }
    for (double& x : mean) x /= static_cast<double>(views.size());
    return mean;
  }

 private:
  const AnalyticTeacher& teacher_;
  const Corpus& corpus_;
  double temperature_;
};

/// Renders prompt `id` from a camera.
using ViewRenderer = std::function<Image(std::size_t id, const CameraSample& cam)>;

struct PromptScore {
  std::size_t id = 0;
  double r_probability = 0;
  bool correct = false;
};

struct EvalReport {
  std::vector<PromptScore> per_prompt;
  double mean_r_probability = 0;
  double r_precision = 0;
  std::size_t views = 0;
  std::string query_set;
  double frames_per_prompt = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mean_r_probability"] = mean_r_probability;
    j["r_precision"] = r_precision;
    j["views"] = views;
    j["query_set"] = query_set;
    j["frames_per_prompt"] = frames_per_prompt;
    j["per_prompt"] = nlohmann::json::array();
    for (const PromptScore& s : per_prompt) {
      j["per_prompt"].push_back({{"id", s.id}, {"r_probability", s.r_probability}, {"correct", s.correct}});
    }
    return j;
  }
};

/// Scores every prompt in `prompts` against `query` (ascending ids). Argmax
/// ties go to the lower prompt id.
inline EvalReport evaluate(const ViewRenderer& render, const std::vector<std::size_t>& prompts,
                           std::vector<std::size_t> query, const Scorer& scorer,
                           const std::vector<CameraSample>& cameras,
                           const std::string& query_set = "", unsigned threads = 1) {
  std::sort(query.begin(), query.end());
  query.erase(std::unique(query.begin(), query.end()), query.end());
  for (std::size_t id : prompts) {
    if (!std::binary_search(query.begin(), query.end(), id)) {
      throw ContractError("prompt " + std::to_string(id) + " is not in the query set");
    }
  }
  EvalReport rep;
  rep.views = cameras.size();
  rep.query_set = query_set;
  rep.per_prompt.resize(prompts.size());
  parallel_for(prompts.size(), threads, [&](std::size_t i) {
    const std::size_t id = prompts[i];
    std::vector<Image> views;
    for (const CameraSample& cam : cameras) views.push_back(render(id, cam));
    const std::vector<double> p = scorer.probabilities(views, cameras, query);
    const std::size_t pos = static_cast<std::size_t>(
        std::lower_bound(query.begin(), query.end(), id) - query.begin());
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k) {
      if (p[k] > p[best]) best = k;
    }
    rep.per_prompt[i] = {id, p[pos], best == pos};
  });
  double sum = 0, hits = 0;
  for (const PromptScore& s : rep.per_prompt) {
    sum += s.r_probability;
    hits += s.correct ? 1 : 0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, prompts.size()));
  rep.mean_r_probability = sum / n;
  rep.r_precision = hits / n;
  return rep;
}

inline EvalReport r_probability(const ViewRenderer& render, const std::vector<std::size_t>& prompts,
                                const std::vector<std::size_t>& query, const Scorer& scorer,
                                std::size_t n_views = 4) {
  return evaluate(render, prompts, query, scorer, eval_cameras(n_views));
}

inline double r_precision(const ViewRenderer& render, const std::vector<std::size_t>& prompts,
                          const std::vector<std::size_t>& query, const Scorer& scorer,
                          std::size_t n_views = 4) {
  return evaluate(render, prompts, query, scorer, eval_cameras(n_views)).r_precision;
}

inline Image frame_image(const RenderedFrame& f) {
  Image img(f.width, f.height);
  img.rgb = f.rgb;
  return img;
}

/// Feed-forward renders of corpus prompts from a parameter snapshot.
template <class T>
ViewRenderer model_renderer(const ModelParams<T>& params, const Corpus& corpus, RenderOptions opt) {
  return [&params, &corpus, opt](std::size_t id, const CameraSample& cam) {
    return frame_image(render_frame(params, corpus.embedding(id), cam, opt));
  };
}

/// Renders exact teacher targets (an upper bound for the metric).
inline ViewRenderer teacher_renderer(const AnalyticTeacher& teacher, const Corpus& corpus,
                                     std::size_t width, std::size_t height) {
  return [&teacher, &corpus, width, height](std::size_t id, const CameraSample& cam) {
    return teacher.target(corpus.embedding(id), cam, width, height);
  };
}

}  // namespace att3d
