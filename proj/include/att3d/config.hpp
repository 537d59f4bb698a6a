#pragma once

// JSON forms of the model, training and run configurations.

#include <fstream>
#include <string>

#include <json.hpp>

#include "att3d/corpus.hpp"
#include "att3d/model.hpp"
#include "att3d/trainer.hpp"

namespace att3d {

using nlohmann::json;

inline json model_config_to_json(const ModelConfig& c) {
  return {{"grid",
           {{"resolutions", c.grid.resolutions},
            {"features_per_level", c.grid.features_per_level},
            {"radius", c.grid.radius}}},
          {"tokens", c.tokens},
          {"embed_dim", c.embed_dim},
          {"v_dim", c.v_dim},
          {"hidden", c.hidden},
          {"posenc_frequencies", c.posenc_frequencies}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("grid")) {
      const json& g = j["grid"];
      if (g.contains("resolutions")) c.grid.resolutions = g["resolutions"].get<std::vector<std::size_t>>();
      c.grid.features_per_level = g.value("features_per_level", c.grid.features_per_level);
      c.grid.radius = g.value("radius", c.grid.radius);
    }
    c.tokens = j.value("tokens", c.tokens);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.v_dim = j.value("v_dim", c.v_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.posenc_frequencies = j.value("posenc_frequencies", c.posenc_frequencies);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Named SDS weightings: "constant" (w = 1) and "one_minus_alpha_bar".
inline SdsWeight sds_weight_from_name(const std::string& name) {
  if (name == "constant") return nullptr;
  if (name == "one_minus_alpha_bar") return [](double t) { return 1.0 - alpha_bar(t); };
  throw ConfigError("unknown sds_weight '" + name + "'");
}

/// Training fields plus loop-level settings the config file carries.
struct RunSettings {
  TrainConfig train;
  std::string sds_weight = "constant";
  std::size_t eval_interval = 0;
  std::size_t checkpoint_interval = 0;
};

inline json run_settings_to_json(const RunSettings& r) {
  const TrainConfig& t = r.train;
  json sched = json::array();
  for (const KappaPhase& p : t.interpolation.schedule) sched.push_back({p.steps, p.kappa});
  return {{"batch", t.batch},
          {"steps", t.steps},
          {"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"width", t.render.width},
          {"height", t.render.height},
          {"n_samples", t.render.sampling.n_samples},
          {"jitter", t.render.sampling.jitter},
          {"chunk_rays", t.render.chunk_rays},
          {"omega", t.schedule.omega},
          {"t_min", t.schedule.t_min},
          {"t_max", t.schedule.t_max},
          {"opacity_weight", t.opacity_weight},
          {"orientation_weight", t.orientation_weight},
          {"interpolation", {{"mode", to_string(t.interpolation.mode)}, {"schedule", sched}}},
          {"seed", t.seed},
          {"spectral_iters", t.spectral_iters},
          {"log_interval", t.log_interval},
          {"finetune_target", t.finetune_target == FinetuneTarget::v ? "v" : "w"},
          {"shading", {{"p_albedo", t.camera.p_albedo}, {"p_full", t.camera.p_full},
                       {"p_textureless", t.camera.p_textureless}}},
          {"sds_weight", r.sds_weight},
          {"eval_interval", r.eval_interval},
          {"checkpoint_interval", r.checkpoint_interval}};
}

inline RunSettings run_settings_from_json(const json& j) {
  RunSettings r;
  TrainConfig& t = r.train;
  try {
    t.batch = j.value("batch", t.batch);
    t.steps = j.value("steps", t.steps);
    t.lr = j.value("lr", t.lr);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.adam_eps = j.value("adam_eps", t.adam_eps);
    t.render.width = j.value("width", t.render.width);
    t.render.height = j.value("height", t.render.height);
    t.render.sampling.n_samples = j.value("n_samples", t.render.sampling.n_samples);
    t.render.sampling.jitter = j.value("jitter", t.render.sampling.jitter);
    t.render.chunk_rays = j.value("chunk_rays", t.render.chunk_rays);
    t.schedule.omega = j.value("omega", t.schedule.omega);
    t.schedule.t_min = j.value("t_min", t.schedule.t_min);
    t.schedule.t_max = j.value("t_max", t.schedule.t_max);
    t.opacity_weight = j.value("opacity_weight", t.opacity_weight);
    t.orientation_weight = j.value("orientation_weight", t.orientation_weight);
    if (j.contains("interpolation")) {
      const json& ij = j["interpolation"];
      t.interpolation.mode = parse_interpolation_mode(ij.value("mode", std::string("none")));
      if (ij.contains("schedule")) {
        t.interpolation.schedule.clear();
        for (const auto& ph : ij["schedule"]) {
          t.interpolation.schedule.push_back({ph.at(0).get<std::size_t>(), ph.at(1).get<double>()});
        }
      }
    }
    t.seed = j.value("seed", t.seed);
    t.spectral_iters = j.value("spectral_iters", t.spectral_iters);
    t.log_interval = j.value("log_interval", t.log_interval);
    const std::string ft = j.value("finetune_target", std::string("v"));
    if (ft != "v" && ft != "w") throw ConfigError("finetune_target must be 'v' or 'w'");
    t.finetune_target = ft == "v" ? FinetuneTarget::v : FinetuneTarget::w;
    if (j.contains("shading")) {
      const json& s = j["shading"];
      t.camera.p_albedo = s.value("p_albedo", t.camera.p_albedo);
      t.camera.p_full = s.value("p_full", t.camera.p_full);
      t.camera.p_textureless = s.value("p_textureless", t.camera.p_textureless);
    }
    r.sds_weight = j.value("sds_weight", r.sds_weight);
    t.sds_weight = sds_weight_from_name(r.sds_weight);
    r.eval_interval = j.value("eval_interval", r.eval_interval);
    r.checkpoint_interval = j.value("checkpoint_interval", r.checkpoint_interval);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  t.validate();
  return r;
}

/// A complete run description: {"corpus": ..., "model": ..., "train": ...}.
struct RunConfig {
  json corpus_json;
  Corpus corpus;
  ModelConfig model;
  RunSettings run;

  static RunConfig from_json(const json& j) {
    RunConfig c;
    if (!j.contains("corpus")) throw ConfigError("run config lacks 'corpus'");
    c.corpus_json = j["corpus"];
    c.corpus = corpus_from_json(c.corpus_json);
    c.model = model_config_from_json(j.value("model", json::object()));
    c.run = run_settings_from_json(j.value("train", json::object()));
    if (c.model.tokens != c.corpus.embedder.tokens() || c.model.embed_dim != c.corpus.embedder.dim()) {
      throw ConfigError("model embedding shape " + std::to_string(c.model.tokens) + "x" +
                        std::to_string(c.model.embed_dim) + " does not match corpus " +
                        std::to_string(c.corpus.embedder.tokens()) + "x" +
                        std::to_string(c.corpus.embedder.dim()));
    }
    return c;
  }

  json to_json() const {
    return {{"corpus", corpus_json}, {"model", model_config_to_json(model)}, {"train", run_settings_to_json(run)}};
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    try {
      return from_json(json::parse(f));
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + path + ": " + e.what());
    }
  }
};

}  // namespace att3d
