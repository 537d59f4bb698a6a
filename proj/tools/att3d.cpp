// Command-line front end: train, finetune, render, interpolate, eval, serve.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "att3d/checkpoint.hpp"
#include "att3d/config.hpp"
#include "att3d/evaluation.hpp"
#include "att3d/guidance.hpp"
#include "att3d/png.hpp"
#include "att3d/service.hpp"
#include "att3d/trainer.hpp"

using namespace att3d;

namespace {

struct Loaded {
  Checkpoint ck;
  RunConfig run;
};

Loaded load_with_run(const std::string& path) {
  Loaded l;
  l.ck = load_checkpoint(path);
  if (!l.ck.run.contains("corpus")) throw ConfigError("checkpoint " + path + " carries no corpus description");
  nlohmann::json j = l.ck.run;
  j["model"] = model_config_to_json(l.ck.params.config);
  l.run = RunConfig::from_json(j);
  return l;
}

std::vector<std::size_t> all_ids(const Corpus& c) {
  std::vector<std::size_t> ids(c.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<std::size_t> split_ids(const Corpus& c, const std::string& split) {
  if (split == "seen") return c.split.seen;
  if (split == "unseen") return c.split.unseen;
  if (split == "all") return all_ids(c);
  throw ConfigError("split must be seen, unseen or all");
}

std::function<EvalPair(const ModelParams<float>&)> desk_eval(const Corpus& corpus, const AnalyticTeacher& teacher,
                                                             const RenderOptions& ro) {
  return [&corpus, &teacher, ro](const ModelParams<float>& p) {
    const DeskScorer scorer(teacher, corpus);
    const ViewRenderer r = model_renderer(p, corpus, ro);
    EvalPair e;
    const auto all = all_ids(corpus);
    if (!corpus.split.seen.empty()) e.seen = evaluate(r, corpus.split.seen, all, scorer, eval_cameras()).mean_r_probability;
    if (!corpus.split.unseen.empty()) e.unseen = evaluate(r, corpus.split.unseen, all, scorer, eval_cameras()).mean_r_probability;
    return e;
  };
}

RenderOptions eval_render_options(const TrainConfig& t) {
  RenderOptions ro = t.render;
  ro.sampling.jitter = false;
  return ro;
}

void run_training(TrainState<float>& st, const Corpus& corpus, const std::vector<std::size_t>& pool,
                  const RunConfig& rc, const TrainConfig& cfg, const std::string& out,
                  const std::string& metrics) {
  const AnalyticTeacher teacher(corpus);
  std::ofstream csv;
  TrainHooks hooks;
  if (!metrics.empty()) {
    csv.open(metrics);
    if (!csv) throw ConfigError("cannot open " + metrics);
    hooks.metrics_csv = &csv;
  }
  hooks.log = &std::cerr;
  hooks.eval_interval = rc.run.eval_interval;
  if (hooks.eval_interval) hooks.evaluate = desk_eval(corpus, teacher, eval_render_options(cfg));
  hooks.checkpoint_interval = rc.run.checkpoint_interval;
  const nlohmann::json run_json = rc.to_json();
  hooks.checkpoint = [&](const TrainState<float>& s) { save_checkpoint(out, Checkpoint::from_state(s, run_json)); };
  train(st, corpus, pool, teacher, cfg, hooks);
  save_checkpoint(out, Checkpoint::from_state(st, run_json));
  std::cerr << "wrote " << out << " after " << st.step << " steps (" << st.skipped_steps << " skipped)\n";
}

struct ViewFlags {
  double azimuth = 0, elevation = 20, distance = 2.5, focal = 1.0;
  std::size_t size = 64, samples = 32;
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--azimuth", azimuth, "Camera azimuth in degrees")->capture_default_str();
    app->add_option("--elevation", elevation, "Camera elevation in degrees")->capture_default_str();
    app->add_option("--distance", distance, "Camera distance")->capture_default_str();
    app->add_option("--focal", focal, "Focal length")->capture_default_str();
    app->add_option("--size", size, "Square image size in pixels")->capture_default_str()->check(CLI::Range(1, 512));
    app->add_option("--samples", samples, "Samples per ray")->capture_default_str()->check(CLI::Range(1, 512));
    app->add_option("--threads", threads, "Render threads")->capture_default_str();
  }
  RenderOptions options() const {
    RenderOptions o;
    o.width = o.height = size;
    o.sampling.n_samples = samples;
    o.threads = threads;
    return o;
  }
  CameraSample camera() const { return make_camera(degrees(azimuth), degrees(elevation), distance, focal); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized text-to-3D desk toolkit"};
  app.require_subcommand(1);

  // train
  std::string config_path, out_path = "model.att3", metrics_path;
  std::optional<std::size_t> steps_override;
  std::optional<std::uint64_t> seed_override;
  unsigned train_threads = 1;
  std::string pool_split = "seen";
  auto* train_cmd = app.add_subcommand("train", "Amortized training over the corpus");
  train_cmd->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_path, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--metrics", metrics_path, "Metrics CSV path");
  train_cmd->add_option("--steps", steps_override, "Override the step count");
  train_cmd->add_option("--seed", seed_override, "Override the seed");
  train_cmd->add_option("--threads", train_threads, "Render threads")->capture_default_str();
  train_cmd->add_option("--pool", pool_split, "Training pool: seen or all")->capture_default_str();

  // finetune
  std::string ck_path, ft_out = "finetuned.att3", ft_metrics, ft_target;
  std::size_t ft_prompt = 0;
  std::size_t ft_steps = 200;
  auto* ft_cmd = app.add_subcommand("finetune", "Per-prompt finetuning of an offset on v or w");
  ft_cmd->add_option("--checkpoint", ck_path, "Amortized checkpoint")->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--prompt-id", ft_prompt, "Corpus prompt id")->required();
  ft_cmd->add_option("--steps", ft_steps, "Finetune steps")->capture_default_str();
  ft_cmd->add_option("--target", ft_target, "Offset target: v or w (default from config)");
  ft_cmd->add_option("--out", ft_out, "Checkpoint path")->capture_default_str();
  ft_cmd->add_option("--metrics", ft_metrics, "Metrics CSV path");

  // render
  ViewFlags view;
  std::size_t render_prompt = 0;
  std::string render_out = "render.png";
  auto* render_cmd = app.add_subcommand("render", "Render one prompt to a PNG");
  render_cmd->add_option("--checkpoint", ck_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  render_cmd->add_option("--prompt-id", render_prompt, "Corpus prompt id")->required();
  render_cmd->add_option("--out", render_out, "PNG path")->capture_default_str();
  view.add(render_cmd);

  // interpolate
  std::size_t interp_a = 0, interp_b = 1, interp_steps = 7;
  std::string interp_dir = "interp";
  ViewFlags iview;
  auto* interp_cmd = app.add_subcommand("interpolate", "Sweep alpha from 0 to 1 between two prompts");
  interp_cmd->add_option("--checkpoint", ck_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  interp_cmd->add_option("--a", interp_a, "First prompt id")->required();
  interp_cmd->add_option("--b", interp_b, "Second prompt id")->required();
  interp_cmd->add_option("--steps", interp_steps, "Frames in the sweep")->capture_default_str()->check(CLI::Range(2, 1000));
  interp_cmd->add_option("--out-dir", interp_dir, "Directory for frames and strip.png")->capture_default_str();
  iview.add(interp_cmd);

  // eval
  std::string eval_split = "unseen", eval_out;
  std::size_t eval_views = 4;
  unsigned eval_threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "Desk r-probability report as JSON");
  eval_cmd->add_option("--checkpoint", ck_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval_split, "seen, unseen or all")->capture_default_str();
  eval_cmd->add_option("--views", eval_views, "Views per prompt")->capture_default_str();
  eval_cmd->add_option("--threads", eval_threads, "Worker threads")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report path (stdout when absent)");

  // serve
  std::string bind = "127.0.0.1:8080";
  unsigned serve_threads = 1;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP render service (ATT3D_BIND overrides --bind)");
  serve_cmd->add_option("--checkpoint", ck_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--bind", bind, "host:port")->capture_default_str();
  serve_cmd->add_option("--threads", serve_threads, "Render threads per request")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig rc = RunConfig::load(config_path);
      if (steps_override) rc.run.train.steps = *steps_override;
      if (seed_override) rc.run.train.seed = *seed_override;
      rc.run.train.render.threads = train_threads;
      const auto pool = split_ids(rc.corpus, pool_split);
      TrainState<float> st =
          TrainState<float>::start(ModelParams<float>::init(rc.model, rc.run.train.seed), rc.run.train.seed);
      run_training(st, rc.corpus, pool, rc, rc.run.train, out_path, metrics_path);
    } else if (*ft_cmd) {
      Loaded l = load_with_run(ck_path);
      TrainConfig cfg = l.run.run.train;
      cfg.steps = ft_steps;
      cfg.interpolation.mode = InterpolationMode::none;
      if (!ft_target.empty()) {
        if (ft_target != "v" && ft_target != "w") throw ConfigError("--target must be v or w");
        cfg.finetune_target = ft_target == "v" ? FinetuneTarget::v : FinetuneTarget::w;
      }
      if (ft_prompt >= l.run.corpus.size()) throw LookupError("unknown prompt id " + std::to_string(ft_prompt));
      TrainState<float> st = start_finetune(l.ck.params, cfg);
      RunConfig rc = l.run;
      rc.run.eval_interval = 0;
      run_training(st, rc.corpus, {ft_prompt}, rc, cfg, ft_out, ft_metrics);
    } else if (*render_cmd) {
      Loaded l = load_with_run(ck_path);
      const PromptEmbedding& e = l.run.corpus.embedding(render_prompt);
      write_png(render_out, frame_image(render_frame(l.ck.params, e, view.camera(), view.options())));
      std::cerr << "wrote " << render_out << '\n';
    } else if (*interp_cmd) {
      Loaded l = load_with_run(ck_path);
      const Corpus& c = l.run.corpus;
      std::filesystem::create_directories(interp_dir);
      std::vector<Image> frames;
      for (std::size_t k = 0; k < interp_steps; ++k) {
        const double alpha = static_cast<double>(k) / static_cast<double>(interp_steps - 1);
        const PromptEmbedding e = interpolate_embeddings(c.embedding(interp_a), c.embedding(interp_b), alpha);
        frames.push_back(frame_image(render_frame(l.ck.params, e, iview.camera(), iview.options())));
        const std::string path = (std::filesystem::path(interp_dir) / ("frame_" + std::to_string(k) + ".png")).string();
        write_png(path, frames.back());
      }
      const std::string strip = (std::filesystem::path(interp_dir) / "strip.png").string();
      write_png(strip, horizontal_strip(frames));
      std::cerr << "wrote " << interp_steps << " frames and " << strip << '\n';
    } else if (*eval_cmd) {
      Loaded l = load_with_run(ck_path);
      const Corpus& c = l.run.corpus;
      const AnalyticTeacher teacher(c);
      const DeskScorer scorer(teacher, c);
      const RenderOptions ro = eval_render_options(l.run.run.train);
      const auto prompts = split_ids(c, eval_split);
      EvalReport rep = evaluate(model_renderer(l.ck.params, c, ro), prompts, all_ids(c), scorer,
                                eval_cameras(eval_views), eval_split, eval_threads);
      // Budget of the run that produced the checkpoint (amortized over the seen pool).
      const double pool = static_cast<double>(std::max<std::size_t>(1, c.split.seen.size()));
      rep.frames_per_prompt = frames_per_prompt(static_cast<double>(l.ck.step),
                                                static_cast<double>(l.run.run.train.batch), pool);
      const std::string text = rep.to_json().dump(2);
      if (eval_out.empty()) {
        std::cout << text << '\n';
      } else {
        std::ofstream f(eval_out);
        if (!f) throw ConfigError("cannot open " + eval_out);
        f << text << '\n';
      }
    } else if (*serve_cmd) {
      Loaded l = load_with_run(ck_path);
      const RenderService svc(l.ck.params, l.run.corpus, serve_threads);
      httplib::Server server;
      install_routes(server, svc);
      const auto [host, port] = bind_address(bind);
      std::cerr << "serving on " << host << ':' << port << '\n';
      if (!server.listen(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
