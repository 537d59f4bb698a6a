#pragma once

// Read-only HTTP render service over a loaded snapshot.

#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "att3d/checkpoint.hpp"
#include "att3d/corpus.hpp"
#include "att3d/evaluation.hpp"
#include "att3d/model.hpp"
#include "att3d/png.hpp"

namespace att3d {

inline constexpr std::size_t kMaxRenderSize = 512;
inline constexpr double kAlphaCacheStep = 1e-3;

/// Error carrying an HTTP status.
struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

struct RenderRequest {
  std::size_t prompt = 0;
  std::optional<std::size_t> pair_b;  // set for pair renders
  double alpha = 0;
  double azimuth_deg = 0, elevation_deg = 20, distance = 2.5, focal = 1.0;
  std::size_t width = 64, height = 64, samples = 32;

  static RenderRequest from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
    RenderRequest r;
    try {
      const bool single = j.contains("prompt");
      const bool pair = j.contains("pair");
      if (single == pair) throw HttpError(400, "give exactly one of 'prompt' or 'pair'");
      if (single) {
        if (j.contains("alpha")) throw HttpError(400, "'alpha' is only valid with 'pair'");
        r.prompt = j["prompt"].get<std::size_t>();
      } else {
        const auto ids = j["pair"].get<std::vector<std::size_t>>();
        if (ids.size() != 2) throw HttpError(400, "'pair' needs two prompt ids");
        if (!j.contains("alpha")) throw HttpError(400, "'pair' needs 'alpha'");
        r.prompt = ids[0];
        r.pair_b = ids[1];
        r.alpha = j["alpha"].get<double>();
        if (!(r.alpha >= 0 && r.alpha <= 1)) throw HttpError(400, "'alpha' must lie in [0, 1]");
      }
      if (j.contains("camera")) {
        const auto& c = j["camera"];
        r.azimuth_deg = c.value("azimuth", r.azimuth_deg);
        r.elevation_deg = c.value("elevation", r.elevation_deg);
        r.distance = c.value("distance", r.distance);
        r.focal = c.value("focal", r.focal);
      }
      r.width = j.value("width", r.width);
      r.height = j.value("height", r.height);
      r.samples = j.value("samples", r.samples);
    } catch (const nlohmann::json::exception& e) {
      throw HttpError(400, std::string("malformed render request: ") + e.what());
    }
    auto bounded = [](std::size_t v) { return v >= 1 && v <= kMaxRenderSize; };
    if (!bounded(r.width) || !bounded(r.height) || !bounded(r.samples)) {
      throw HttpError(400, "width, height and samples must lie in [1, 512]");
    }
    if (!std::isfinite(r.azimuth_deg) || !std::isfinite(r.elevation_deg) || !(r.distance > 0) ||
        !(r.focal > 0)) {
      throw HttpError(400, "camera needs finite angles and positive distance and focal");
    }
    return r;
  }
};

/// Pair weights snap to this grid before modulation; it is also the cache key.
inline double cache_alpha(double alpha) { return std::round(alpha / kAlphaCacheStep) * kAlphaCacheStep; }

class RenderService {
 public:
  RenderService(ModelParams<float> params, Corpus corpus, unsigned threads = 1)
      : params_(std::move(params)), corpus_(std::move(corpus)), threads_(threads) {}

  const Corpus& corpus() const { return corpus_; }

  nlohmann::json prompts() const {
    nlohmann::json out = nlohmann::json::array();
    for (const Prompt& p : corpus_.prompts) {
      out.push_back({{"id", p.id}, {"text", p.text}, {"split", corpus_.is_seen(p.id) ? "seen" : "unseen"}});
    }
    return out;
  }

  nlohmann::json meta() const {
    return {{"model", model_config_to_json(params_.config)},
            {"prompts", corpus_.size()},
            {"seen", corpus_.split.seen.size()},
            {"unseen", corpus_.split.unseen.size()},
            {"max_size", kMaxRenderSize},
            {"alpha_rounding", kAlphaCacheStep},
            {"alpha_rounding_note", "pair alpha is rounded to the nearest multiple before rendering and caching"},
            {"threads", threads_},
            {"cached_modulations", cache_size()}};
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

  std::vector<unsigned char> render_png(const RenderRequest& r) const {
    auto check = [&](std::size_t id) {
      if (id >= corpus_.size()) throw HttpError(404, "unknown prompt id " + std::to_string(id));
    };
    check(r.prompt);
    if (r.pair_b) check(*r.pair_b);
    const std::shared_ptr<const Modulation<float>> mod = modulation(r);
    RenderOptions opt;
    opt.width = r.width;
    opt.height = r.height;
    opt.sampling.n_samples = r.samples;
    opt.threads = threads_;
    const CameraSample cam = make_camera(degrees(r.azimuth_deg), degrees(r.elevation_deg), r.distance, r.focal);
    return encode_png(frame_image(render_frame(params_, *mod, cam, opt)));
  }

 private:
  std::shared_ptr<const Modulation<float>> modulation(const RenderRequest& r) const {
    std::string key = std::to_string(r.prompt);
    PromptEmbedding emb;
    if (r.pair_b) {
      const double a = cache_alpha(r.alpha);
      const long q = std::lround(a / kAlphaCacheStep);
      key += "|" + std::to_string(*r.pair_b) + "|" + std::to_string(q);
      emb = interpolate_embeddings(corpus_.embedding(r.prompt), corpus_.embedding(*r.pair_b), a);
    } else {
      emb = corpus_.embedding(r.prompt);
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    auto m = std::make_shared<const Modulation<float>>(modulate(params_, emb));
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(key, std::move(m)).first->second;
  }

  const ModelParams<float> params_;
  const Corpus corpus_;
  unsigned threads_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const Modulation<float>>> cache_;
};

inline void json_error(httplib::Response& res, int status, const std::string& msg) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", msg}}.dump(), "application/json");
}

/// Registers the service routes on `server`.
inline void install_routes(httplib::Server& server, const RenderService& svc) {
  server.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
  server.Get("/prompts", [&svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(svc.prompts().dump(), "application/json");
  });
  server.Get("/meta", [&svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(svc.meta().dump(), "application/json");
  });
  server.Post("/render", [&svc](const httplib::Request& req, httplib::Response& res) {
    try {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::parse_error& e) {
        throw HttpError(400, std::string("request body is not JSON: ") + e.what());
      }
      const std::vector<unsigned char> png = svc.render_png(RenderRequest::from_json(body));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const HttpError& e) {
      json_error(res, e.status, e.what());
    } catch (const std::exception& e) {
      json_error(res, 500, e.what());
    }
  });
}

/// "host:port" from ATT3D_BIND when set, else `fallback`.
inline std::pair<std::string, int> bind_address(const std::string& fallback) {
  const char* env = std::getenv("ATT3D_BIND");
  const std::string addr = env && *env ? env : fallback;
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("bind address '" + addr + "' needs host:port");
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("bind address '" + addr + "' has a bad port");
  }
  if (port < 0 || port > 65535) throw ConfigError("bind port out of range in '" + addr + "'");
  return {addr.substr(0, colon), port};
}

}  // namespace att3d
