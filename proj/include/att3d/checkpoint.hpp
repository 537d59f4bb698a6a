#pragma once

// Binary checkpoints.
//
// Layout (little-endian):
//   "ATT3" | u32 version | u64 digest of the model-config JSON
//   u32 len + config JSON {"model": ..., "run": ...}
//   u32 n, then n x (name, u32 rows, u32 cols, f32 data)        parameters
//   u32 n, then n x (name, i32 iters, u32 len, f32 data)       spectral u
//   u8 has_adam [u64 step, u32 n, n x (name, m tensor, v tensor)]
//   u32 len + rng state text | u64 step | u64 skipped | u64 frames | u8 scope
//   u32 CRC32 of every preceding byte

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "att3d/config.hpp"
#include "att3d/errors.hpp"
#include "att3d/trainer.hpp"

namespace att3d {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'A', 'T', 'T', '3'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t config_digest(const ModelConfig& c) {
  return fnv1a64(model_config_to_json(c).dump());
}

struct Checkpoint {
  ModelParams<float> params;
  /// Free-form run description (corpus and training settings).
  nlohmann::json run = nlohmann::json::object();
  std::optional<AdamState<float>> adam;
  std::string rng_state;
  std::uint64_t step = 0, skipped_steps = 0, frames = 0;
  GradScope scope = GradScope::full;

  static Checkpoint from_state(const TrainState<float>& st, nlohmann::json run = nlohmann::json::object()) {
    Checkpoint c;
    c.params = st.params;
    c.run = std::move(run);
    c.adam = st.adam;
    std::ostringstream os;
    os << st.rng;
    c.rng_state = os.str();
    c.step = st.step;
    c.skipped_steps = st.skipped_steps;
    c.frames = st.frames;
    c.scope = st.scope;
    return c;
  }

  TrainState<float> to_state() const {
    TrainState<float> st;
    st.params = params;
    st.scope = scope;
    st.adam = adam ? *adam : AdamState<float>::zeros_like(st.trainable());
    if (st.adam.m.size() != st.trainable().size()) {
      throw StructuralError("checkpoint optimizer state does not match the trainable tensors");
    }
    if (!rng_state.empty()) {
      std::istringstream is(rng_state);
      is >> st.rng;
      if (!is) throw FormatError("checkpoint rng state is malformed");
    }
    st.step = step;
    st.skipped_steps = skipped_steps;
    st.frames = frames;
    return st;
  }
};

namespace detail {

class ByteWriter {
 public:
  template <class V>
  void put(V v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_tensor(const Matrix<float>& m) {
    put(static_cast<std::uint32_t>(m.rows()));
    put(static_cast<std::uint32_t>(m.cols()));
    put_bytes(m.data(), m.size() * sizeof(float));
  }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

  template <class V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  std::string get_string() {
    const std::uint32_t len = get<std::uint32_t>();
    const unsigned char* s = take(len);
    return std::string(reinterpret_cast<const char*>(s), len);
  }
  Matrix<float> get_tensor() {
    const std::uint64_t rows = get<std::uint32_t>(), cols = get<std::uint32_t>();
    Matrix<float> m(rows, cols);
    std::memcpy(m.data(), take(rows * cols * sizeof(float)), m.size() * sizeof(float));
    return m;
  }
  bool done() const { return at_ == n_; }

 private:
  const unsigned char* take(std::uint64_t k) {
    if (k > n_ - at_) throw IntegrityError("checkpoint is truncated");
    const unsigned char* out = p_ + at_;
    at_ += k;
    return out;
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t at_ = 0;
};

inline std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, p, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  ModelParams<float> p = ck.params;  // named_tensors needs non-const access
  w.put_bytes(kCheckpointMagic, 4);
  w.put(kCheckpointVersion);
  w.put(config_digest(p.config));
  w.put_string(nlohmann::json{{"model", model_config_to_json(p.config)}, {"run", ck.run}}.dump());

  const auto tensors = p.named_tensors();
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    w.put_string(name);
    w.put_tensor(*m);
  }
  const auto spectral = p.named_spectral_states();
  w.put(static_cast<std::uint32_t>(spectral.size()));
  for (const auto& [name, s] : spectral) {
    w.put_string(name);
    w.put(static_cast<std::int32_t>(s->n_iters));
    w.put(static_cast<std::uint32_t>(s->u.size()));
    w.put_bytes(s->u.data(), s->u.size() * sizeof(float));
  }

  w.put(static_cast<std::uint8_t>(ck.adam ? 1 : 0));
  if (ck.adam) {
    // Moments align with the trainable subset, which the scope selects.
    std::vector<std::string> names;
    for (const auto& [name, m] : tensors) {
      if (ck.scope == GradScope::full || name.rfind("offset.", 0) == 0) names.push_back(name);
    }
    if (names.size() != ck.adam->m.size()) {
      throw StructuralError("optimizer state does not match the trainable tensors");
    }
    w.put(ck.adam->step);
    w.put(static_cast<std::uint32_t>(names.size()));
    for (std::size_t k = 0; k < names.size(); ++k) {
      w.put_string(names[k]);
      w.put_tensor(ck.adam->m[k]);
      w.put_tensor(ck.adam->v[k]);
    }
  }
  w.put_string(ck.rng_state);
  w.put(ck.step);
  w.put(ck.skipped_steps);
  w.put(ck.frames);
  w.put(static_cast<std::uint8_t>(ck.scope == GradScope::full ? 0 : 1));
  const std::uint32_t crc = detail::crc_of(w.bytes().data(), w.bytes().size());
  w.put(crc);
  return std::move(w.bytes());
}

/// Parses checkpoint bytes. When `expected` is given, a differing model
/// config is refused before any tensor is read.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes,
                                    const std::optional<ModelConfig>& expected = std::nullopt) {
  if (bytes.size() < 4 + 4 + 8 + 4) throw IntegrityError("checkpoint is truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);
  if (detail::crc_of(bytes.data(), body) != stored_crc) {
    throw IntegrityError("checkpoint checksum mismatch (file is corrupted or truncated)");
  }

  detail::ByteReader r(bytes.data() + 4, body - 4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto digest = r.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header JSON: ") + e.what());
  }
  const ModelConfig cfg = model_config_from_json(header.at("model"));
  if (config_digest(cfg) != digest) throw IntegrityError("checkpoint config digest mismatch");
  if (expected && config_digest(*expected) != digest) {
    throw ConfigError("checkpoint was written for a different model config: stored " +
                      model_config_to_json(cfg).dump() + ", expected " +
                      model_config_to_json(*expected).dump());
  }

  Checkpoint ck;
  ck.run = header.value("run", nlohmann::json::object());
  ck.params = ModelParams<float>::init(cfg, 0);
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    const std::string name = r.get_string();
    Matrix<float> m = r.get_tensor();
    if (name == "offset.v") {
      ck.params.v_offset = std::move(m);
      continue;
    }
    if (name == "offset.w") {
      ck.params.w_offset = std::move(m);
      continue;
    }
    bool placed = false;
    for (auto& [n, dst] : ck.params.named_tensors()) {
      if (n != name) continue;
      if (!dst->same_shape(m)) throw StructuralError("checkpoint tensor " + name + " has the wrong shape");
      *dst = std::move(m);
      placed = true;
      break;
    }
    if (!placed) throw FormatError("checkpoint has unknown tensor " + name);
  }
  const auto n_spectral = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < n_spectral; ++k) {
    const std::string name = r.get_string();
    const auto iters = r.get<std::int32_t>();
    const auto len = r.get<std::uint32_t>();
    std::vector<float> u(len);
    for (float& x : u) x = r.get<float>();
    bool placed = false;
    for (auto& [n, dst] : ck.params.named_spectral_states()) {
      if (n != name) continue;
      if (dst->u.size() != u.size()) throw StructuralError("checkpoint spectral state " + name + " has the wrong length");
      dst->u = std::move(u);
      dst->n_iters = iters;
      placed = true;
      break;
    }
    if (!placed) throw FormatError("checkpoint has unknown spectral state " + name);
  }
  if (r.get<std::uint8_t>() != 0) {
    AdamState<float> a;
    a.step = r.get<std::uint64_t>();
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < n; ++k) {
      r.get_string();
      a.m.push_back(r.get_tensor());
      a.v.push_back(r.get_tensor());
    }
    ck.adam = std::move(a);
  }
  ck.rng_state = r.get_string();
  ck.step = r.get<std::uint64_t>();
  ck.skipped_steps = r.get<std::uint64_t>();
  ck.frames = r.get<std::uint64_t>();
  ck.scope = r.get<std::uint8_t>() == 0 ? GradScope::full : GradScope::offsets_only;
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

/// Writes through a temporary file and renames, so readers never see a
/// partial checkpoint.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::vector<unsigned char> bytes = encode_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + tmp + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LookupError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<ModelConfig>& expected = std::nullopt) {
  return decode_checkpoint(read_file_bytes(path), expected);
}

}  // namespace att3d
