#pragma once

// Compositional prompt corpora, synthetic block embeddings, seen/unseen
// splits and an on-disk embedding cache.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "att3d/errors.hpp"
#include "att3d/mapping_network.hpp"
#include "att3d/random.hpp"

namespace att3d {

struct Slot {
  std::string name;
  std::vector<std::string> fragments;
};

/// A pattern such as "a {animal} wearing a {hat}" plus one fragment list per
/// named slot. An empty pattern joins the fragments with spaces.
struct PromptTemplate {
  std::string pattern;
  std::vector<Slot> slots;

  void validate() const {
    if (slots.empty()) throw ConfigError("template has no slots");
    for (const Slot& s : slots) {
      if (s.fragments.empty()) throw ConfigError("slot '" + s.name + "' has no fragments");
      std::vector<std::string> sorted = s.fragments;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("slot '" + s.name + "' repeats a fragment");
      }
    }
  }

  std::string render(const std::vector<std::size_t>& choice) const {
    if (pattern.empty()) {
      std::string out;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        if (s) out += ' ';
        out += slots[s].fragments.at(choice[s]);
      }
      return out;
    }
    std::string out = pattern;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const std::string key = "{" + slots[s].name + "}";
      const std::size_t pos = out.find(key);
      if (pos == std::string::npos) throw ConfigError("pattern lacks placeholder " + key);
      out.replace(pos, key.size(), slots[s].fragments.at(choice[s]));
    }
    return out;
  }
};

struct Prompt {
  std::size_t id = 0;
  std::string text;
  /// Fragment index per slot.
  std::vector<std::size_t> choice;
};

/// Cartesian product of the slot fragments; the first slot varies slowest.
inline std::vector<Prompt> compose_corpus(const PromptTemplate& tmpl) {
  tmpl.validate();
  std::size_t total = 1;
  for (const Slot& s : tmpl.slots) total *= s.fragments.size();
  std::vector<Prompt> out;
  out.reserve(total);
  std::vector<std::size_t> choice(tmpl.slots.size(), 0);
  for (std::size_t id = 0; id < total; ++id) {
    out.push_back({id, tmpl.render(choice), choice});
    for (std::size_t s = tmpl.slots.size(); s-- > 0;) {
      if (++choice[s] < tmpl.slots[s].fragments.size()) break;
      choice[s] = 0;
    }
  }
  return out;
}

struct CorpusSplit {
  std::vector<std::size_t> seen;    // prompt ids, ascending
  std::vector<std::size_t> unseen;  // prompt ids, ascending
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Keeps ceil(fraction * N) prompts as seen. Held-out prompts are picked so
/// they cover as many fragment values as possible while every fragment value
/// stays present among the seen prompts.
inline CorpusSplit split_seen_unseen(const std::vector<Prompt>& corpus, double fraction,
                                     std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("seen fraction must lie in (0, 1)");
  const std::size_t n = corpus.size();
  const auto n_seen = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (n_seen == 0 || n == 0) throw ConfigError("split would leave no seen prompts");
  const std::size_t n_unseen = n - n_seen;
  const std::size_t slots = corpus.empty() ? 0 : corpus[0].choice.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  // counts[s][f]: how often fragment f of slot s occurs among seen / unseen.
  std::vector<std::map<std::size_t, std::size_t>> in_seen(slots), in_unseen(slots);
  for (const Prompt& p : corpus) {
    for (std::size_t s = 0; s < slots; ++s) ++in_seen[s][p.choice[s]];
  }
  std::vector<bool> held(n, false);
  for (std::size_t k = 0; k < n_unseen; ++k) {
    std::size_t best = n;
    long best_score = -1;
    bool best_safe = false;
    for (std::size_t idx : order) {
      if (held[idx]) continue;
      const Prompt& p = corpus[idx];
      long score = 0;
      bool safe = true;
      for (std::size_t s = 0; s < slots; ++s) {
        if (in_unseen[s][p.choice[s]] == 0) ++score;
        if (in_seen[s][p.choice[s]] <= 1) safe = false;
      }
      if ((safe && !best_safe) || (safe == best_safe && score > best_score)) {
        best = idx;
        best_score = score;
        best_safe = safe;
      }
    }
    held[best] = true;
    for (std::size_t s = 0; s < slots; ++s) {
      --in_seen[s][corpus[best].choice[s]];
      ++in_unseen[s][corpus[best].choice[s]];
    }
  }
  CorpusSplit split;
  split.fraction = fraction;
  split.seed = seed;
  for (std::size_t i = 0; i < n; ++i) (held[i] ? split.unseen : split.seen).push_back(corpus[i].id);
  return split;
}

/// Deterministic block embeddings: token row s is a unit vector drawn from a
/// hash stream keyed by (slot name, fragment).
class Embedder {
 public:
  Embedder() = default;
  Embedder(PromptTemplate tmpl, std::size_t dim, std::uint64_t seed = 0)
      : tmpl_(std::move(tmpl)), dim_(dim), seed_(seed) {
    tmpl_.validate();
    if (dim_ == 0) throw ConfigError("embedding width must be positive");
  }

  const PromptTemplate& prompt_template() const { return tmpl_; }
  std::size_t tokens() const { return tmpl_.slots.size(); }
  std::size_t dim() const { return dim_; }

  std::vector<double> fragment_vector(std::size_t slot, const std::string& fragment) const {
    const Slot& s = tmpl_.slots.at(slot);
    if (std::find(s.fragments.begin(), s.fragments.end(), fragment) == s.fragments.end()) {
      throw LookupError("unknown fragment '" + fragment + "' for slot '" + s.name + "'");
    }
    std::uint64_t key = fnv1a64(s.name, seed_ ^ 0xcbf29ce484222325ULL);
    key = fnv1a64(std::string_view("\x1f", 1), key);
    key = fnv1a64(fragment, key);
    HashNormalStream stream(key);
    std::vector<double> row(dim_);
    double n2 = 0;
    for (double& x : row) {
      x = stream.next();
      n2 += x * x;
    }
    const double n = std::sqrt(n2);
    for (double& x : row) x /= n;
    return row;
  }

  PromptEmbedding embed_fragments(const std::vector<std::string>& fragments) const {
    if (fragments.size() != tokens()) throw StructuralError("fragment count != slot count");
    PromptEmbedding e(tokens(), dim_);
    for (std::size_t s = 0; s < tokens(); ++s) {
      const std::vector<double> row = fragment_vector(s, fragments[s]);
      std::copy(row.begin(), row.end(), e.values.begin() + static_cast<std::ptrdiff_t>(s * dim_));
    }
    return e;
  }

  PromptEmbedding embed(const Prompt& p) const {
    std::vector<std::string> frags;
    for (std::size_t s = 0; s < tokens(); ++s) frags.push_back(tmpl_.slots[s].fragments.at(p.choice.at(s)));
    return embed_fragments(frags);
  }

 private:
  PromptTemplate tmpl_;
  std::size_t dim_ = 8;
  std::uint64_t seed_ = 0;
};

/// A template with its composed prompts, split and embeddings.
struct Corpus {
  PromptTemplate tmpl;
  std::vector<Prompt> prompts;
  CorpusSplit split;
  Embedder embedder;
  std::vector<PromptEmbedding> embeddings;  // by prompt id

  static Corpus build(const PromptTemplate& tmpl, std::size_t dim, double seen_fraction,
                      std::uint64_t split_seed, std::uint64_t embed_seed = 0) {
    Corpus c;
    c.tmpl = tmpl;
    c.prompts = compose_corpus(tmpl);
    c.embedder = Embedder(tmpl, dim, embed_seed);
    if (seen_fraction >= 1.0) {
      c.split.fraction = 1.0;
      for (const Prompt& p : c.prompts) c.split.seen.push_back(p.id);
    } else {
      c.split = split_seen_unseen(c.prompts, seen_fraction, split_seed);
    }
    for (const Prompt& p : c.prompts) c.embeddings.push_back(c.embedder.embed(p));
    return c;
  }

  std::size_t size() const { return prompts.size(); }
  bool is_seen(std::size_t id) const {
    return std::binary_search(split.seen.begin(), split.seen.end(), id);
  }
  const PromptEmbedding& embedding(std::size_t id) const {
    if (id >= embeddings.size()) throw LookupError("prompt id " + std::to_string(id) + " out of range");
    return embeddings[id];
  }
  std::size_t find(const std::string& text) const {
    for (const Prompt& p : prompts) {
      if (p.text == text) return p.id;
    }
    throw LookupError("prompt '" + text + "' not in corpus");
  }
};

inline PromptTemplate template_from_json(const nlohmann::json& j) {
  PromptTemplate t;
  t.pattern = j.value("template", std::string());
  if (!j.contains("slots") || !j["slots"].is_array()) throw ConfigError("corpus config needs a 'slots' array");
  for (const auto& s : j["slots"]) {
    Slot slot;
    slot.name = s.at("name").get<std::string>();
    slot.fragments = s.at("fragments").get<std::vector<std::string>>();
    t.slots.push_back(std::move(slot));
  }
  t.validate();
  return t;
}

inline nlohmann::json template_to_json(const PromptTemplate& t) {
  nlohmann::json j;
  j["template"] = t.pattern;
  j["slots"] = nlohmann::json::array();
  for (const Slot& s : t.slots) j["slots"].push_back({{"name", s.name}, {"fragments", s.fragments}});
  return j;
}

/// {"template", "slots", "seen_fraction", "split_seed", "embed_dim", "embed_seed"}
inline Corpus corpus_from_json(const nlohmann::json& j) {
  try {
    return Corpus::build(template_from_json(j), j.value("embed_dim", std::size_t{8}),
                         j.value("seen_fraction", 1.0), j.value("split_seed", std::uint64_t{0}),
                         j.value("embed_seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus config: ") + e.what());
  }
}

inline nlohmann::json corpus_to_json(const Corpus& c) {
  nlohmann::json j = template_to_json(c.tmpl);
  j["seen_fraction"] = c.split.fraction;
  j["split_seed"] = c.split.seed;
  j["embed_dim"] = c.embedder.dim();
  return j;
}

/// Prompt text -> embedding, persisted as a JSON index next to a binary blob
/// of little-endian float64 values.
class EmbeddingCache {
 public:
  void put(const std::string& prompt, PromptEmbedding e) { entries_[prompt] = std::move(e); }
  bool contains(const std::string& prompt) const { return entries_.count(prompt) != 0; }
  const PromptEmbedding& get(const std::string& prompt) const {
    auto it = entries_.find(prompt);
    if (it == entries_.end()) throw LookupError("prompt '" + prompt + "' not cached");
    return it->second;
  }
  std::size_t size() const { return entries_.size(); }

  void save(const std::string& prefix) const {
    nlohmann::json index;
    index["dtype"] = "f64le";
    index["entries"] = nlohmann::json::array();
    std::ofstream blob(prefix + ".bin", std::ios::binary);
    if (!blob) throw FormatError("cannot write " + prefix + ".bin");
    std::size_t offset = 0;
    for (const auto& [prompt, e] : entries_) {
      index["entries"].push_back(
          {{"prompt", prompt}, {"tokens", e.tokens}, {"dim", e.dim}, {"offset", offset}});
      for (double v : e.values) write_le(blob, v);
      offset += e.values.size();
    }
    std::ofstream idx(prefix + ".json");
    if (!idx) throw FormatError("cannot write " + prefix + ".json");
    idx << index.dump(2) << '\n';
  }

  static EmbeddingCache load(const std::string& prefix) {
    std::ifstream idx(prefix + ".json");
    if (!idx) throw FormatError("cannot read " + prefix + ".json");
    nlohmann::json index;
    try {
      index = nlohmann::json::parse(idx);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("embedding index: ") + e.what());
    }
    if (index.value("dtype", std::string()) != "f64le") throw FormatError("unsupported cache dtype");
    std::ifstream blob(prefix + ".bin", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
    EmbeddingCache cache;
    for (const auto& ent : index.at("entries")) {
      const auto tokens = ent.at("tokens").get<std::size_t>();
      const auto dim = ent.at("dim").get<std::size_t>();
      const auto offset = ent.at("offset").get<std::size_t>();
      if ((offset + tokens * dim) * 8 > bytes.size()) throw IntegrityError("embedding blob truncated");
      std::vector<double> vals(tokens * dim);
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = read_le(bytes.data() + (offset + i) * 8);
      cache.put(ent.at("prompt").get<std::string>(), PromptEmbedding(tokens, dim, std::move(vals)));
    }
    return cache;
  }

 private:
  static void write_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, 8);
  }
  static double read_le(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::map<std::string, PromptEmbedding> entries_;
};

}  // namespace att3d
