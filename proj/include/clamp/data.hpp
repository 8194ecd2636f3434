#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "clamp/encoders.hpp"
#include "clamp/errors.hpp"
#include "clamp/mcl.hpp"
#include "clamp/rng.hpp"

namespace clamp {

struct MultimodalExample {
  std::vector<std::size_t> tokens;
  std::vector<BioLabel> labels;
  PatchGrid image;

  bool operator==(const MultimodalExample&) const = default;
};

struct AspectSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive
  Polarity polarity = Polarity::Pos;

  auto operator<=>(const AspectSpan&) const = default;
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t n_pred = 0;
  std::size_t n_gold = 0;

  bool operator==(const Metrics&) const = default;
};

// ---------------------------------------------------------------------------
// JSON Lines

inline nlohmann::json example_to_json(const MultimodalExample& ex) {
  nlohmann::json labels = nlohmann::json::array();
  for (BioLabel l : ex.labels) labels.push_back(std::string(label_name(l)));
  return {{"tokens", ex.tokens},
          {"labels", labels},
          {"image", {{"h", ex.image.h}, {"w", ex.image.w}, {"c", ex.image.c}, {"values", ex.image.values}}}};
}

inline MultimodalExample example_from_json(const nlohmann::json& j) {
  auto need = [&j](const char* key, nlohmann::json::value_t type) -> const nlohmann::json& {
    if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field \"") + key + "\"");
    const auto& v = j.at(key);
    if (v.type() != type) throw DataError(std::string("field \"") + key + "\" has the wrong type");
    return v;
  };
  MultimodalExample ex;
  for (const auto& t : need("tokens", nlohmann::json::value_t::array)) {
    if (!t.is_number_unsigned()) throw DataError("token ids must be non-negative integers");
    ex.tokens.push_back(t.get<std::size_t>());
  }
  for (const auto& l : need("labels", nlohmann::json::value_t::array)) {
    if (!l.is_string()) throw DataError("labels must be strings");
    const auto parsed = parse_label(l.get<std::string>());
    if (!parsed) throw DataError("unknown label \"" + l.get<std::string>() + "\"");
    ex.labels.push_back(*parsed);
  }
  if (ex.tokens.empty()) throw DataError("empty token list");
  if (ex.tokens.size() != ex.labels.size()) {
    throw DataError("length mismatch: " + std::to_string(ex.tokens.size()) + " tokens vs " +
                    std::to_string(ex.labels.size()) + " labels");
  }
  const auto& img = need("image", nlohmann::json::value_t::object);
  for (const char* key : {"h", "w", "c", "values"}) {
    if (!img.contains(key)) throw DataError(std::string("image is missing \"") + key + "\"");
  }
  for (const char* key : {"h", "w", "c"}) {
    if (!img.at(key).is_number_unsigned() || img.at(key).get<std::size_t>() == 0)
      throw DataError(std::string("image.") + key + " must be a positive integer");
  }
  ex.image.h = img.at("h").get<std::size_t>();
  ex.image.w = img.at("w").get<std::size_t>();
  ex.image.c = img.at("c").get<std::size_t>();
  if (!img.at("values").is_array()) throw DataError("image.values must be an array");
  for (const auto& v : img.at("values")) {
    if (!v.is_number()) throw DataError("image values must be numbers");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw DataError("image values must be finite");
    ex.image.values.push_back(x);
  }
  if (ex.image.values.size() != ex.image.h * ex.image.w * ex.image.c) {
    throw DataError("image grid shape mismatch: " + std::to_string(ex.image.values.size()) + " values for " +
                    std::to_string(ex.image.h) + "x" + std::to_string(ex.image.w) + "x" + std::to_string(ex.image.c));
  }
  return ex;
}

inline std::vector<MultimodalExample> parse_jsonl(std::istream& in, const std::string& source = "<stream>") {
  std::vector<MultimodalExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<MultimodalExample> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);
  return parse_jsonl(in, path);
}

inline void write_jsonl(std::ostream& out, const std::vector<MultimodalExample>& examples) {
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

inline void save_jsonl(const std::string& path, const std::vector<MultimodalExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path);
  write_jsonl(out, examples);
  if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Spans and metrics

// A span opens at B-X, or at I-X that does not continue a run of polarity X,
// and extends through consecutive I-X.
inline std::vector<AspectSpan> extract_spans(std::span<const BioLabel> labels) {
  std::vector<AspectSpan> spans;
  bool open = false;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const BioLabel l = labels[t];
    if (l == BioLabel::O) {
      open = false;
      continue;
    }
    const Polarity p = polarity_of(l);
    if (is_inside(l) && open && spans.back().polarity == p) {
      spans.back().end = t;
      continue;
    }
    spans.push_back({t, t, p});
    open = true;
  }
  return spans;
}

inline std::vector<BioLabel> spans_to_labels(std::size_t n, std::span<const AspectSpan> spans) {
  std::vector<BioLabel> labels(n, BioLabel::O);
  for (const auto& s : spans) {
    labels[s.start] = begin_label(s.polarity);
    for (std::size_t t = s.start + 1; t <= s.end; ++t) labels[t] = inside_label(s.polarity);
  }
  return labels;
}

inline Metrics metrics_from_counts(std::size_t tp, std::size_t n_pred, std::size_t n_gold) {
  Metrics m;
  m.tp = tp;
  m.n_pred = n_pred;
  m.n_gold = n_gold;
  m.precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  m.recall = n_gold ? static_cast<double>(tp) / static_cast<double>(n_gold) : 0.0;
  m.f1 = (m.precision + m.recall > 0.0) ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

// Exact (start, end, polarity) matching, pooled over sentences. Duplicate
// tuples within a sentence count once.
inline Metrics micro_prf(const std::vector<std::vector<AspectSpan>>& gold,
                         const std::vector<std::vector<AspectSpan>>& pred) {
  if (gold.size() != pred.size()) {
    throw DataError("micro_prf: " + std::to_string(gold.size()) + " gold sentences vs " +
                    std::to_string(pred.size()) + " predicted");
  }
  std::size_t tp = 0, n_pred = 0, n_gold = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const std::set<AspectSpan> g(gold[s].begin(), gold[s].end());
    const std::set<AspectSpan> p(pred[s].begin(), pred[s].end());
    n_gold += g.size();
    n_pred += p.size();
    for (const auto& span : p) tp += g.count(span);
  }
  return metrics_from_counts(tp, n_pred, n_gold);
}

inline nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"tp", m.tp},               {"n_pred", m.n_pred}, {"n_gold", m.n_gold}};
}

inline nlohmann::json spans_to_json(const std::vector<AspectSpan>& spans) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : spans)
    out.push_back({{"start", s.start}, {"end", s.end}, {"polarity", std::string(polarity_name(s.polarity))}});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  std::size_t n_examples = 200;
  std::size_t vocab_size = 100;
  std::size_t min_len = 6;
  std::size_t max_len = 16;
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::size_t channels = 3;
  std::size_t patch_size = 4;
  double drop_prob = 0.3;  // chance that one of the two polarity cues is removed
  double noise = 0.1;      // background pixel standard deviation
  std::uint64_t seed = 0;
};

// Vocabulary layout: filler ids, then equal ranges for polarity-free aspect
// words and for POS / NEU / NEG aspect words.
struct SyntheticVocab {
  std::size_t filler_end;
  std::size_t range;

  explicit SyntheticVocab(std::size_t vocab) : range(vocab / 10) { filler_end = vocab - 4 * range; }
  std::size_t generic_begin() const { return filler_end; }
  std::size_t polarity_begin(Polarity p) const { return filler_end + range * (1 + static_cast<std::size_t>(p)); }
};

inline constexpr std::size_t kMaxPlantedSpans = 3;
inline constexpr std::size_t kMaxSpanLength = 2;

// Polarity cue written over one patch: POS all +1, NEG all -1, NEU a +-1
// checkerboard over (row + col + channel).
inline double polarity_cue(Polarity p, std::size_t r, std::size_t c, std::size_t ch) {
  switch (p) {
    case Polarity::Pos: return 1.0;
    case Polarity::Neg: return -1.0;
    case Polarity::Neu: return (r + c + ch) % 2 == 0 ? 1.0 : -1.0;
  }
  return 0.0;
}

// Each sentence plants 1-3 separated aspect spans. A span's polarity is cued
// by its token ids and by a block in patch (start mod k); with probability
// drop_prob one of the two cues (chosen uniformly) is withheld.
inline std::vector<MultimodalExample> gen_synthetic(const SyntheticConfig& cfg) {
  const std::size_t needed = kMaxPlantedSpans * kMaxSpanLength + kMaxPlantedSpans - 1;
  if (cfg.max_len < needed) {
    throw ConfigError("gen_synthetic: max_len " + std::to_string(cfg.max_len) + " cannot hold " +
                      std::to_string(kMaxPlantedSpans) + " spans (need " + std::to_string(needed) + ")");
  }
  if (cfg.min_len == 0 || cfg.min_len > cfg.max_len) throw ConfigError("gen_synthetic: need 1 <= min_len <= max_len");
  if (cfg.vocab_size < 10) throw ConfigError("gen_synthetic: vocab_size must be at least 10");
  if (cfg.patch_size == 0 || cfg.image_h % cfg.patch_size || cfg.image_w % cfg.patch_size || cfg.channels == 0)
    throw ConfigError("gen_synthetic: image sides must be positive multiples of patch_size");
  if (!(cfg.drop_prob >= 0.0 && cfg.drop_prob <= 1.0)) throw ConfigError("gen_synthetic: drop_prob must lie in [0, 1]");

  const SyntheticVocab vocab(cfg.vocab_size);
  const std::size_t grid_w = cfg.image_w / cfg.patch_size;
  const std::size_t patches = grid_w * (cfg.image_h / cfg.patch_size);
  Rng rng(cfg.seed);
  std::vector<MultimodalExample> out;
  out.reserve(cfg.n_examples);
  for (std::size_t e = 0; e < cfg.n_examples; ++e) {
    const std::size_t n_spans = 1 + rng.below(kMaxPlantedSpans);
    std::vector<std::size_t> lengths(n_spans);
    std::size_t occupied = n_spans - 1;
    for (auto& len : lengths) occupied += (len = 1 + rng.below(kMaxSpanLength));
    const std::size_t lo = std::max(cfg.min_len, occupied);
    const std::size_t n = lo + rng.below(cfg.max_len - lo + 1);

    std::vector<std::size_t> gaps(n_spans + 1, 0);
    for (std::size_t i = 0; i < n - occupied; ++i) ++gaps[rng.below(n_spans + 1)];

    MultimodalExample ex;
    ex.tokens.assign(n, 0);
    ex.labels.assign(n, BioLabel::O);
    for (auto& t : ex.tokens) t = rng.below(vocab.filler_end);
    ex.image = {cfg.image_h, cfg.image_w, cfg.channels, std::vector<double>(cfg.image_h * cfg.image_w * cfg.channels)};
    for (double& v : ex.image.values) v = rng.normal(0.0, cfg.noise);

    std::size_t pos = 0;
    for (std::size_t s = 0; s < n_spans; ++s) {
      pos += gaps[s] + (s > 0 ? 1 : 0);
      const auto polarity = static_cast<Polarity>(rng.below(3));
      bool text_cue = true, image_cue = true;
      if (rng.bernoulli(cfg.drop_prob)) (rng.below(2) == 0 ? text_cue : image_cue) = false;
      const std::size_t base = text_cue ? vocab.polarity_begin(polarity) : vocab.generic_begin();
      for (std::size_t i = 0; i < lengths[s]; ++i) {
        ex.tokens[pos + i] = base + rng.below(vocab.range);
        ex.labels[pos + i] = i == 0 ? begin_label(polarity) : inside_label(polarity);
      }
      if (image_cue) {
        const std::size_t patch = pos % patches;
        const std::size_t r0 = (patch / grid_w) * cfg.patch_size, c0 = (patch % grid_w) * cfg.patch_size;
        for (std::size_t r = 0; r < cfg.patch_size; ++r)
          for (std::size_t c = 0; c < cfg.patch_size; ++c)
            for (std::size_t ch = 0; ch < cfg.channels; ++ch)
              ex.image.at(r0 + r, c0 + c, ch) = polarity_cue(polarity, r, c, ch);
      }
      pos += lengths[s];
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// Predicts, for every token id, the label it carried most often in a
// reference corpus (lowest label index on ties; O for unseen ids).
class TokenMajorityBaseline {
 public:
  explicit TokenMajorityBaseline(const std::vector<MultimodalExample>& corpus) {
    for (const auto& ex : corpus)
      for (std::size_t t = 0; t < ex.tokens.size(); ++t) ++counts_[ex.tokens[t]][static_cast<std::size_t>(ex.labels[t])];
  }

  std::vector<BioLabel> predict(const MultimodalExample& ex) const {
    std::vector<BioLabel> out;
    for (std::size_t id : ex.tokens) {
      auto it = counts_.find(id);
      if (it == counts_.end()) {
        out.push_back(BioLabel::O);
        continue;
      }
      const auto& c = it->second;
      out.push_back(static_cast<BioLabel>(std::max_element(c.begin(), c.end()) - c.begin()));
    }
    return out;
  }

  Metrics evaluate(const std::vector<MultimodalExample>& data) const {
    std::vector<std::vector<AspectSpan>> gold, pred;
    for (const auto& ex : data) {
      gold.push_back(extract_spans(ex.labels));
      pred.push_back(extract_spans(predict(ex)));
    }
    return micro_prf(gold, pred);
  }

 private:
  std::map<std::size_t, std::array<std::size_t, kNumLabels>> counts_;
};

}  // namespace clamp
