#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include "json.hpp"

#include "clamp/errors.hpp"
#include "clamp/model.hpp"
#include "clamp/trainer.hpp"

// Run configuration as JSON. Files may set any subset of the known keys;
// everything else keeps its in-code default. Unknown keys are rejected and
// the resolved configuration is what gets echoed into checkpoints.

namespace clamp {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

namespace detail {

static_assert(std::is_same_v<std::uint64_t, std::size_t>, "seeds are read through the size_t overload");

class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  void read(const char* key, std::size_t& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, double& out) {
    if (const auto* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, bool& out) {
    if (const auto* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be a boolean");
      out = v->get<bool>();
    }
  }
  void read(const char* key, FeatureSource& out) {
    if (const auto* v = take(key)) {
      const std::string s = v->is_string() ? v->get<std::string>() : "";
      if (s == "encoder") out = FeatureSource::Encoder;
      else if (s == "paf") out = FeatureSource::Paf;
      else throw ConfigError(where(key) + " must be \"encoder\" or \"paf\"");
    }
  }
  void read(const char* key, PriorityMode& out) {
    if (const auto* v = take(key)) {
      const std::string s = v->is_string() ? v->get<std::string>() : "";
      if (s == "ema") out = PriorityMode::Ema;
      else if (s == "frozen") out = PriorityMode::Frozen;
      else throw ConfigError(where(key) + " must be \"ema\" or \"frozen\"");
    }
  }
  void read(const char* key, Ablation& out) {
    if (const auto* v = take(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + " must be an array of ablation names");
      out = {};
      for (const auto& item : *v) {
        const std::string s = item.is_string() ? item.get<std::string>() : "";
        if (s == "no_paf") out.no_paf = true;
        else if (s == "no_mcl") out.no_mcl = true;
        else if (s == "no_ama") out.no_ama = true;
        else throw ConfigError(where(key) + " has unknown ablation \"" + s + "\"");
      }
    }
  }
  const nlohmann::json* section(const char* key) { return take(key); }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown configuration key " + where(key.c_str()));
    }
  }

 private:
  const nlohmann::json* take(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }
  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "<root>" : path_;
    if (key) p = path_.empty() ? std::string(key) : path_ + "." + key;
    return "\"" + p + "\"";
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline const char* source_name(FeatureSource s) { return s == FeatureSource::Paf ? "paf" : "encoder"; }

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::ObjectReader root(j, "");
  if (const auto* s = root.section("text")) {
    detail::ObjectReader r(*s, "text");
    auto& t = cfg.model.text;
    r.read("vocab_size", t.vocab_size);
    r.read("d_model", t.d_model);
    r.read("n_layers", t.n_layers);
    r.read("n_heads", t.n_heads);
    r.read("max_len", t.max_len);
    r.read("dropout", t.dropout);
    r.finish();
  }
  if (const auto* s = root.section("image")) {
    detail::ObjectReader r(*s, "image");
    auto& im = cfg.model.image;
    r.read("image_h", im.image_h);
    r.read("image_w", im.image_w);
    r.read("channels", im.channels);
    r.read("patch_size", im.patch_size);
    r.read("d_model", im.d_model);
    r.read("n_layers", im.n_layers);
    r.read("n_heads", im.n_heads);
    r.read("dropout", im.dropout);
    r.finish();
  }
  if (const auto* s = root.section("paf")) {
    detail::ObjectReader r(*s, "paf");
    auto& p = cfg.model.paf;
    r.read("d_hidden", p.d_hidden);
    r.read("n_heads", p.n_heads);
    r.read("dropout_p", p.dropout_p);
    r.read("l_max", p.l_max);
    r.read("use_self_bias", p.use_self_bias);
    r.finish();
  }
  if (const auto* s = root.section("mcl")) {
    detail::ObjectReader r(*s, "mcl");
    auto& m = cfg.model.mcl;
    r.read("tau_gcl", m.tau_gcl);
    r.read("ipot_beta", m.ipot.beta);
    r.read("ipot_outer_iters", m.ipot.outer_iters);
    r.read("ipot_inner_iters", m.ipot.inner_iters);
    r.read("gcl_source", m.gcl_source);
    r.read("wra_source", m.wra_source);
    r.read("use_cls_loss", m.use_cls_loss);
    r.finish();
  }
  if (const auto* s = root.section("ama")) {
    detail::ObjectReader r(*s, "ama");
    auto& a = cfg.model.ama;
    r.read("alpha", a.alpha);
    r.read("tau", a.tau);
    r.read("decay", a.decay);
    r.read("priority_mode", a.priority_mode);
    r.finish();
  }
  if (const auto* s = root.section("train")) {
    detail::ObjectReader r(*s, "train");
    auto& t = cfg.train;
    r.read("lr", t.lr);
    r.read("weight_decay", t.weight_decay);
    r.read("batch_size", t.batch_size);
    r.read("epochs", t.epochs);
    r.read("seed", t.seed);
    r.read("ablation", t.ablation);
    r.read("beta1", t.beta1);
    r.read("beta2", t.beta2);
    r.read("adam_eps", t.adam_eps);
    r.read("clip_norm", t.clip_norm);
    r.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  const auto& m = cfg.model;
  nlohmann::json ablation = nlohmann::json::array();
  if (cfg.train.ablation.no_paf) ablation.push_back("no_paf");
  if (cfg.train.ablation.no_mcl) ablation.push_back("no_mcl");
  if (cfg.train.ablation.no_ama) ablation.push_back("no_ama");
  return {
      {"text",
       {{"vocab_size", m.text.vocab_size}, {"d_model", m.text.d_model}, {"n_layers", m.text.n_layers},
        {"n_heads", m.text.n_heads}, {"max_len", m.text.max_len}, {"dropout", m.text.dropout}}},
      {"image",
       {{"image_h", m.image.image_h}, {"image_w", m.image.image_w}, {"channels", m.image.channels},
        {"patch_size", m.image.patch_size}, {"d_model", m.image.d_model}, {"n_layers", m.image.n_layers},
        {"n_heads", m.image.n_heads}, {"dropout", m.image.dropout}}},
      {"paf",
       {{"d_hidden", m.paf.d_hidden}, {"n_heads", m.paf.n_heads}, {"dropout_p", m.paf.dropout_p},
        {"l_max", m.paf.l_max}, {"use_self_bias", m.paf.use_self_bias}}},
      {"mcl",
       {{"tau_gcl", m.mcl.tau_gcl}, {"ipot_beta", m.mcl.ipot.beta}, {"ipot_outer_iters", m.mcl.ipot.outer_iters},
        {"ipot_inner_iters", m.mcl.ipot.inner_iters}, {"gcl_source", detail::source_name(m.mcl.gcl_source)},
        {"wra_source", detail::source_name(m.mcl.wra_source)}, {"use_cls_loss", m.mcl.use_cls_loss}}},
      {"ama",
       {{"alpha", m.ama.alpha}, {"tau", m.ama.tau}, {"decay", m.ama.decay},
        {"priority_mode", m.ama.priority_mode == PriorityMode::Frozen ? "frozen" : "ema"}}},
      {"train",
       {{"lr", cfg.train.lr}, {"weight_decay", cfg.train.weight_decay}, {"batch_size", cfg.train.batch_size},
        {"epochs", cfg.train.epochs}, {"seed", cfg.train.seed}, {"ablation", ablation}, {"beta1", cfg.train.beta1},
        {"beta2", cfg.train.beta2}, {"adam_eps", cfg.train.adam_eps}, {"clip_norm", cfg.train.clip_norm}}},
  };
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace clamp
