#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clamp/ama.hpp"
#include "clamp/attention.hpp"
#include "clamp/data.hpp"
#include "clamp/encoders.hpp"
#include "clamp/mcl.hpp"
#include "clamp/paf.hpp"
#include "clamp/params.hpp"

namespace clamp {

enum class FeatureSource { Encoder, Paf };

struct MclConfig {
  double tau_gcl = 0.07;
  IpotConfig ipot;
  FeatureSource gcl_source = FeatureSource::Encoder;
  FeatureSource wra_source = FeatureSource::Encoder;
  bool use_cls_loss = true;

  void validate() const {
    if (!(tau_gcl > 0.0)) throw ConfigError("mcl: tau_gcl must be positive");
    ipot.validate();
  }
};

struct Ablation {
  bool no_paf = false;
  bool no_mcl = false;
  bool no_ama = false;

  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  TextEncoderConfig text;
  ImageEncoderConfig image;
  PafConfig paf;
  MclConfig mcl;
  AmaConfig ama;

  void validate() const {
    text.validate();
    image.validate();
    paf.validate();
    mcl.validate();
    ama.validate();
    if (text.d_model != image.d_model) throw ConfigError("text and image d_model must agree");
    if (paf.l_max < text.max_len || paf.l_max < image.patch_count() + 1) {
      throw ConfigError("paf.l_max " + std::to_string(paf.l_max) + " must cover text.max_len " +
                        std::to_string(text.max_len) + " and k+1 = " + std::to_string(image.patch_count() + 1));
    }
  }
};

// Rejects examples the configured model cannot consume, naming the first
// offending example.
inline void check_dataset(const ModelConfig& cfg, const std::vector<MultimodalExample>& data, const std::string& source) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const MultimodalExample& ex = data[i];
    const std::string where = source + ": example " + std::to_string(i) + ": ";
    if (ex.tokens.empty()) throw DataError(where + "empty sentence");
    if (ex.tokens.size() > cfg.text.max_len) {
      throw DataError(where + "length " + std::to_string(ex.tokens.size()) + " exceeds text.max_len " +
                      std::to_string(cfg.text.max_len));
    }
    for (std::size_t t : ex.tokens) {
      if (t >= cfg.text.vocab_size) {
        throw DataError(where + "token id " + std::to_string(t) + " outside vocab_size " +
                        std::to_string(cfg.text.vocab_size));
      }
    }
    if (ex.image.h != cfg.image.image_h || ex.image.w != cfg.image.image_w || ex.image.c != cfg.image.channels) {
      throw DataError(where + "image is " + std::to_string(ex.image.h) + "x" + std::to_string(ex.image.w) + "x" +
                      std::to_string(ex.image.c) + ", config expects " + std::to_string(cfg.image.image_h) + "x" +
                      std::to_string(cfg.image.image_w) + "x" + std::to_string(cfg.image.channels));
    }
  }
}

// Runs f, prefixing any numeric failure with the loss term being computed.
template <class F>
auto named_term(const char* term, F&& f) {
  try {
    return f();
  } catch (const NumericError& e) {
    throw NumericError(std::string("loss term ") + term + ": " + e.what());
  }
}

// Per-example outputs. Loss tensors are undefined when labels were not used.
struct ExampleOutput {
  Tensor l_crf;
  Tensor l_cls;
  Tensor l_wra;
  Tensor text_global;   // 1 x width, row 0 of the selected text features
  Tensor image_global;  // 1 x width, CLS row of the selected image features
  std::vector<BioLabel> decoded;
};

struct ForwardTrace {
  std::vector<AttentionProbe> attention;
  std::optional<TransportPlan> transport;
  Tensor cost;
};

// Full network: encoders, fusion, tagging head and AMA state, with every
// learnable tensor registered in one ParamSet.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed)
      : config_((cfg.validate(), cfg)),
        init_rng_(seed),
        text_(cfg.text, params_, init_rng_),
        image_(cfg.image, params_, init_rng_),
        paf_(PafParams::make(cfg.paf, cfg.text.d_model, params_, init_rng_)),
        tagger_(TaggerParams::make(cfg.paf.d_hidden, cfg.text.d_model, params_, init_rng_)),
        ama_(AmaState::make(cfg.ama, params_)) {}

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ExampleOutput forward(const MultimodalExample& ex, const Ablation& ablation, bool training, Rng& rng,
                        bool with_loss, ForwardTrace* trace = nullptr) const {
    if (ex.labels.size() != ex.tokens.size()) throw DataError("example has mismatched tokens and labels");
    ProbeSink probes = trace ? &trace->attention : nullptr;
    const Tensor text_bar = text_(ex.tokens, training, rng, probes);
    const Tensor image_bar = image_(ex.image, training, rng, probes);

    PafOutput fused;
    if (ablation.no_paf) {
      const ProjectedModalities projected = project_modalities(text_bar, image_bar, paf_);
      fused = {projected.text, projected.image};
    } else {
      fused = paf_forward(text_bar, image_bar, paf_, config_.paf, training, rng, probes);
    }

    ExampleOutput out;
    TaggerOptions options;
    options.text_crf = !ablation.no_mcl;
    const std::span<const BioLabel> labels = with_loss ? std::span<const BioLabel>(ex.labels) : std::span<const BioLabel>();
    TaggerOutput tagged =
        named_term("crf/cls", [&] { return tagger_forward(fused.text, text_bar, labels, tagger_, options); });
    out.decoded = std::move(tagged.decoded);
    out.l_crf = tagged.l_crf;
    out.l_cls = tagged.l_cls;

    const bool gcl_paf = config_.mcl.gcl_source == FeatureSource::Paf;
    out.text_global = slice_rows(gcl_paf ? fused.text : text_bar, 0, 1);
    out.image_global = slice_rows(gcl_paf ? fused.image : image_bar, 0, 1);

    if ((with_loss && !ablation.no_mcl) || trace) {
      const bool wra_paf = config_.mcl.wra_source == FeatureSource::Paf;
      const Tensor& tokens = wra_paf ? fused.text : text_bar;
      const Tensor& img = wra_paf ? fused.image : image_bar;
      WraResult wra =
          named_term("wra", [&] { return wra_loss(tokens, slice_rows(img, 1, img.rows()), config_.mcl.ipot); });
      if (with_loss && !ablation.no_mcl) out.l_wra = wra.loss;
      if (trace) {
        trace->transport = std::move(wra.transport);
        trace->cost = wra.cost.detach();
      }
    }
    return out;
  }

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  AmaState& ama() { return ama_; }
  const AmaState& ama() const { return ama_; }
  const PafParams& paf() const { return paf_; }
  const TaggerParams& tagger() const { return tagger_; }

 private:
  ModelConfig config_;
  ParamSet params_;
  Rng init_rng_;
  TextEncoder text_;
  ImageEncoder image_;
  PafParams paf_;
  TaggerParams tagger_;
  AmaState ama_;
};

}  // namespace clamp
