#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "clamp/attention.hpp"
#include "clamp/ops.hpp"
#include "clamp/params.hpp"

// Progressive attention fusion: text features are refined by two
// self/cross-attention stages and one gated, relative-position-biased
// multi-head cross-attention stage. Visual features are projected once and
// passed through unchanged.

namespace clamp {

struct PafConfig {
  std::size_t d_hidden = 64;
  std::size_t n_heads = 4;  // stage 3 only; stages 1-2 are single-head
  double dropout_p = 0.1;
  std::size_t l_max = 24;
  bool use_self_bias = true;  // add table P on top of P^{t,v} in stage-3 scores

  void validate() const {
    if (d_hidden == 0 || n_heads == 0 || l_max == 0) throw ConfigError("paf: sizes must be positive");
    if (d_hidden % n_heads != 0) throw ConfigError("paf: d_hidden must be divisible by n_heads");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("paf: dropout_p must lie in [0, 1)");
  }
};

struct AttentionStageParams {
  Tensor self_q, self_k, self_v;  // text self-attention
  Tensor cross_q, cross_k, cross_v;
  Linear ffn1, ffn2;
  LayerNormParams norm;

  static AttentionStageParams make(ParamSet& params, const std::string& name, std::size_t dh, Rng& rng) {
    AttentionStageParams s;
    s.self_q = params.weight(name + ".self_q", dh, dh, rng);
    s.self_k = params.weight(name + ".self_k", dh, dh, rng);
    s.self_v = params.weight(name + ".self_v", dh, dh, rng);
    s.cross_q = params.weight(name + ".cross_q", dh, dh, rng);
    s.cross_k = params.weight(name + ".cross_k", dh, dh, rng);
    s.cross_v = params.weight(name + ".cross_v", dh, dh, rng);
    s.ffn1 = Linear::make(params, name + ".ffn1", dh, dh, rng);
    s.ffn2 = Linear::make(params, name + ".ffn2", dh, dh, rng);
    s.norm = LayerNormParams::make(params, name + ".norm", dh);
    return s;
  }
};

struct EnhancedCrossParams {
  Tensor wq, wk, wv, wo;
  Tensor gate;        // w_g, length dh; g = sigmoid(w_g)
  Tensor self_bias;   // P, l_max x l_max
  Tensor cross_bias;  // P^{t,v}, l_max x l_max
  LayerNormParams norm;

  static EnhancedCrossParams make(ParamSet& params, const std::string& name, std::size_t dh, std::size_t l_max,
                                  Rng& rng) {
    EnhancedCrossParams e;
    e.wq = params.weight(name + ".q", dh, dh, rng);
    e.wk = params.weight(name + ".k", dh, dh, rng);
    e.wv = params.weight(name + ".v", dh, dh, rng);
    e.wo = params.weight(name + ".o", dh, dh, rng);
    e.gate = params.constant(name + ".gate", {dh}, 0.0);
    e.self_bias = params.constant(name + ".self_bias", {l_max, l_max}, 0.0);
    e.cross_bias = params.constant(name + ".cross_bias", {l_max, l_max}, 0.0);
    e.norm = LayerNormParams::make(params, name + ".norm", dh);
    return e;
  }
};

struct PafParams {
  Linear text_projection;
  Linear image_projection;
  std::array<AttentionStageParams, 2> stages;
  EnhancedCrossParams enhanced;

  static PafParams make(const PafConfig& cfg, std::size_t d_model, ParamSet& params, Rng& rng) {
    cfg.validate();
    PafParams p;
    p.text_projection = Linear::make(params, "paf.text_projection", d_model, cfg.d_hidden, rng);
    p.image_projection = Linear::make(params, "paf.image_projection", d_model, cfg.d_hidden, rng);
    p.stages[0] = AttentionStageParams::make(params, "paf.stage1", cfg.d_hidden, rng);
    p.stages[1] = AttentionStageParams::make(params, "paf.stage2", cfg.d_hidden, rng);
    p.enhanced = EnhancedCrossParams::make(params, "paf.stage3", cfg.d_hidden, cfg.l_max, rng);
    return p;
  }
};

struct ProjectedModalities {
  Tensor text;   // n x dh
  Tensor image;  // (k + 1) x dh
};

inline ProjectedModalities project_modalities(const Tensor& text, const Tensor& image, const PafParams& params) {
  const std::size_t d = params.text_projection.weight.rows();
  if (text.cols() != d || image.cols() != params.image_projection.weight.rows()) {
    throw DimensionError("project_modalities: feature widths " + std::to_string(text.cols()) + "/" +
                         std::to_string(image.cols()) + " do not match projection input " + std::to_string(d));
  }
  return {params.text_projection(text), params.image_projection(image)};
}

// Top-left rows x cols block of a relative bias table.
inline Tensor relative_bias_slice(const Tensor& table, std::size_t rows, std::size_t cols) {
  if (rows > table.rows() || cols > table.cols()) {
    throw LengthError("relative bias: " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " scores exceed the " + shape_str(table.shape()) + " table");
  }
  return slice(table, 0, rows, 0, cols);
}

// g * fresh + (1 - g) * residual, with g broadcast across rows.
inline Tensor gated_residual(const Tensor& fresh, const Tensor& residual, const Tensor& g) {
  return add(mul_rowvec(fresh, g), mul_rowvec(residual, add_scalar(scale(g, -1.0), 1.0)));
}

// Self-attention over text, cross-attention with text as query and image as
// key/value, GELU FFN, then LayerNorm(anchor + FFN output).
inline Tensor attention_stage(const Tensor& text_in, const Tensor& image_in, const Tensor& anchor,
                              const AttentionStageParams& p, double dropout_p, bool training, Rng& rng,
                              ProbeSink probes = nullptr, const std::string& label = "stage") {
  if (text_in.cols() != image_in.cols() || anchor.shape() != text_in.shape()) {
    throw DimensionError("attention_stage: inconsistent hidden widths");
  }
  Tensor self_probs, cross_probs;
  Tensor h = scaled_dot_attention(matmul(text_in, p.self_q), matmul(text_in, p.self_k), matmul(text_in, p.self_v),
                                  {}, probes ? &self_probs : nullptr);
  h = dropout(h, dropout_p, training, rng);
  Tensor cross = scaled_dot_attention(matmul(h, p.cross_q), matmul(image_in, p.cross_k),
                                      matmul(image_in, p.cross_v), {}, probes ? &cross_probs : nullptr);
  cross = dropout(cross, dropout_p, training, rng);
  Tensor ffn = dropout(p.ffn2(gelu(p.ffn1(cross))), dropout_p, training, rng);
  if (probes) {
    probes->push_back({label + ".self", self_probs});
    probes->push_back({label + ".cross", cross_probs});
  }
  return p.norm(add(anchor, ffn));
}

// Intermediate values of the gated stage, for inspection and tests.
struct EnhancedCrossTrace {
  Tensor fresh;     // Concat(O_h) W_o (after dropout)
  Tensor pre_norm;  // gated mix before LayerNorm
};

inline Tensor enhanced_cross_attention(const Tensor& text, const Tensor& image, const EnhancedCrossParams& p,
                                       const PafConfig& cfg, bool training, Rng& rng, ProbeSink probes = nullptr,
                                       EnhancedCrossTrace* trace = nullptr) {
  if (text.cols() != image.cols()) throw DimensionError("enhanced_cross_attention: inconsistent hidden widths");
  const std::size_t lq = text.rows(), lk = image.rows();
  Tensor bias = relative_bias_slice(p.cross_bias, lq, lk);
  if (cfg.use_self_bias) bias = add(bias, relative_bias_slice(p.self_bias, lq, lk));
  Tensor heads = multi_head_attention(matmul(text, p.wq), matmul(image, p.wk), matmul(image, p.wv), cfg.n_heads,
                                      bias, probes, "stage3");
  Tensor fresh = dropout(matmul(heads, p.wo), cfg.dropout_p, training, rng);
  Tensor mixed = gated_residual(fresh, text, sigmoid(p.gate));
  if (trace) *trace = {fresh, mixed};
  return p.norm(mixed);
}

struct PafOutput {
  Tensor text;   // h_PAF, n x dh
  Tensor image;  // projected visual features, (k + 1) x dh
};

inline PafOutput paf_forward(const Tensor& text, const Tensor& image, const PafParams& params, const PafConfig& cfg,
                             bool training, Rng& rng, ProbeSink probes = nullptr) {
  if (text.rows() > cfg.l_max || image.rows() > cfg.l_max) {
    throw LengthError("paf: sequence lengths " + std::to_string(text.rows()) + "/" + std::to_string(image.rows()) +
                      " exceed l_max " + std::to_string(cfg.l_max));
  }
  const ProjectedModalities projected = project_modalities(text, image, params);
  Tensor h = projected.text;
  for (std::size_t s = 0; s < params.stages.size(); ++s) {
    h = attention_stage(h, projected.image, projected.text, params.stages[s], cfg.dropout_p, training, rng, probes,
                        "stage" + std::to_string(s + 1));
  }
  return {enhanced_cross_attention(h, projected.image, params.enhanced, cfg, training, rng, probes),
          projected.image};
}

}  // namespace clamp
