#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "clamp/ops.hpp"
#include "clamp/params.hpp"

namespace clamp {

// Attention probability matrices captured for introspection.
struct AttentionProbe {
  std::string label;
  Tensor probs;
};
using ProbeSink = std::vector<AttentionProbe>*;

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out, may be undefined

  static Linear make(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     bool with_bias = true) {
    Linear l;
    l.weight = params.weight(name + ".w", in, out, rng);
    if (with_bias) l.bias = params.constant(name + ".b", {out}, 0.0);
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_rowvec(y, bias) : y;
  }
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  static LayerNormParams make(ParamSet& params, const std::string& name, std::size_t d) {
    return {params.constant(name + ".gamma", {d}, 1.0), params.constant(name + ".beta", {d}, 0.0)};
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

// softmax(q k^T / sqrt(d_k) + bias) v for a single head. `bias`, when
// defined, is added to the Lq x Lk score matrix before the softmax.
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias = {},
                                   Tensor* probs_out = nullptr) {
  if (q.cols() != k.cols()) throw DimensionError("attention: query/key widths differ");
  if (k.rows() != v.rows()) throw DimensionError("attention: key/value lengths differ");
  Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (bias.defined()) {
    if (bias.rows() != q.rows() || bias.cols() != k.rows()) {
      throw DimensionError("attention: bias " + shape_str(bias.shape()) + " does not match scores " +
                           shape_str(scores.shape()));
    }
    scores = add(scores, bias);
  }
  Tensor probs = softmax_rows(scores);
  if (probs_out) *probs_out = probs;
  return matmul(probs, v);
}

// Splits projected q/k/v into `heads` column blocks, attends per head and
// concatenates. The same bias is shared by every head.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                   const Tensor& bias, ProbeSink probes, const std::string& label) {
  const std::size_t width = q.cols();
  if (heads == 0 || width % heads != 0) throw DimensionError("attention: width not divisible by head count");
  if (heads == 1) {
    Tensor probs;
    Tensor out = scaled_dot_attention(q, k, v, bias, probes ? &probs : nullptr);
    if (probes) probes->push_back({label + ".head0", probs});
    return out;
  }
  const std::size_t dk = width / heads;
  std::vector<Tensor> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor probs;
    outs.push_back(scaled_dot_attention(slice(q, 0, q.rows(), h * dk, (h + 1) * dk),
                                        slice(k, 0, k.rows(), h * dk, (h + 1) * dk),
                                        slice(v, 0, v.rows(), h * dk, (h + 1) * dk), bias,
                                        probes ? &probs : nullptr));
    if (probes) probes->push_back({label + ".head" + std::to_string(h), probs});
  }
  return concat_cols(outs);
}

// Post-norm transformer encoder block (self-attention, then a GELU FFN).
class EncoderLayer {
 public:
  EncoderLayer(ParamSet& params, const std::string& name, std::size_t d, std::size_t heads, std::size_t ffn,
               Rng& rng)
      : heads_(heads),
        q_(Linear::make(params, name + ".q", d, d, rng)),
        k_(Linear::make(params, name + ".k", d, d, rng)),
        v_(Linear::make(params, name + ".v", d, d, rng)),
        o_(Linear::make(params, name + ".o", d, d, rng)),
        ln1_(LayerNormParams::make(params, name + ".ln1", d)),
        ff1_(Linear::make(params, name + ".ff1", d, ffn, rng)),
        ff2_(Linear::make(params, name + ".ff2", ffn, d, rng)),
        ln2_(LayerNormParams::make(params, name + ".ln2", d)) {}

  Tensor operator()(const Tensor& x, double dropout_p, bool training, Rng& rng, ProbeSink probes,
                    const std::string& label) const {
    Tensor attn = o_(multi_head_attention(q_(x), k_(x), v_(x), heads_, {}, probes, label));
    Tensor h = ln1_(add(x, dropout(attn, dropout_p, training, rng)));
    Tensor ff = ff2_(gelu(ff1_(h)));
    return ln2_(add(h, dropout(ff, dropout_p, training, rng)));
  }

 private:
  std::size_t heads_;
  Linear q_, k_, v_, o_;
  LayerNormParams ln1_;
  Linear ff1_, ff2_;
  LayerNormParams ln2_;
};

}  // namespace clamp
