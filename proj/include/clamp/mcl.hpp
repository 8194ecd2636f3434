#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clamp/attention.hpp"
#include "clamp/ops.hpp"
#include "clamp/params.hpp"

// Multi-task contrastive learning: global InfoNCE contrast, optimal-transport
// word-region alignment, and the dual-CRF tagging head.

namespace clamp {

// ---------------------------------------------------------------------------
// Labels

enum class BioLabel : std::uint8_t { BPos = 0, IPos = 1, BNeu = 2, INeu = 3, BNeg = 4, INeg = 5, O = 6 };
inline constexpr std::size_t kNumLabels = 7;

enum class Polarity : std::uint8_t { Pos = 0, Neu = 1, Neg = 2 };

inline constexpr std::array<std::string_view, kNumLabels> kLabelNames = {"B-POS", "I-POS", "B-NEU", "I-NEU",
                                                                         "B-NEG", "I-NEG", "O"};

inline std::string_view label_name(BioLabel l) { return kLabelNames[static_cast<std::size_t>(l)]; }

inline std::optional<BioLabel> parse_label(std::string_view s) {
  for (std::size_t i = 0; i < kNumLabels; ++i)
    if (kLabelNames[i] == s) return static_cast<BioLabel>(i);
  return std::nullopt;
}

inline bool is_begin(BioLabel l) { return l != BioLabel::O && static_cast<int>(l) % 2 == 0; }
inline bool is_inside(BioLabel l) { return l != BioLabel::O && static_cast<int>(l) % 2 == 1; }
inline Polarity polarity_of(BioLabel l) { return static_cast<Polarity>(static_cast<int>(l) / 2); }
inline BioLabel begin_label(Polarity p) { return static_cast<BioLabel>(2 * static_cast<int>(p)); }
inline BioLabel inside_label(Polarity p) { return static_cast<BioLabel>(2 * static_cast<int>(p) + 1); }

inline std::string_view polarity_name(Polarity p) {
  static constexpr std::array<std::string_view, 3> names = {"POS", "NEU", "NEG"};
  return names[static_cast<std::size_t>(p)];
}

// ---------------------------------------------------------------------------
// Global contrast

// Symmetric InfoNCE over cosine similarities of matched rows.
inline Tensor gcl_loss(const Tensor& text_global, const Tensor& image_global, double tau) {
  if (!(tau > 0.0)) throw ParameterError("gcl_loss: temperature must be positive");
  if (text_global.shape() != image_global.shape() || text_global.rank() != 2) {
    throw DimensionError("gcl_loss: text and image globals must be matching N x d matrices");
  }
  const std::size_t n = text_global.rows();
  const Tensor logits = scale(matmul_nt(l2_normalize_rows(text_global), l2_normalize_rows(image_global)), 1.0 / tau);
  const Tensor text_to_image = diagonal(log_softmax_rows(logits));
  const Tensor image_to_text = diagonal(log_softmax_rows(transpose(logits)));
  return scale(sum(add(text_to_image, image_to_text)), -1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Word-region alignment

// C_ij = 1 - cos(x_i, p_j). Zero rows have cosine 0.
inline Tensor cost_matrix(const Tensor& tokens, const Tensor& patches) {
  if (tokens.cols() != patches.cols()) throw DimensionError("cost_matrix: feature widths differ");
  return add_scalar(scale(matmul_nt(l2_normalize_rows(tokens), l2_normalize_rows(patches)), -1.0), 1.0);
}

struct IpotConfig {
  double beta = 0.5;
  std::size_t outer_iters = 50;
  std::size_t inner_iters = 1;

  void validate() const {
    if (!(beta > 0.0)) throw ConfigError("ipot: beta must be positive");
    if (outer_iters == 0 || inner_iters == 0) throw ConfigError("ipot: iteration counts must be positive");
  }
};

struct TransportPlan {
  Tensor plan;                        // n x k, rows sum to 1/n, columns to 1/k
  std::vector<std::size_t> matching;  // row argmax, lowest index on ties
  double objective = 0.0;             // <T, C>
};

inline std::vector<std::size_t> row_argmax(std::span<const double> m, std::size_t rows, std::size_t cols) {
  std::vector<std::size_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j)
      if (m[i * cols + j] > m[i * cols + best]) best = j;
    out[i] = best;
  }
  return out;
}

// Proximal-point optimal transport with uniform marginals: each outer step
// runs Sinkhorn scaling on exp(-C / beta) * T_prev.
inline TransportPlan ipot(const Tensor& cost, const IpotConfig& cfg = {}) {
  if (!(cfg.beta > 0.0)) throw ParameterError("ipot: beta must be positive");
  const std::size_t n = cost.rows(), k = cost.cols();
  const auto c = cost.values();
  for (double v : c)
    if (!std::isfinite(v)) throw DataError("ipot: cost matrix has non-finite entries");
  const double mu = 1.0 / static_cast<double>(n), nu = 1.0 / static_cast<double>(k);
  std::vector<double> kernel(n * k), plan(n * k, 1.0 / static_cast<double>(n * k)), q(n * k);
  for (std::size_t i = 0; i < n * k; ++i) kernel[i] = std::exp(-c[i] / cfg.beta);
  std::vector<double> a(n, 1.0), b(k, 1.0);
  for (std::size_t outer = 0; outer < cfg.outer_iters; ++outer) {
    for (std::size_t i = 0; i < n * k; ++i) q[i] = kernel[i] * plan[i];
    for (std::size_t inner = 0; inner < cfg.inner_iters; ++inner) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += q[i * k + j] * b[j];
        a[i] = mu / s;
      }
      for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += q[i * k + j] * a[i];
        b[j] = nu / s;
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) plan[i * k + j] = a[i] * q[i * k + j] * b[j];
  }
  TransportPlan out;
  out.matching = row_argmax(plan, n, k);
  for (std::size_t i = 0; i < n * k; ++i) out.objective += plan[i] * c[i];
  out.plan = Tensor({n, k}, std::move(plan));
  return out;
}

struct WraResult {
  Tensor loss;  // sum_i C[i, matching[i]]
  Tensor cost;
  TransportPlan transport;
};

// The plan and matching are treated as constants; gradient flows through C.
inline WraResult wra_loss(const Tensor& tokens, const Tensor& patches, const IpotConfig& cfg = {}) {
  WraResult r;
  r.cost = cost_matrix(tokens, patches);
  r.transport = ipot(r.cost, cfg);
  r.loss = sum(pick_per_row(r.cost, r.transport.matching));
  return r;
}

// ---------------------------------------------------------------------------
// Linear-chain CRF

struct CrfParams {
  Tensor transitions;  // 7 x 7, [from, to]
  Tensor start;        // 7
  Tensor end;          // 7

  static CrfParams make(ParamSet& params, const std::string& name) {
    return {params.constant(name + ".transitions", {kNumLabels, kNumLabels}, 0.0),
            params.constant(name + ".start", {kNumLabels}, 0.0), params.constant(name + ".end", {kNumLabels}, 0.0)};
  }
};

namespace detail {

inline double log_sum_exp(const double* v, std::size_t n) {
  const double mx = *std::max_element(v, v + n);
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

inline void check_crf_shapes(const Tensor& emissions, const CrfParams& crf, const char* op) {
  if (emissions.rank() != 2 || emissions.cols() != kNumLabels) {
    throw DimensionError(std::string(op) + ": emissions must be n x 7, got " + shape_str(emissions.shape()));
  }
  if (crf.transitions.size() != kNumLabels * kNumLabels || crf.start.size() != kNumLabels ||
      crf.end.size() != kNumLabels) {
    throw DimensionError(std::string(op) + ": malformed CRF parameters");
  }
}

}  // namespace detail

// Score of one label path: start + emissions + transitions + end.
inline double crf_path_score(std::span<const double> emissions, std::span<const double> transitions,
                             std::span<const double> start, std::span<const double> end,
                             std::span<const BioLabel> labels) {
  const std::size_t n = labels.size();
  auto y = [&](std::size_t t) { return static_cast<std::size_t>(labels[t]); };
  double s = start[y(0)] + end[y(n - 1)];
  for (std::size_t t = 0; t < n; ++t) s += emissions[t * kNumLabels + y(t)];
  for (std::size_t t = 1; t < n; ++t) s += transitions[y(t - 1) * kNumLabels + y(t)];
  return s;
}

// logZ - score(y), logZ by the log-space forward algorithm. The backward rule
// uses forward-backward marginals.
inline Tensor crf_nll(const Tensor& emissions, std::span<const BioLabel> labels, const CrfParams& crf) {
  detail::check_crf_shapes(emissions, crf, "crf_nll");
  const std::size_t n = emissions.rows();
  if (n == 0 || labels.empty()) throw LengthError("crf_nll: empty sequence");
  if (labels.size() != n) throw DataError("crf_nll: label count does not match emission rows");
  constexpr std::size_t L = kNumLabels;
  const auto e = emissions.values();
  const auto tr = crf.transitions.values();
  const auto st = crf.start.values();
  const auto en = crf.end.values();

  auto alpha = std::make_shared<std::vector<double>>(n * L);
  std::array<double, L> tmp{};
  for (std::size_t y = 0; y < L; ++y) (*alpha)[y] = st[y] + e[y];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      for (std::size_t a = 0; a < L; ++a) tmp[a] = (*alpha)[(t - 1) * L + a] + tr[a * L + y];
      (*alpha)[t * L + y] = detail::log_sum_exp(tmp.data(), L) + e[t * L + y];
    }
  }
  for (std::size_t y = 0; y < L; ++y) tmp[y] = (*alpha)[(n - 1) * L + y] + en[y];
  const double log_z = detail::log_sum_exp(tmp.data(), L);
  const double gold = crf_path_score(e, tr, st, en, labels);
  std::vector<std::size_t> y_gold(n);
  for (std::size_t t = 0; t < n; ++t) y_gold[t] = static_cast<std::size_t>(labels[t]);

  return detail::make_result(
      "crf_nll", {1}, {log_z - gold}, {&emissions, &crf.transitions, &crf.start, &crf.end},
      [alpha, log_z, y_gold = std::move(y_gold), n](detail::Node& self) {
        const double g = self.grad[0];
        const auto& e = self.parent(0).data;
        const auto& tr = self.parent(1).data;
        const auto& en = self.parent(3).data;
        std::vector<double> beta(n * L);
        std::array<double, L> tmp{};
        for (std::size_t y = 0; y < L; ++y) beta[(n - 1) * L + y] = en[y];
        for (std::size_t t = n - 1; t-- > 0;) {
          for (std::size_t a = 0; a < L; ++a) {
            for (std::size_t y = 0; y < L; ++y) tmp[y] = tr[a * L + y] + e[(t + 1) * L + y] + beta[(t + 1) * L + y];
            beta[t * L + a] = detail::log_sum_exp(tmp.data(), L);
          }
        }
        auto marginal = [&](std::size_t t, std::size_t y) {
          return std::exp((*alpha)[t * L + y] + beta[t * L + y] - log_z);
        };
        if (double* ge = detail::parent_grad(self, 0)) {
          for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t y = 0; y < L; ++y) ge[t * L + y] += g * marginal(t, y);
            ge[t * L + y_gold[t]] -= g;
          }
        }
        if (double* gt = detail::parent_grad(self, 1)) {
          for (std::size_t t = 1; t < n; ++t) {
            for (std::size_t a = 0; a < L; ++a)
              for (std::size_t y = 0; y < L; ++y)
                gt[a * L + y] += g * std::exp((*alpha)[(t - 1) * L + a] + tr[a * L + y] + e[t * L + y] +
                                              beta[t * L + y] - log_z);
            gt[y_gold[t - 1] * L + y_gold[t]] -= g;
          }
        }
        if (double* gs = detail::parent_grad(self, 2)) {
          for (std::size_t y = 0; y < L; ++y) gs[y] += g * marginal(0, y);
          gs[y_gold[0]] -= g;
        }
        if (double* gn = detail::parent_grad(self, 3)) {
          for (std::size_t y = 0; y < L; ++y) gn[y] += g * marginal(n - 1, y);
          gn[y_gold[n - 1]] -= g;
        }
      });
}

// Highest-scoring path; ties resolve to the lowest label index.
inline std::vector<BioLabel> crf_viterbi(const Tensor& emissions, const CrfParams& crf) {
  detail::check_crf_shapes(emissions, crf, "crf_viterbi");
  const std::size_t n = emissions.rows();
  constexpr std::size_t L = kNumLabels;
  const auto e = emissions.values();
  const auto tr = crf.transitions.values();
  const auto st = crf.start.values();
  const auto en = crf.end.values();
  std::vector<double> delta(n * L);
  std::vector<std::size_t> back(n * L, 0);
  for (std::size_t y = 0; y < L; ++y) delta[y] = st[y] + e[y];
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t y = 0; y < L; ++y) {
      std::size_t best = 0;
      double best_score = delta[(t - 1) * L] + tr[y];
      for (std::size_t a = 1; a < L; ++a) {
        const double s = delta[(t - 1) * L + a] + tr[a * L + y];
        if (s > best_score) {
          best_score = s;
          best = a;
        }
      }
      back[t * L + y] = best;
      delta[t * L + y] = best_score + e[t * L + y];
    }
  }
  std::size_t last = 0;
  for (std::size_t y = 1; y < L; ++y)
    if (delta[(n - 1) * L + y] + en[y] > delta[(n - 1) * L + last] + en[last]) last = y;
  std::vector<BioLabel> path(n);
  for (std::size_t t = n; t-- > 0;) {
    path[t] = static_cast<BioLabel>(last);
    if (t > 0) last = back[t * L + last];
  }
  return path;
}

// ---------------------------------------------------------------------------
// Tagging head

struct TaggerParams {
  Linear fused_classifier;  // dh -> 7
  Linear text_classifier;   // d -> 7
  Tensor residual;          // d x dh, maps text features into the fused space
  CrfParams crf_fused;
  CrfParams crf_text;

  static TaggerParams make(std::size_t d_hidden, std::size_t d_model, ParamSet& params, Rng& rng) {
    TaggerParams t;
    t.fused_classifier = Linear::make(params, "tagger.fused_classifier", d_hidden, kNumLabels, rng);
    t.text_classifier = Linear::make(params, "tagger.text_classifier", d_model, kNumLabels, rng);
    t.residual = params.weight("tagger.residual", d_model, d_hidden, rng);
    t.crf_fused = CrfParams::make(params, "tagger.crf0");
    t.crf_text = CrfParams::make(params, "tagger.crf1");
    return t;
  }
};

struct TaggerOutput {
  Tensor l_crf;  // undefined when no labels were given
  Tensor l_cls;
  std::vector<BioLabel> decoded;
  Tensor fused_emissions;
};

struct TaggerOptions {
  bool text_crf = true;  // include the text-only CRF term
  bool decode = true;
};

// Mean token-level softmax cross-entropy.
inline Tensor token_cross_entropy(const Tensor& logits, std::span<const BioLabel> labels) {
  std::vector<std::size_t> cols(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) cols[i] = static_cast<std::size_t>(labels[i]);
  return scale(mean(pick_per_row(log_softmax_rows(logits), cols)), -1.0);
}

// Fused features mixed with a residual map of the text features feed CRF 0;
// text features alone feed CRF 1. Pass empty labels to decode only.
inline TaggerOutput tagger_forward(const Tensor& h_paf, const Tensor& h_text, std::span<const BioLabel> labels,
                                   const TaggerParams& params, const TaggerOptions& options = {}) {
  if (h_paf.rows() != h_text.rows()) throw DataError("tagger: fused and text features have different lengths");
  if (!labels.empty() && labels.size() != h_paf.rows()) throw DataError("tagger: label count does not match tokens");
  TaggerOutput out;
  const Tensor mixed = add(h_paf, matmul(h_text, params.residual));
  out.fused_emissions = params.fused_classifier(mixed);
  if (!labels.empty()) {
    out.l_crf = crf_nll(out.fused_emissions, labels, params.crf_fused);
    if (options.text_crf) out.l_crf = add(out.l_crf, crf_nll(params.text_classifier(h_text), labels, params.crf_text));
    out.l_cls = token_cross_entropy(out.fused_emissions, labels);
  }
  if (options.decode) out.decoded = crf_viterbi(out.fused_emissions, params.crf_fused);
  return out;
}

}  // namespace clamp
