#pragma once

// Independent reference computations used by the tests. Everything here is
// written with plain loops over std::vector and never calls the autodiff ops
// it is compared against.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "clamp/mcl.hpp"
#include "clamp/paf.hpp"
#include "clamp/rng.hpp"
#include "clamp/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const clamp::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// Attention weights: exp(q_i.k_j / sqrt(d) + bias_ij) normalised over j.
inline Mat attention_probs(const Mat& q, const Mat& k, const Mat* bias = nullptr) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat p(q.size(), std::vector<double>(k.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
      p[i][j] = dot * s + (bias ? (*bias)[i][j] : 0.0);
      mx = std::max(mx, p[i][j]);
    }
    double z = 0.0;
    for (double& v : p[i]) z += (v = std::exp(v - mx));
    for (double& v : p[i]) v /= z;
  }
  return p;
}

inline Mat attend(const Mat& q, const Mat& k, const Mat& v, const Mat* bias = nullptr) {
  return matmul(attention_probs(q, k, bias), v);
}

inline Mat columns(const Mat& m, std::size_t c0, std::size_t c1) {
  Mat out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i].assign(m[i].begin() + c0, m[i].begin() + c1);
  return out;
}

inline Mat add_bias(Mat m, std::span<const double> b) {
  for (auto& row : m)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return m;
}

inline Mat layer_norm(Mat m, std::span<const double> gamma, std::span<const double> beta, double eps = 1e-5) {
  for (auto& row : m) {
    const double n = static_cast<double>(row.size());
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= n;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = gamma[j] * (row[j] - mu) / std::sqrt(var + eps) + beta[j];
  }
  return m;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// ---------------------------------------------------------------------------
// Linear-chain CRF by enumeration of all 7^n label paths.

struct CrfEnumeration {
  double log_partition = 0.0;
  std::vector<clamp::BioLabel> best;
  double best_score = -std::numeric_limits<double>::infinity();
};

inline double path_score(const Mat& em, const Mat& trans, std::span<const double> start, std::span<const double> end,
                         const std::vector<std::size_t>& y) {
  double s = start[y[0]] + em[0][y[0]];
  for (std::size_t t = 1; t < y.size(); ++t) s += trans[y[t - 1]][y[t]] + em[t][y[t]];
  return s + end[y.back()];
}

inline CrfEnumeration enumerate_crf(const Mat& em, const Mat& trans, std::span<const double> start,
                                    std::span<const double> end) {
  const std::size_t n = em.size(), L = clamp::kNumLabels;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= L;
  std::vector<double> scores;
  CrfEnumeration out;
  std::vector<std::size_t> y(n);
  for (std::size_t code = 0; code < total; ++code) {
    // most significant position first, so codes run in lexicographic order
    std::size_t c = code;
    for (std::size_t t = n; t-- > 0;) {
      y[t] = c % L;
      c /= L;
    }
    const double s = path_score(em, trans, start, end, y);
    scores.push_back(s);
    if (s > out.best_score) {
      out.best_score = s;
      out.best.clear();
      for (std::size_t v : y) out.best.push_back(static_cast<clamp::BioLabel>(v));
    }
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  out.log_partition = mx + std::log(z);
  return out;
}

// ---------------------------------------------------------------------------
// Exact assignment cost: min over permutations of the mean matched cost.

inline double permutation_optimum(const Mat& cost) {
  std::vector<std::size_t> perm(cost.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += cost[i][perm[i]];
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(cost.size());
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Symmetric InfoNCE on cosine similarities, summed over both directions.
inline double info_nce(const Mat& text, const Mat& image, double tau) {
  const std::size_t n = text.size();
  double total = 0.0;
  for (int dir = 0; dir < 2; ++dir) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      for (std::size_t j = 0; j < n; ++j)
        logits[j] = (dir == 0 ? cosine(text[i], image[j]) : cosine(image[i], text[j])) / tau;
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      total += (mx + std::log(z) - logits[i]) / static_cast<double>(n);
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Fusion stages in eval mode (no dropout), written out with loops.

inline Mat vec_rows(std::span<const double> v, std::size_t rows, std::size_t cols) {
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r][c] = v[r * cols + c];
  return m;
}

inline Mat weight(const clamp::Tensor& w) { return to_mat(w); }

inline Mat attention_stage(const Mat& text, const Mat& image, const Mat& anchor,
                           const clamp::AttentionStageParams& p) {
  const Mat h = attend(matmul(text, weight(p.self_q)), matmul(text, weight(p.self_k)), matmul(text, weight(p.self_v)));
  const Mat cross =
      attend(matmul(h, weight(p.cross_q)), matmul(image, weight(p.cross_k)), matmul(image, weight(p.cross_v)));
  Mat ffn = add_bias(matmul(cross, weight(p.ffn1.weight)), p.ffn1.bias.values());
  for (auto& row : ffn)
    for (double& v : row) v = gelu(v);
  ffn = add_bias(matmul(ffn, weight(p.ffn2.weight)), p.ffn2.bias.values());
  Mat sum = anchor;
  for (std::size_t i = 0; i < sum.size(); ++i)
    for (std::size_t j = 0; j < sum[i].size(); ++j) sum[i][j] += ffn[i][j];
  return layer_norm(sum, p.norm.gamma.values(), p.norm.beta.values());
}

struct EnhancedOracle {
  Mat fresh, pre_norm, out;
};

inline EnhancedOracle enhanced_cross(const Mat& text, const Mat& image, const clamp::EnhancedCrossParams& p,
                                     const clamp::PafConfig& cfg) {
  const std::size_t lq = text.size(), lk = image.size(), d = text[0].size(), dk = d / cfg.n_heads;
  Mat bias(lq, std::vector<double>(lk));
  const std::size_t lmax = p.cross_bias.cols();
  for (std::size_t i = 0; i < lq; ++i)
    for (std::size_t j = 0; j < lk; ++j)
      bias[i][j] = p.cross_bias[i * lmax + j] + (cfg.use_self_bias ? p.self_bias[i * lmax + j] : 0.0);
  const Mat q = matmul(text, weight(p.wq)), k = matmul(image, weight(p.wk)), v = matmul(image, weight(p.wv));
  Mat heads(lq, std::vector<double>(d));
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Mat o = attend(columns(q, h * dk, (h + 1) * dk), columns(k, h * dk, (h + 1) * dk),
                         columns(v, h * dk, (h + 1) * dk), &bias);
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t c = 0; c < dk; ++c) heads[i][h * dk + c] = o[i][c];
  }
  EnhancedOracle r;
  r.fresh = matmul(heads, weight(p.wo));
  r.pre_norm = r.fresh;
  for (std::size_t i = 0; i < lq; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double g = 1.0 / (1.0 + std::exp(-p.gate[j]));
      r.pre_norm[i][j] = g * r.fresh[i][j] + (1.0 - g) * text[i][j];
    }
  r.out = layer_norm(r.pre_norm, p.norm.gamma.values(), p.norm.beta.values());
  return r;
}

inline double max_abs_diff(const Mat& a, const clamp::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b.at(i, j)));
  return worst;
}

}  // namespace oracle
