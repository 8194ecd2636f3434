#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "clamp/errors.hpp"
#include "clamp/rng.hpp"
#include "clamp/tensor.hpp"

// Differentiable primitives. Every op returns a fresh tensor; gradient rules
// accumulate into the parents' buffers.

namespace clamp {

namespace kernel {

// out[m x q] += a[m x p] * b[p x q]
inline void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t p,
                    std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double s = a[i * p + k];
      if (s == 0.0) continue;
      const double* brow = b + k * q;
      for (std::size_t j = 0; j < q; ++j) row[j] += s * brow[j];
    }
  }
}

// out[m x q] += a[m x p] * b[q x p]^T
inline void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t p,
                    std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * p;
    for (std::size_t j = 0; j < q; ++j) {
      const double* brow = b + j * p;
      double acc = 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
      out[i * q + j] += acc;
    }
  }
}

// out[p x q] += a[m x p]^T * b[m x q]
inline void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t p,
                    std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double s = a[i * p + k];
      if (s == 0.0) continue;
      double* row = out + k * q;
      for (std::size_t j = 0; j < q; ++j) row[j] += s * brow[j];
    }
  }
}

}  // namespace kernel

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <class Forward, class Derivative>
Tensor unary(const char* op, const Tensor& x, Forward f, Derivative df) {
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, [df](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xs = self.parent(0).data;
    for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += self.grad[i] * df(xs[i], self.data[i]);
  });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != p) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * q, 0.0);
  kernel::gemm_nn(a.values().data(), b.values().data(), out.data(), m, p, q);
  return detail::make_result("matmul", {m, q}, std::move(out), {&a, &b}, [m, p, q](detail::Node& self) {
    const double* g = self.grad.data();
    if (double* ga = detail::parent_grad(self, 0)) kernel::gemm_nt(g, self.parent(1).data.data(), ga, m, q, p);
    if (double* gb = detail::parent_grad(self, 1)) kernel::gemm_tn(self.parent(0).data.data(), g, gb, m, p, q);
  });
}

// a * b^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), p = a.cols(), q = b.rows();
  if (b.cols() != p) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * q, 0.0);
  kernel::gemm_nt(a.values().data(), b.values().data(), out.data(), m, p, q);
  return detail::make_result("matmul_nt", {m, q}, std::move(out), {&a, &b}, [m, p, q](detail::Node& self) {
    const double* g = self.grad.data();
    // da = g * b, db = g^T * a
    if (double* ga = detail::parent_grad(self, 0)) kernel::gemm_nn(g, self.parent(1).data.data(), ga, m, q, p);
    if (double* gb = detail::parent_grad(self, 1)) kernel::gemm_tn(g, self.parent(0).data.data(), gb, m, q, p);
  });
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto in = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return detail::make_result("transpose", {n, m}, std::move(out), {&a}, [m, n](detail::Node& self) {
    if (double* ga = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = detail::parent_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

// Element-wise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    const auto& av = self.parent(0).data;
    const auto& bv = self.parent(1).data;
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

// a[r, c] + v[c] for every row r.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  const std::size_t m = a.rows(), n = a.cols();
  if (v.size() != n) {
    throw DimensionError("add_rowvec: row width " + std::to_string(n) + " vs vector " + shape_str(v.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + v[j];
  return detail::make_result("add_rowvec", a.shape(), std::move(out), {&a, &v}, [m, n](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

// a[r, c] * v[c] for every row r.
inline Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  const std::size_t m = a.rows(), n = a.cols();
  if (v.size() != n) {
    throw DimensionError("mul_rowvec: row width " + std::to_string(n) + " vs vector " + shape_str(v.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] * v[j];
  return detail::make_result("mul_rowvec", a.shape(), std::move(out), {&a, &v}, [m, n](detail::Node& self) {
    const auto& av = self.parent(0).data;
    const auto& vv = self.parent(1).data;
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * vv[j];
    if (double* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * av[i * n + j];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// Logistic function clamped to the open interval (0, 1).
inline Tensor sigmoid(const Tensor& a) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return detail::unary(
      "sigmoid", a,
      [lo, hi](double x) {
        const double y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return std::clamp(y, lo, hi);
      },
      [](double, double y) { return y * (1.0 - y); });
}

// Exact x * Phi(x).
inline Tensor gelu(const Tensor& a) {
  return detail::unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return detail::make_result("sum", {1}, {total}, {&a}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parent(0).data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return detail::make_result("softmax_rows", x.shape(), std::move(out), {&x}, [m, n](detail::Node& self) {
    double* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  return detail::make_result("log_softmax_rows", x.shape(), std::move(out), {&x}, [m, n](detail::Node& self) {
    double* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

// Normalizes over the last axis with the biased variance, then applies
// gamma * xhat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t m = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: affine parameters must have length " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const auto in = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = gamma[j] * h + beta[j];
    }
  }
  return detail::make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta}, [m, d, xhat, inv_std](detail::Node& self) {
        const auto& gam = self.parent(1).data;
        const double* g = self.grad.data();
        if (double* gx = detail::parent_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[i * d + j] * gam[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[i * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[i * d + j] * gam[j];
              gx[i * d + j] += (*inv_std)[i] * (dh - mean_dh - (*xhat)[i * d + j] * mean_dh_h);
            }
          }
        }
        if (double* gg = detail::parent_grad(self, 1))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
        if (double* gb = detail::parent_grad(self, 2))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
      });
}

// Inverted dropout. Identity (the same tensor) in eval mode or when p == 0.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = x[i] * (*mask)[i];
  }
  return detail::make_result("dropout", x.shape(), std::move(out), {&x}, [mask](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

inline constexpr double kNormEpsilon = 1e-12;

// Each row divided by (||row||_2 + 1e-12); zero rows stay zero.
inline Tensor l2_normalize_rows(const Tensor& x) {
  const std::size_t m = x.rows(), d = x.cols();
  auto norms = std::make_shared<std::vector<double>>(m);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
    const double n = std::sqrt(ss);
    (*norms)[i] = n;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / (n + kNormEpsilon);
  }
  return detail::make_result("l2_normalize_rows", x.shape(), std::move(out), {&x}, [m, d, norms](detail::Node& self) {
    double* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    const auto& xs = self.parent(0).data;
    for (std::size_t i = 0; i < m; ++i) {
      const double n = (*norms)[i];
      const double s = n + kNormEpsilon;
      const double* g = self.grad.data() + i * d;
      if (n == 0.0) {
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] / s;
        continue;
      }
      double xg = 0.0;
      for (std::size_t j = 0; j < d; ++j) xg += xs[i * d + j] * g[j];
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] / s - xs[i * d + j] * xg / (s * s * n);
    }
  });
}

// Embedding lookup: row ids[i] of table becomes row i of the result.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t d = table.cols(), vocab = table.rows();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw DataError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(table.values().data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return detail::make_result("gather_rows", {ids.size(), d}, std::move(out), {&table},
                             [idx = std::move(idx), d](detail::Node& self) {
                               if (double* g = detail::parent_grad(self, 0))
                                 for (std::size_t i = 0; i < idx.size(); ++i)
                                   for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
                             });
}

// Rows [r0, r1) and columns [c0, c1) of a matrix.
inline Tensor slice(const Tensor& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  const std::size_t n = a.cols();
  if (r0 >= r1 || c0 >= c1 || r1 > a.rows() || c1 > n) {
    throw DimensionError("slice: window [" + std::to_string(r0) + "," + std::to_string(r1) + ")x[" +
                         std::to_string(c0) + "," + std::to_string(c1) + ") outside " + shape_str(a.shape()));
  }
  const std::size_t h = r1 - r0, w = c1 - c0;
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a[(r0 + i) * n + c0 + j];
  return detail::make_result("slice", {h, w}, std::move(out), {&a}, [r0, c0, h, w, n](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) g[(r0 + i) * n + c0 + j] += self.grad[i * w + j];
  });
}

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) { return slice(a, r0, r1, 0, a.cols()); }

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(t.cols());
    total += t.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].values().data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return detail::make_result("concat_cols", {m, total}, std::move(out), parts,
                             [m, total, widths](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (double* g = detail::parent_grad(self, k))
                                   for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       g[i * widths[k] + j] += self.grad[i * total + off + j];
                                 off += widths[k];
                               }
                             });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  std::vector<double> out;
  for (const Tensor& t : parts) {
    if (t.cols() != n) throw DimensionError("concat_rows: column counts differ");
    sizes.push_back(t.size());
    rows += t.rows();
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  return detail::make_result("concat_rows", {rows, n}, std::move(out), parts, [sizes](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (double* g = detail::parent_grad(self, k))
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      off += sizes[k];
    }
  });
}

// out[i] = a[i, cols[i]]
inline Tensor pick_per_row(const Tensor& a, std::span<const std::size_t> cols) {
  const std::size_t m = a.rows(), n = a.cols();
  if (cols.size() != m) throw DimensionError("pick_per_row: need one column index per row");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] >= n) throw DimensionError("pick_per_row: column index out of range");
    out[i] = a[i * n + cols[i]];
  }
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return detail::make_result("pick_per_row", {m}, std::move(out), {&a}, [idx = std::move(idx), n](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += self.grad[i];
  });
}

// Main diagonal of a square matrix.
inline Tensor diagonal(const Tensor& a) {
  if (a.rows() != a.cols()) throw DimensionError("diagonal: matrix is not square");
  std::vector<std::size_t> idx(a.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return pick_per_row(a, idx);
}

// Packs single-element tensors into a vector.
inline Tensor stack_scalars(const std::vector<Tensor>& scalars) {
  std::vector<double> out;
  for (const Tensor& t : scalars) {
    if (t.size() != 1) throw DimensionError("stack_scalars: element is not a scalar");
    out.push_back(t[0]);
  }
  const std::size_t n = out.size();
  return detail::make_result("stack_scalars", {n}, std::move(out), scalars, [n](detail::Node& self) {
    for (std::size_t k = 0; k < n; ++k)
      if (double* g = detail::parent_grad(self, k)) g[0] += self.grad[k];
  });
}

// Same values, new shape.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw DimensionError("reshape: size mismatch");
  std::vector<double> out(a.values().begin(), a.values().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {&a}, [](detail::Node& self) {
    if (double* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace clamp
