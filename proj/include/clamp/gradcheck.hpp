#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "clamp/errors.hpp"
#include "clamp/rng.hpp"
#include "clamp/tensor.hpp"

namespace clamp {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  std::size_t samples_per_param = 20;  // every coordinate when the tensor is smaller
};

struct GradCheckFailure {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_error = 0.0;
  std::vector<std::string> covered;
  std::vector<GradCheckFailure> failures;

  bool ok() const { return failures.empty(); }
};

// Compares reverse-mode gradients of a scalar function against central
// differences. Error metric: |analytic - numeric| / max(1, |analytic|).
// `f` must rebuild its graph from the current parameter values on each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                                  Rng& rng, const GradCheckOptions& options = {}) {
  auto evaluate = [&f] {
    NoGradGuard no_grad;
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
    return v;
  };

  std::vector<NamedTensor> leaves = params;
  for (auto& p : leaves) p.tensor.zero_grad();
  const Tensor out = f();
  if (!std::isfinite(out.item())) throw NumericError("grad_check: objective is not finite");
  out.backward();

  // snapshot first: the same tensor may be listed more than once
  std::vector<std::vector<double>> analytic_grads;
  for (auto& p : leaves) {
    const Tensor& t = p.tensor;
    analytic_grads.push_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                          : std::vector<double>(t.size(), 0.0));
  }

  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& p = leaves[li];
    Tensor& t = p.tensor;
    const std::size_t n = t.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (n > options.samples_per_param) {
      // partial Fisher-Yates: first `samples` entries are a uniform draw without replacement
      for (std::size_t i = 0; i < options.samples_per_param; ++i) std::swap(coords[i], coords[i + rng.below(n - i)]);
      coords.resize(options.samples_per_param);
    }
    const std::vector<double>& analytic_grad = analytic_grads[li];
    auto values = t.mutable_values();
    for (std::size_t idx : coords) {
      const double saved = values[idx];
      values[idx] = saved + options.step;
      const double up = evaluate();
      values[idx] = saved - options.step;
      const double down = evaluate();
      values[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = analytic_grad[idx];
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      report.max_error = std::max(report.max_error, err);
      ++report.checked;
      if (err > options.tolerance) report.failures.push_back({p.name, idx, analytic, numeric, err});
    }
    report.covered.push_back(p.name);
  }
  for (auto& p : leaves) p.tensor.zero_grad();
  return report;
}

}  // namespace clamp
