#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "clamp/errors.hpp"
#include "clamp/gradcheck.hpp"
#include "clamp/rng.hpp"
#include "clamp/tensor.hpp"

namespace clamp {

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  // AdamW weight decay applies
};

// Ordered registry of learnable leaves. Registration order fixes checkpoint
// layout and optimizer traversal.
class ParamSet {
 public:
  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(fan_in * fan_out);
    for (double& x : v) x = rng.uniform(-bound, bound);
    return add(name, Tensor({fan_in, fan_out}, std::move(v), true), true);
  }

  // Normal(0, 0.02).
  Tensor embedding(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.normal(0.0, 0.02);
    return add(name, Tensor({rows, cols}, std::move(v), true), true);
  }

  Tensor constant(const std::string& name, Shape shape, double value, bool decay = false) {
    return add(name, Tensor::full(std::move(shape), value, true), decay);
  }

  Tensor add(const std::string& name, Tensor t, bool decay) {
    for (const auto& p : items_) {
      if (p.name == name) throw ConfigError("duplicate parameter name " + name);
    }
    t.set_requires_grad(true);
    items_.push_back({name, t, decay});
    return t;
  }

  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Parameter>& items() { return items_; }

  const Parameter* find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : items_) p.value.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
  }

  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    for (const auto& p : items_) out.push_back({p.name, p.value});
    return out;
  }

 private:
  std::vector<Parameter> items_;
};

}  // namespace clamp
