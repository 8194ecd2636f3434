#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clamp/ama.hpp"
#include "clamp/attention.hpp"
#include "clamp/data.hpp"
#include "clamp/gradcheck.hpp"
#include "clamp/mcl.hpp"
#include "clamp/model.hpp"
#include "clamp/ops.hpp"
#include "clamp/paf.hpp"
#include "clamp/trainer.hpp"

// Finite-difference verification of every differentiable primitive and of
// the composed model objective.

namespace clamp {

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kCompositionTolerance = 1e-4;

struct GradSuiteEntry {
  std::string module;
  std::string name;
  double tolerance = 0.0;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;

  bool ok() const {
    for (const auto& e : entries)
      if (!e.report.ok()) return false;
    return true;
  }
};

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Small model used wherever a full forward pass must be checked cheaply.
inline ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.text = {.vocab_size = 20, .d_model = 8, .n_layers = 1, .n_heads = 2, .max_len = 8, .dropout = 0.1};
  cfg.image = {.image_h = 4, .image_w = 4, .channels = 2, .patch_size = 2, .d_model = 8, .n_layers = 1, .n_heads = 2,
               .dropout = 0.1};
  cfg.paf = {.d_hidden = 8, .n_heads = 2, .dropout_p = 0.1, .l_max = 9, .use_self_bias = true};
  return cfg;
}

inline SyntheticConfig tiny_corpus_config(std::uint64_t seed, std::size_t n) {
  SyntheticConfig s;
  s.n_examples = n;
  s.vocab_size = 20;
  s.min_len = 3;
  s.max_len = 8;
  s.image_h = 4;
  s.image_w = 4;
  s.channels = 2;
  s.patch_size = 2;
  s.seed = seed;
  return s;
}

class GradSuite {
 public:
  explicit GradSuite(std::uint64_t seed) : rng_(seed) {}

  GradSuiteResult run() {
    primitives();
    compositions();
    end_to_end();
    return std::move(result_);
  }

 private:
  // sum(out * R) with a fixed random readout R of matching shape.
  std::function<Tensor()> readout(std::function<Tensor()> f) {
    const Tensor probe = f();
    const Tensor r = random_tensor(probe.shape(), rng_, -1.0, 1.0, false);
    return [f = std::move(f), r] { return sum(mul(f(), r)); };
  }

  void check(const std::string& module, const std::string& name, double tol, const std::function<Tensor()>& f,
             const std::vector<NamedTensor>& params) {
    GradCheckOptions opt;
    opt.tolerance = tol;
    result_.entries.push_back({module, name, tol, grad_check(f, params, rng_, opt)});
  }

  void primitives() {
    const double tol = kPrimitiveTolerance;
    Tensor a = random_tensor({4, 5}, rng_), b = random_tensor({5, 2}, rng_), c = random_tensor({5, 5}, rng_);
    check("numerics", "matmul", tol, readout([=] { return matmul(a, b); }), {{"a", a}, {"b", b}});
    check("numerics", "matmul_nt", tol, readout([=] { return matmul_nt(a, c); }), {{"a", a}, {"b", c}});
    check("numerics", "transpose", tol, readout([=] { return transpose(a); }), {{"a", a}});
    Tensor x = random_tensor({4, 6}, rng_), y = random_tensor({4, 6}, rng_), v = random_tensor({6}, rng_);
    check("numerics", "add_sub_mul", tol, readout([=] { return mul(add(x, y), sub(x, y)); }), {{"x", x}, {"y", y}});
    check("numerics", "rowvec_broadcast", tol, readout([=] { return mul_rowvec(add_rowvec(x, v), v); }),
          {{"x", x}, {"v", v}});
    check("numerics", "scale_shift", tol, readout([=] { return add_scalar(scale(x, -2.5), 0.75); }), {{"x", x}});
    check("numerics", "exp", tol, readout([=] { return exp(x); }), {{"x", x}});
    Tensor pos = random_tensor({4, 6}, rng_, 0.5, 2.0);
    check("numerics", "log", tol, readout([=] { return log(pos); }), {{"x", pos}});
    check("numerics", "sigmoid", tol, readout([=] { return sigmoid(scale(x, 3.0)); }), {{"x", x}});
    check("numerics", "gelu", tol, readout([=] { return gelu(scale(x, 2.0)); }), {{"x", x}});
    check("numerics", "softmax_rows", tol, readout([=] { return softmax_rows(scale(x, 3.0)); }), {{"x", x}});
    check("numerics", "log_softmax_rows", tol, readout([=] { return log_softmax_rows(scale(x, 3.0)); }), {{"x", x}});
    Tensor gamma = random_tensor({6}, rng_, 0.5, 1.5), beta = random_tensor({6}, rng_);
    check("numerics", "layer_norm", tol, readout([=] { return layer_norm(x, gamma, beta); }),
          {{"x", x}, {"gamma", gamma}, {"beta", beta}});
    check("numerics", "dropout", tol, readout([=] {
            Rng mask(17);
            return dropout(x, 0.5, true, mask);
          }),
          {{"x", x}});
    check("numerics", "l2_normalize_rows", tol, readout([=] { return l2_normalize_rows(x); }), {{"x", x}});
    Tensor table = random_tensor({6, 4}, rng_);
    const std::vector<std::size_t> ids = {2, 0, 2, 5};
    check("numerics", "gather_rows", tol, readout([=] { return gather_rows(table, ids); }), {{"table", table}});
    check("numerics", "slice_concat", tol,
          readout([=] {
            return concat_rows({concat_cols({slice(x, 0, 2, 1, 3), slice(y, 1, 3, 0, 2)}), slice(x, 2, 3, 0, 4)});
          }),
          {{"x", x}, {"y", y}});
    const std::vector<std::size_t> cols = {4, 0, 2, 5};
    check("numerics", "pick_reduce", tol,
          readout([=] { return stack_scalars({sum(pick_per_row(x, cols)), mean(y), sum(diagonal(slice(x, 0, 3, 0, 3)))}); }),
          {{"x", x}, {"y", y}});
  }

  void compositions() {
    const double tol = kCompositionTolerance;
    {
      Tensor q = random_tensor({3, 4}, rng_), k = random_tensor({5, 4}, rng_), v = random_tensor({5, 4}, rng_);
      Tensor bias = random_tensor({3, 5}, rng_);
      check("paf", "scaled_dot_attention", tol, readout([=] { return scaled_dot_attention(q, k, v, bias); }),
            {{"q", q}, {"k", k}, {"v", v}, {"bias", bias}});
      check("paf", "multi_head_attention", tol,
            readout([=] { return multi_head_attention(q, k, v, 2, bias, nullptr, "mha"); }),
            {{"q", q}, {"k", k}, {"v", v}, {"bias", bias}});
    }
    {
      PafConfig cfg{.d_hidden = 4, .n_heads = 2, .dropout_p = 0.2, .l_max = 6, .use_self_bias = true};
      ParamSet ps;
      Rng init(rng_.next_u64());
      PafParams params = PafParams::make(cfg, 6, ps, init);
      for (auto& p : ps.items())
        if (p.name.find("bias") != std::string::npos || p.name.find("gate") != std::string::npos)
          for (double& w : p.value.mutable_values()) w = rng_.uniform(-1.0, 1.0);
      Tensor text = random_tensor({3, 6}, rng_), image = random_tensor({5, 6}, rng_);
      auto named = ps.named();
      named.push_back({"text", text});
      named.push_back({"image", image});
      check("paf", "paf_forward", tol, readout([=] {
              Rng drop(5);
              PafOutput o = paf_forward(text, image, params, cfg, true, drop);
              return concat_rows({o.text, o.image});
            }),
            named);
      Tensor ht = random_tensor({3, 4}, rng_), hv = random_tensor({5, 4}, rng_), anchor = random_tensor({3, 4}, rng_);
      std::vector<NamedTensor> stage_params = {{"text", ht}, {"image", hv}, {"anchor", anchor}};
      for (const auto& p : ps.items())
        if (p.name.starts_with("paf.stage1")) stage_params.push_back({p.name, p.value});
      check("paf", "attention_stage", tol, readout([=] {
              Rng drop(6);
              return attention_stage(ht, hv, anchor, params.stages[0], 0.2, true, drop);
            }),
            stage_params);
      std::vector<NamedTensor> enhanced_params = {{"text", ht}, {"image", hv}};
      for (const auto& p : ps.items())
        if (p.name.starts_with("paf.stage3")) enhanced_params.push_back({p.name, p.value});
      check("paf", "enhanced_cross_attention", tol, readout([=] {
              Rng drop(7);
              return enhanced_cross_attention(ht, hv, params.enhanced, cfg, true, drop);
            }),
            enhanced_params);
    }
    {
      ParamSet ps;
      CrfParams crf = CrfParams::make(ps, "crf");
      for (auto& p : ps.items())
        for (double& w : p.value.mutable_values()) w = rng_.uniform(-1.0, 1.0);
      Tensor em = random_tensor({4, kNumLabels}, rng_, -2.0, 2.0);
      const std::vector<BioLabel> y = {BioLabel::BPos, BioLabel::IPos, BioLabel::O, BioLabel::BNeg};
      auto named = ps.named();
      named.push_back({"emissions", em});
      check("mcl", "crf_nll", tol, [=] { return crf_nll(em, y, crf); }, named);
    }
    {
      Tensor t = random_tensor({4, 8}, rng_), im = random_tensor({4, 8}, rng_);
      check("mcl", "gcl_loss", tol, [=] { return gcl_loss(t, im, 0.07); }, {{"text", t}, {"image", im}});
      Tensor tok = random_tensor({3, 8}, rng_), patches = random_tensor({4, 8}, rng_);
      check("mcl", "wra_loss", tol, [=] { return wra_loss(tok, patches).loss; }, {{"tokens", tok}, {"patches", patches}});
    }
    {
      ParamSet ps;
      Rng init(rng_.next_u64());
      TaggerParams tp = TaggerParams::make(4, 6, ps, init);
      for (auto& p : ps.items())
        if (p.name.find("crf") != std::string::npos || p.name.ends_with(".b"))
          for (double& w : p.value.mutable_values()) w = rng_.uniform(-1.0, 1.0);
      Tensor hp = random_tensor({3, 4}, rng_), ht = random_tensor({3, 6}, rng_);
      const std::vector<BioLabel> y = {BioLabel::BNeu, BioLabel::INeu, BioLabel::O};
      auto named = ps.named();
      named.push_back({"h_paf", hp});
      named.push_back({"h_text", ht});
      check("mcl", "tagger_forward", tol, [=] {
        TaggerOutput o = tagger_forward(hp, ht, y, tp);
        return add(o.l_crf, o.l_cls);
      }, named);
    }
    {
      // only 8 coordinates per instance, so pool three random instances
      GradCheckReport pooled;
      GradCheckOptions opt;
      opt.tolerance = kPrimitiveTolerance;
      for (int instance = 0; instance < 3; ++instance) {
        ParamSet ps;
        AmaState state = AmaState::make({}, ps);
        for (double& r : state.rho.mutable_values()) r = rng_.uniform(-0.5, 0.5);
        for (double& p : state.pi) p = rng_.uniform(-1.0, 1.0);
        Tensor losses = random_tensor({kNumTasks}, rng_, 0.1, 3.0);
        const GradCheckReport r = grad_check([=] { return aggregate_loss(losses, state); },
                                             {{"losses", losses}, {"ama.rho", state.rho}}, rng_, opt);
        pooled.checked += r.checked;
        pooled.max_error = std::max(pooled.max_error, r.max_error);
        if (instance == 0) pooled.covered = r.covered;
        pooled.failures.insert(pooled.failures.end(), r.failures.begin(), r.failures.end());
      }
      result_.entries.push_back({"ama", "aggregate_loss", kPrimitiveTolerance, std::move(pooled)});
    }
  }

  void end_to_end() {
    Model model(tiny_model_config(), rng_.next_u64());
    for (auto& p : model.params().items()) {
      // move zero-initialized tables off their symmetric starting point
      if (p.name.find("bias") != std::string::npos || p.name.find("gate") != std::string::npos ||
          p.name.find("crf") != std::string::npos || p.name == "ama.rho")
        for (double& w : p.value.mutable_values()) w = rng_.uniform(-0.5, 0.5);
    }
    model.ama().pi = {0.2, 0.5, -0.3, 0.1};
    const auto corpus = gen_synthetic(tiny_corpus_config(rng_.next_u64(), 3));
    std::vector<const MultimodalExample*> batch;
    for (const auto& ex : corpus) batch.push_back(&ex);
    const Model& m = model;
    check("trainer", "total_loss", kCompositionTolerance, [&m, batch] {
      Rng drop(11);
      const BatchOutput out = forward_batch(batch, m, {}, true, drop);
      return total_loss(out, m.ama(), {});
    }, model.params().named());
  }

  Rng rng_;
  GradSuiteResult result_;
};

inline GradSuiteResult run_gradient_suite(std::uint64_t seed) { return GradSuite(seed).run(); }

inline nlohmann::json grad_suite_to_json(const GradSuiteResult& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : e.report.failures)
      failures.push_back({{"param", f.param}, {"index", f.index}, {"analytic", f.analytic}, {"numeric", f.numeric},
                          {"error", f.error}});
    entries.push_back({{"module", e.module},
                       {"check", e.name},
                       {"tolerance", e.tolerance},
                       {"coordinates", e.report.checked},
                       {"max_error", e.report.max_error},
                       {"pass", e.report.ok()},
                       {"covered", e.report.covered},
                       {"failures", failures}});
  }
  return {{"pass", r.ok()}, {"checks", entries}};
}

}  // namespace clamp
