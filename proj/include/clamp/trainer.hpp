#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "clamp/ama.hpp"
#include "clamp/data.hpp"
#include "clamp/model.hpp"

namespace clamp {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  Ablation ablation;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be non-negative");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
    if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
  }
};

// AdamW with decoupled weight decay on parameters flagged `decay`.
class AdamW {
 public:
  AdamW(ParamSet& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
    for (const auto& p : params.items()) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& items = params_.items();
    for (std::size_t k = 0; k < items.size(); ++k) {
      Parameter& p = items[k];
      if (!p.value.has_grad()) continue;
      auto w = p.value.mutable_values();
      const auto g = p.value.grad();
      const double decay = p.decay ? cfg_.lr * cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = m_[k][i] / bc1;
        const double v_hat = v_[k][i] / bc2;
        w[i] -= decay * w[i];
        w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  ParamSet& params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(ParamSet& params, double max_norm) {
  double ss = 0.0;
  for (const auto& p : params.items())
    for (double g : p.value.grad()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params.items())
      if (p.value.has_grad())
        for (double& g : p.value.mutable_grad()) g *= s;
  }
  return norm;
}

struct BatchOutput {
  Tensor losses;  // length 4, task order CRF, CLS, GCL, WRA
  LossBundle bundle;
  std::array<bool, kNumTasks> active{};
  std::vector<std::vector<BioLabel>> decoded;
};

// Examples run one at a time; only the global contrast couples the batch.
// Task losses are batch means except GCL, which is already batch-level.
inline BatchOutput forward_batch(const std::vector<const MultimodalExample*>& batch, const Model& model,
                                 const Ablation& ablation, bool training, Rng& rng) {
  if (batch.empty()) throw DataError("forward_batch: empty batch");
  const MclConfig& mcl = model.config().mcl;
  std::vector<Tensor> crf, cls, wra, text_globals, image_globals;
  BatchOutput out;
  for (const MultimodalExample* ex : batch) {
    ExampleOutput r = model.forward(*ex, ablation, training, rng, true);
    crf.push_back(r.l_crf);
    cls.push_back(r.l_cls);
    if (!ablation.no_mcl) wra.push_back(r.l_wra);
    text_globals.push_back(r.text_global);
    image_globals.push_back(r.image_global);
    out.decoded.push_back(std::move(r.decoded));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const Tensor zero = Tensor::scalar(0.0);
  const Tensor l_crf = scale(sum(stack_scalars(crf)), inv);
  const Tensor l_cls = mcl.use_cls_loss ? scale(sum(stack_scalars(cls)), inv) : zero;
  Tensor l_gcl = zero, l_wra = zero;
  if (!ablation.no_mcl) {
    l_gcl = named_term("gcl",
                       [&] { return gcl_loss(concat_rows(text_globals), concat_rows(image_globals), mcl.tau_gcl); });
    l_wra = scale(sum(stack_scalars(wra)), inv);
  }
  out.losses = stack_scalars({l_crf, l_cls, l_gcl, l_wra});
  out.bundle = {l_crf.item(), l_cls.item(), l_gcl.item(), l_wra.item()};
  out.active = {true, mcl.use_cls_loss, !ablation.no_mcl, !ablation.no_mcl};
  return out;
}

// Scalar objective for one batch: adaptive aggregation, or the plain sum of
// the four task losses under the no_ama ablation.
inline Tensor total_loss(const BatchOutput& batch, const AmaState& ama, const Ablation& ablation) {
  return ablation.no_ama ? fixed_sum_loss(batch.losses) : aggregate_loss(batch.losses, ama, batch.active);
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossBundle mean_losses;
  double total_loss = 0.0;
  TaskArray weights{};
  TaskArray sigmas{};
  std::optional<double> dev_f1;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
};

inline nlohmann::json epoch_to_json(const EpochRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["losses"] = {{"crf", r.mean_losses.crf}, {"cls", r.mean_losses.cls}, {"gcl", r.mean_losses.gcl},
                 {"wra", r.mean_losses.wra}};
  j["total_loss"] = r.total_loss;
  j["weights"] = r.weights;
  j["sigmas"] = r.sigmas;
  j["dev_f1"] = r.dev_f1 ? nlohmann::json(*r.dev_f1) : nlohmann::json(nullptr);
  return j;
}

inline std::vector<std::vector<BioLabel>> predict(const Model& model, const std::vector<MultimodalExample>& data,
                                                  const Ablation& ablation = {}) {
  NoGradGuard no_grad;
  Rng unused(0);
  std::vector<std::vector<BioLabel>> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(model.forward(ex, ablation, false, unused, false).decoded);
  return out;
}

// Eval mode: Viterbi on the fused head, span extraction, micro P/R/F1.
inline Metrics evaluate(const Model& model, const std::vector<MultimodalExample>& data, const Ablation& ablation = {}) {
  const auto decoded = predict(model, data, ablation);
  std::vector<std::vector<AspectSpan>> gold, pred;
  for (std::size_t i = 0; i < data.size(); ++i) {
    gold.push_back(extract_spans(data[i].labels));
    pred.push_back(extract_spans(decoded[i]));
  }
  return micro_prf(gold, pred);
}

class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg)
      : model_(model), cfg_((cfg.validate(), cfg)), rng_(cfg.seed), optimizer_(model.params(), cfg) {}

  // One pass over a shuffled copy of the training set.
  EpochRecord run_epoch(const std::vector<MultimodalExample>& train,
                        const std::vector<MultimodalExample>* dev = nullptr) {
    if (train.empty()) throw DataError("train: empty training set");
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_.shuffle(order);

    EpochRecord record;
    record.epoch = ++epoch_;
    TaskArray loss_sum{};
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      std::vector<const MultimodalExample*> batch;
      for (std::size_t i = begin; i < std::min(order.size(), begin + cfg_.batch_size); ++i)
        batch.push_back(&train[order[i]]);
      const double step_loss = step(batch);
      const TaskArray l = last_bundle_.as_array();
      for (std::size_t i = 0; i < kNumTasks; ++i) loss_sum[i] += l[i];
      record.total_loss += step_loss;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    record.mean_losses = {loss_sum[0] * inv, loss_sum[1] * inv, loss_sum[2] * inv, loss_sum[3] * inv};
    record.total_loss *= inv;
    record.weights = priority_weights(model_.ama());
    record.sigmas = model_.ama().sigma();
    if (dev) record.dev_f1 = evaluate(model_, *dev, cfg_.ablation).f1;
    return record;
  }

  // One optimization step; returns the scalar objective.
  double step(const std::vector<const MultimodalExample*>& batch) {
    model_.params().zero_grad();
    try {
      const BatchOutput out = forward_batch(batch, model_, cfg_.ablation, true, rng_);
      const TaskArray values = out.bundle.as_array();
      for (std::size_t i = 0; i < kNumTasks; ++i) {
        if (!std::isfinite(values[i])) throw NumericError(std::string("loss term ") + kTaskNames[i] + " is not finite");
      }
      const Tensor objective = total_loss(out, model_.ama(), cfg_.ablation);
      objective.backward();
      clip_grad_norm(model_.params(), cfg_.clip_norm);
      optimizer_.step();
      if (!cfg_.ablation.no_ama) update_priorities(model_.ama(), out.bundle);
      last_bundle_ = out.bundle;
      return objective.item();
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch_) + ", step " +
                         std::to_string(optimizer_.steps() + 1) + ": " + e.what());
    }
  }

  const LossBundle& last_bundle() const { return last_bundle_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  Rng rng_;
  AdamW optimizer_;
  std::size_t epoch_ = 0;
  LossBundle last_bundle_;
};

inline TrainReport train(Model& model, const TrainConfig& cfg, const std::vector<MultimodalExample>& train_set,
                         const std::vector<MultimodalExample>* dev_set = nullptr,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(model, cfg);
  TrainReport report;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    report.epochs.push_back(trainer.run_epoch(train_set, dev_set));
    if (on_epoch) on_epoch(report.epochs.back());
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace clamp
