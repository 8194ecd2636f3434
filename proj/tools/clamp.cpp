// clamp: command-line front end for corpus generation, training, evaluation,
// prediction, gradient checking and introspection.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "clamp/checkpoint.hpp"
#include "clamp/config.hpp"
#include "clamp/data.hpp"
#include "clamp/gradsuite.hpp"
#include "clamp/model.hpp"
#include "clamp/trainer.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

std::vector<clamp::MultimodalExample> load_data(const std::string& path, const clamp::ModelConfig& cfg) {
  auto data = clamp::load_jsonl(path);
  if (data.empty()) throw clamp::DataError(path + ": no examples");
  clamp::check_dataset(cfg, data, path);
  return data;
}

json tensor_rows(const clamp::Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t.at(r, c));
    rows.push_back(row);
  }
  return rows;
}

json labels_json(const std::vector<clamp::BioLabel>& labels) {
  json out = json::array();
  for (auto l : labels) out.push_back(clamp::label_name(l));
  return out;
}

int cmd_gen_data(const std::string& out, const clamp::SyntheticConfig& cfg) {
  clamp::save_jsonl(out, clamp::gen_synthetic(cfg));
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, dev, out, log;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  clamp::RunConfig cfg = clamp::load_run_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  const auto train_set = load_data(a.data, cfg.model);
  std::optional<std::vector<clamp::MultimodalExample>> dev_set;
  if (!a.dev.empty()) dev_set = load_data(a.dev, cfg.model);

  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw clamp::IoError("cannot write log " + a.log);
  }
  std::ostream& log = a.log.empty() ? std::cout : log_file;

  clamp::Model model(cfg.model, cfg.train.seed);
  const auto report = clamp::train(model, cfg.train, train_set, dev_set ? &*dev_set : nullptr,
                                   [&](const clamp::EpochRecord& r) { log << clamp::epoch_to_json(r).dump() << '\n' << std::flush; });
  clamp::quantize_to_storage(model.params());
  clamp::save_checkpoint(a.out, model, cfg);
  std::cerr << "trained " << report.epochs.size() << " epochs in " << report.wall_seconds << " s, saved " << a.out
            << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path) {
  const auto ckpt = clamp::load_checkpoint(model_path);
  const auto data = load_data(data_path, ckpt.config.model);
  std::cout << clamp::metrics_to_json(clamp::evaluate(*ckpt.model, data, ckpt.config.train.ablation)).dump() << '\n';
  return kExitOk;
}

int cmd_predict(const std::string& model_path, const std::string& data_path) {
  const auto ckpt = clamp::load_checkpoint(model_path);
  const auto data = load_data(data_path, ckpt.config.model);
  const auto decoded = clamp::predict(*ckpt.model, data, ckpt.config.train.ablation);
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::cout << json{{"index", i}, {"labels", labels_json(decoded[i])},
                      {"spans", clamp::spans_to_json(clamp::extract_spans(decoded[i]))}}
                     .dump()
              << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto result = clamp::run_gradient_suite(seed);
  std::cout << clamp::grad_suite_to_json(result).dump(2) << '\n';
  return result.ok() ? kExitOk : kExitError;
}

int cmd_inspect(const std::string& model_path, const std::string& data_path, std::size_t index) {
  const auto ckpt = clamp::load_checkpoint(model_path);
  const auto data = load_data(data_path, ckpt.config.model);
  if (index >= data.size()) {
    throw clamp::DataError(data_path + ": index " + std::to_string(index) + " out of range (" +
                           std::to_string(data.size()) + " examples)");
  }
  const auto& ex = data[index];
  clamp::NoGradGuard no_grad;
  clamp::Rng unused(0);
  clamp::ForwardTrace trace;
  const auto out = ckpt.model->forward(ex, ckpt.config.train.ablation, false, unused, false, &trace);

  json attention = json::array();
  for (const auto& p : trace.attention) attention.push_back({{"label", p.label}, {"rows", tensor_rows(p.probs)}});
  const auto& ama = ckpt.model->ama();
  json report = {
      {"index", index},
      {"tokens", ex.tokens},
      {"gold", clamp::spans_to_json(clamp::extract_spans(ex.labels))},
      {"predicted", clamp::spans_to_json(clamp::extract_spans(out.decoded))},
      {"predicted_labels", labels_json(out.decoded)},
      {"transport",
       {{"plan", tensor_rows(trace.transport->plan)},
        {"matching", trace.transport->matching},
        {"objective", trace.transport->objective},
        {"cost", tensor_rows(trace.cost)}}},
      {"attention", attention},
      {"ama",
       {{"task_order", clamp::kTaskNames},
        {"weights", clamp::priority_weights(ama)},
        {"sigmas", ama.sigma()},
        {"priorities", ama.pi}}},
  };
  std::cout << report.dump(2) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal aspect sentiment tagger"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic JSONL corpus");
  std::string gen_out;
  clamp::SyntheticConfig syn;
  gen->add_option("--out", gen_out, "Output JSONL path")->required();
  gen->add_option("--n", syn.n_examples, "Number of examples")->capture_default_str();
  gen->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
  gen->add_option("--vocab-size", syn.vocab_size)->capture_default_str();
  gen->add_option("--min-len", syn.min_len)->capture_default_str();
  gen->add_option("--max-len", syn.max_len)->capture_default_str();
  gen->add_option("--image-h", syn.image_h)->capture_default_str();
  gen->add_option("--image-w", syn.image_w)->capture_default_str();
  gen->add_option("--channels", syn.channels)->capture_default_str();
  gen->add_option("--patch-size", syn.patch_size)->capture_default_str();
  gen->add_option("--drop-prob", syn.drop_prob, "Chance that one polarity cue is removed")->capture_default_str();
  gen->add_option("--noise", syn.noise, "Background pixel standard deviation")->capture_default_str();

  auto* tr = app.add_subcommand("train", "Train a model and save a checkpoint");
  TrainArgs targs;
  std::size_t epochs_override = 0;
  std::uint64_t seed_override = 0;
  tr->add_option("--config", targs.config, "Run configuration JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", targs.data, "Training JSONL")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", targs.out, "Checkpoint path")->required();
  tr->add_option("--dev", targs.dev, "Development JSONL scored after every epoch")->check(CLI::ExistingFile);
  tr->add_option("--log", targs.log, "Per-epoch JSON lines (default: stdout)");
  auto* epochs_opt = tr->add_option("--epochs", epochs_override, "Override train.epochs");
  auto* seed_opt = tr->add_option("--seed", seed_override, "Override train.seed");

  std::string model_path, data_path;
  auto* ev = app.add_subcommand("eval", "Print micro P/R/F1 of a checkpoint on a corpus");
  ev->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_path)->required()->check(CLI::ExistingFile);

  auto* pr = app.add_subcommand("predict", "Print predicted spans per sentence as JSON lines");
  pr->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  pr->add_option("--data", data_path)->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  std::uint64_t gc_seed = 0;
  gc->add_option("--seed", gc_seed)->capture_default_str();

  auto* in = app.add_subcommand("inspect", "Dump transport plan, attention and loss weights for one example");
  std::size_t index = 0;
  in->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
  in->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  in->add_option("--index", index)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, syn);
    if (*tr) {
      if (*epochs_opt) targs.epochs = epochs_override;
      if (*seed_opt) targs.seed = seed_override;
      return cmd_train(targs);
    }
    if (*ev) return cmd_eval(model_path, data_path);
    if (*pr) return cmd_predict(model_path, data_path);
    if (*gc) return cmd_gradcheck(gc_seed);
    if (*in) return cmd_inspect(model_path, data_path, index);
  } catch (const clamp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitUsage;
}
