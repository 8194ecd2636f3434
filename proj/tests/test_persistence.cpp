#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "clamp/checkpoint.hpp"
#include "clamp/gradsuite.hpp"

using namespace clamp;

namespace {

RunConfig tiny_run() {
  RunConfig cfg;
  cfg.model = tiny_model_config();
  cfg.train.epochs = 2;
  cfg.train.batch_size = 4;
  cfg.train.seed = 3;
  return cfg;
}

std::unique_ptr<Model> trained(const RunConfig& cfg) {
  auto model = std::make_unique<Model>(cfg.model, cfg.train.seed);
  train(*model, cfg.train, gen_synthetic(tiny_corpus_config(31, 12)));
  quantize_to_storage(model->params());
  return model;
}

template <typename E>
std::string error_of(const std::string& bytes) {
  try {
    deserialize_checkpoint(bytes, "m.ckpt");
  } catch (const E& e) {
    return e.what();
  }
  return "no error";
}

std::filesystem::path source_dir() { return std::filesystem::path(__FILE__).parent_path().parent_path(); }

}  // namespace

TEST(Checkpoint, RoundTripRestoresParametersAndState) {
  const RunConfig cfg = tiny_run();
  const auto model = trained(cfg);
  ASSERT_TRUE(model->ama().initial_losses.has_value());
  const std::string bytes = serialize_checkpoint(*model, cfg);
  const LoadedCheckpoint back = deserialize_checkpoint(bytes);
  const auto& a = model->params().items();
  const auto& b = back.model->params().items();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    for (std::size_t k = 0; k < a[i].value.size(); ++k) ASSERT_EQ(a[i].value[k], b[i].value[k]) << a[i].name;
  }
  EXPECT_EQ(back.model->ama().pi, model->ama().pi);
  EXPECT_EQ(back.model->ama().initial_losses, model->ama().initial_losses);
  EXPECT_EQ(run_config_to_json(back.config), run_config_to_json(cfg));
  EXPECT_EQ(serialize_checkpoint(*back.model, back.config), bytes);
}

TEST(Checkpoint, EvaluationAfterLoadIsExact) {
  const RunConfig cfg = tiny_run();
  const auto model = trained(cfg);
  const auto dev = gen_synthetic(tiny_corpus_config(32, 15));
  const LoadedCheckpoint back = deserialize_checkpoint(serialize_checkpoint(*model, cfg));
  EXPECT_EQ(evaluate(*back.model, dev), evaluate(*model, dev));
  EXPECT_EQ(predict(*back.model, dev), predict(*model, dev));
}

TEST(Checkpoint, FileRoundTrip) {
  const RunConfig cfg = tiny_run();
  const auto model = trained(cfg);
  const auto path = std::filesystem::temp_directory_path() / "clamp_persistence_test.ckpt";
  save_checkpoint(path.string(), *model, cfg);
  const LoadedCheckpoint back = load_checkpoint(path.string());
  EXPECT_EQ(serialize_checkpoint(*back.model, back.config), serialize_checkpoint(*model, cfg));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), IoError);
}

TEST(Checkpoint, CorruptFilesAreRejectedWithContext) {
  const RunConfig cfg = tiny_run();
  const Model model(cfg.model, 1);
  const std::string bytes = serialize_checkpoint(model, cfg);

  EXPECT_NE(error_of<LoadError>("JUNKJUNK").find("m.ckpt: not a CLMP checkpoint"), std::string::npos);
  EXPECT_NE(error_of<LoadError>(bytes.substr(0, 2)).find("not a CLMP checkpoint"), std::string::npos);

  const std::string cut = error_of<LoadError>(bytes.substr(0, 100));
  EXPECT_NE(cut.find("truncated checkpoint at offset"), std::string::npos) << cut;

  std::string v2 = bytes;
  v2[4] = 2;
  EXPECT_NE(error_of<LoadError>(v2).find("unsupported checkpoint version 2"), std::string::npos);

  EXPECT_NE(error_of<LoadError>(bytes + "x").find("trailing bytes"), std::string::npos);

  // the same parameters loaded under a wider model
  std::string lied = bytes;
  const std::string old_blob = nlohmann::json{{"config", run_config_to_json(cfg)},
                                              {"ama_state", {{"pi", model.ama().pi}, {"initial_losses", nullptr}}}}
                                   .dump();
  ASSERT_EQ(lied.substr(lied.size() - old_blob.size()), old_blob);
  std::string new_blob = old_blob;
  new_blob.replace(new_blob.find("\"vocab_size\":20"), 15, "\"vocab_size\":21");
  lied.replace(lied.size() - old_blob.size(), old_blob.size(), new_blob);
  const std::string shape = error_of<LoadError>(lied);
  EXPECT_NE(shape.find("parameter text.token_embedding"), std::string::npos) << shape;
  EXPECT_NE(shape.find("has shape [20x8] but config implies [21x8]"), std::string::npos) << shape;
}

TEST(RunConfigJson, SubsetOverridesKeepDefaults) {
  const auto cfg = run_config_from_json(nlohmann::json::parse(R"({"train": {"lr": 0.5, "ablation": ["no_paf"]}})"));
  EXPECT_EQ(cfg.train.lr, 0.5);
  EXPECT_TRUE(cfg.train.ablation.no_paf);
  EXPECT_FALSE(cfg.train.ablation.no_ama);
  EXPECT_EQ(cfg.train.batch_size, TrainConfig{}.batch_size);
  EXPECT_EQ(cfg.model.text.d_model, ModelConfig{}.text.d_model);
}

TEST(RunConfigJson, RejectsUnknownKeysAndBadValues) {
  auto message = [](const char* text) {
    try {
      run_config_from_json(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"train": {"learning_rate": 1}})").find("learning_rate"), std::string::npos);
  EXPECT_NE(message(R"({"optimiser": {}})").find("optimiser"), std::string::npos);
  EXPECT_NE(message(R"({"text": {"d_model": -4}})").find("d_model"), std::string::npos);
  EXPECT_NE(message(R"({"train": {"ablation": ["no_fusion"]}})").find("no_fusion"), std::string::npos);
  EXPECT_NE(message(R"({"paf": {"n_heads": 5}})"), "no error");
}

TEST(RunConfigJson, RoundTripAndShippedConfigs) {
  const RunConfig desk = load_run_config((source_dir() / "configs" / "desk.json").string());
  EXPECT_EQ(run_config_to_json(desk), run_config_to_json(RunConfig{}));
  const RunConfig full_size = load_run_config((source_dir() / "configs" / "paper.json").string());
  EXPECT_EQ(full_size.model.text.d_model, 768u);
  EXPECT_EQ(full_size.model.paf.l_max, 197u);
  EXPECT_EQ(run_config_to_json(run_config_from_json(run_config_to_json(full_size))), run_config_to_json(full_size));
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}
