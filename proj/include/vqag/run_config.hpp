#pragma once

#include <string>

#include "json.hpp"
#include "vqag/data.hpp"
#include "vqag/model.hpp"
#include "vqag/trainer.hpp"

namespace vqag {

using Json = nlohmann::ordered_json;

// Environment variable naming the config document used when --config is absent.
inline constexpr const char* kConfigEnv = "VQAG_CONFIG";

Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const SynthConfig& c);

// Start from `base` and override the keys present in `j`. Unknown keys and
// wrongly typed values throw ConfigError naming "<section>.<key>".
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {}, const std::string& section = "model");
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}, const std::string& section = "train");
SynthConfig synth_config_from_json(const Json& j, SynthConfig base = {}, const std::string& section = "data");

// One declarative document for a whole run.
struct RunConfig {
  std::string preset = "desk";  // model preset the "model" section overrides
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  SynthConfig data;
  std::size_t eval_period = 5;  // every n-th scene is held out for evaluation
  bool train_on_all = false;    // train on train + held-out scenes
  std::string embeddings_path;  // pretrained word vectors; frozen unless finetune_embeddings
  bool finetune_embeddings = false;

  void validate() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Fills vocab_size and classes from a dataset.
void bind_to_dataset(ModelConfig& c, const Dataset& d);

}  // namespace vqag
