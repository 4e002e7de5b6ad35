#include "vqag/run_config.hpp"

#include <fstream>
#include <sstream>

namespace vqag {

namespace {

template <typename T>
T get_as(const Json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type (" + v.dump() + ")");
  }
}

using Setter = std::function<void(const Json&, const std::string&)>;

template <typename T>
Setter field(T& dst) {
  return [&dst](const Json& v, const std::string& key) { dst = get_as<T>(v, key); };
}

Setter index_list(std::vector<Index>& dst) {
  return [&dst](const Json& v, const std::string& key) {
    if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a list of integers");
    dst.clear();
    for (const auto& e : v) dst.push_back(get_as<Index>(e, key));
  };
}

Setter string_list(std::vector<std::string>& dst) {
  return [&dst](const Json& v, const std::string& key) {
    if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a list of strings");
    dst.clear();
    for (const auto& e : v) dst.push_back(get_as<std::string>(e, key));
  };
}

void apply(const Json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string full = section + "." + key;
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + full + "'");
    it->second(value, full);
  }
}

}  // namespace

Json to_json(const ModelConfig& c) {
  Json j;
  j["vocab_size"] = c.vocab_size;
  j["d_w"] = c.d_w;
  j["d_q"] = c.d_q;
  j["d_v_raw"] = c.d_v_raw;
  j["d_g"] = c.d_g;
  j["d_e"] = c.d_e;
  j["K"] = c.K;
  j["m"] = c.m;
  j["d_h"] = c.d_h;
  j["mlp_hidden"] = c.mlp_hidden;
  j["classes"] = c.classes;
  j["dropout_p"] = c.dropout_p;
  j["force_self_loop"] = c.force_self_loop;
  j["embeddings_trainable"] = c.embeddings_trainable;
  j["pathway"] = to_string(c.pathway);
  return j;
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c, const std::string& section) {
  std::string pathway = to_string(c.pathway);
  apply(j, section,
        {{"vocab_size", field(c.vocab_size)},
         {"d_w", field(c.d_w)},
         {"d_q", field(c.d_q)},
         {"d_v_raw", field(c.d_v_raw)},
         {"d_g", field(c.d_g)},
         {"d_e", field(c.d_e)},
         {"K", field(c.K)},
         {"m", field(c.m)},
         {"d_h", index_list(c.d_h)},
         {"mlp_hidden", field(c.mlp_hidden)},
         {"classes", field(c.classes)},
         {"dropout_p", field(c.dropout_p)},
         {"force_self_loop", field(c.force_self_loop)},
         {"embeddings_trainable", field(c.embeddings_trainable)},
         {"pathway", field(pathway)}});
  try {
    c.pathway = pathway_from_string(pathway);
  } catch (const Error&) {
    throw ConfigError("config key '" + section + ".pathway' must be graph, knn or attention, got '" + pathway + "'");
  }
  return c;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["lr_halve_epoch"] = c.lr_halve_epoch;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c, const std::string& section) {
  apply(j, section,
        {{"lr", field(c.lr)},
         {"batch_size", field(c.batch_size)},
         {"epochs", field(c.epochs)},
         {"lr_halve_epoch", field(c.lr_halve_epoch)},
         {"beta1", field(c.beta1)},
         {"beta2", field(c.beta2)},
         {"adam_eps", field(c.adam_eps)},
         {"seed", field(c.seed)}});
  return c;
}

Json to_json(const SynthConfig& c) {
  Json j;
  j["n_scenes"] = c.n_scenes;
  j["slots"] = c.slots;
  j["objects_min"] = c.objects_min;
  j["objects_max"] = c.objects_max;
  j["raw_width"] = c.raw_width;
  j["colors"] = c.colors;
  j["shapes"] = c.shapes;
  j["sizes"] = c.sizes;
  j["noise_sigma"] = c.noise_sigma;
  j["questions_per_scene"] = c.questions_per_scene;
  j["mix"] = {{"count", c.mix.count}, {"exist", c.mix.exist}, {"attribute", c.mix.attribute},
              {"relation", c.mix.relation}};
  j["relation_margin"] = c.relation_margin;
  j["relation_band"] = c.relation_band;
  j["seed"] = c.seed;
  return j;
}

SynthConfig synth_config_from_json(const Json& j, SynthConfig c, const std::string& section) {
  apply(j, section,
        {{"n_scenes", field(c.n_scenes)},
         {"slots", field(c.slots)},
         {"objects_min", field(c.objects_min)},
         {"objects_max", field(c.objects_max)},
         {"raw_width", field(c.raw_width)},
         {"colors", string_list(c.colors)},
         {"shapes", string_list(c.shapes)},
         {"sizes", string_list(c.sizes)},
         {"noise_sigma", field(c.noise_sigma)},
         {"questions_per_scene", field(c.questions_per_scene)},
         {"mix",
          [&c, &section](const Json& v, const std::string&) {
            apply(v, section + ".mix",
                  {{"count", field(c.mix.count)},
                   {"exist", field(c.mix.exist)},
                   {"attribute", field(c.mix.attribute)},
                   {"relation", field(c.mix.relation)}});
          }},
         {"relation_margin", field(c.relation_margin)},
         {"relation_band", field(c.relation_band)},
         {"seed", field(c.seed)}});
  return c;
}

void RunConfig::validate() const {
  ModelConfig m = model;
  // Dataset-bound widths may still be unset; check the rest.
  if (m.vocab_size < 1) m.vocab_size = 1;
  if (m.classes < 1) m.classes = 1;
  m.validate();
  train.validate();
  data.validate();
  if (eval_period < 2) throw ConfigError("config key 'run.eval_period' must be >= 2");
}

Json to_json(const RunConfig& c) {
  Json j;
  j["preset"] = c.preset;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["data"] = to_json(c.data);
  j["run"] = {{"eval_period", c.eval_period},
              {"train_on_all", c.train_on_all},
              {"embeddings_path", c.embeddings_path},
              {"finetune_embeddings", c.finetune_embeddings}};
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config document must be a JSON object");
  RunConfig c;
  if (j.contains("preset")) {
    c.preset = get_as<std::string>(j["preset"], "preset");
    if (c.preset == "desk") c.model = ModelConfig::desk();
    else if (c.preset == "full") c.model = ModelConfig::full();
    else if (c.preset == "tiny") c.model = ModelConfig::tiny();
    else throw ConfigError("config key 'preset' must be desk, full or tiny, got '" + c.preset + "'");
    if (c.preset == "full") c.train = TrainConfig::full();
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    if (key == "model") c.model = model_config_from_json(value, c.model);
    else if (key == "train") c.train = train_config_from_json(value, c.train);
    else if (key == "data") c.data = synth_config_from_json(value, c.data);
    else if (key == "run") {
      apply(value, "run",
            {{"eval_period", field(c.eval_period)},
             {"train_on_all", field(c.train_on_all)},
             {"embeddings_path", field(c.embeddings_path)},
             {"finetune_embeddings", field(c.finetune_embeddings)}});
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void bind_to_dataset(ModelConfig& c, const Dataset& d) {
  c.vocab_size = static_cast<Index>(d.words.size());
  c.classes = static_cast<Index>(d.answer_classes.size());
  if (!d.scenes.empty() && d.raw_width() != c.d_v_raw) {
    throw ConfigError("model.d_v_raw=" + std::to_string(c.d_v_raw) + " does not match the dataset feature width " +
                      std::to_string(d.raw_width()));
  }
}

}  // namespace vqag
