#include "vqag/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vqag/binary_io.hpp"
#include "vqag/run_config.hpp"

namespace vqag {

namespace {

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 8 ? "f64" : "f32";
}

struct ArrayRef {
  std::string name;
  Index rows, cols;
};

}  // namespace

template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& model, const TrainConfig& train,
                     const TrainState<Scalar>& state, const Vocabulary& words,
                     const std::vector<std::string>& answer_classes) {
  const auto params = model.parameters();
  const bool has_moments = !state.adam.m.empty();
  if (has_moments && (state.adam.m.size() != params.size() || state.adam.v.size() != params.size())) {
    throw StateError("save_checkpoint: optimizer moments do not match the parameter list");
  }

  std::vector<const Matrix<Scalar>*> arrays;
  Json entries = Json::array();
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const Matrix<Scalar>& a) {
    entries.push_back({{"name", name}, {"shape", {a.rows(), a.cols()}}, {"offset", offset}});
    offset += static_cast<std::size_t>(a.size()) * sizeof(Scalar);
    arrays.push_back(&a);
  };
  for (const auto* p : params) add(p->name, p->value);
  if (has_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) add("adam.m/" + params[i]->name, state.adam.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) add("adam.v/" + params[i]->name, state.adam.v[i]);
  }

  Json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["dtype"] = dtype_name<Scalar>();
  manifest["model"] = to_json(model.config());
  manifest["train"] = to_json(train);
  manifest["epoch"] = state.epoch;
  manifest["step"] = state.adam.step;
  manifest["rng_state"] = state.rng;
  manifest["vocab"] = words.tokens();
  manifest["answer_classes"] = answer_classes;
  manifest["arrays"] = entries;
  manifest["data_bytes"] = offset;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint '" + tmp + "'");
    out << "VQAGCKPT " << kCheckpointVersion << "\n" << manifest.dump() << "\n";
    for (const auto* a : arrays) binio::write_array_le(out, a->data(), static_cast<std::size_t>(a->size()));
    if (!out) throw InputError("failed writing checkpoint '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint '" + path + "'");
  std::string magic, manifest_line;
  if (!std::getline(in, magic) || magic.rfind("VQAGCKPT ", 0) != 0) {
    throw ParseError("'" + path + "' is not a checkpoint (bad header at byte offset 0)");
  }
  if (magic != "VQAGCKPT " + std::to_string(kCheckpointVersion)) {
    throw ParseError("unsupported checkpoint version '" + magic.substr(9) + "'");
  }
  const auto manifest_offset = static_cast<long long>(in.tellg());
  if (!std::getline(in, manifest_line)) throw ParseError("missing checkpoint manifest at byte offset " +
                                                         std::to_string(manifest_offset));
  Json manifest;
  try {
    manifest = Json::parse(manifest_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed checkpoint manifest at byte offset " +
                     std::to_string(manifest_offset + static_cast<long long>(e.byte)));
  }
  if (manifest.at("dtype").get<std::string>() != dtype_name<Scalar>()) {
    throw StateError("checkpoint stores " + manifest.at("dtype").get<std::string>() + " values, requested " +
                     dtype_name<Scalar>());
  }

  const ModelConfig mc = model_config_from_json(manifest.at("model"));
  Checkpoint<Scalar> ck{Model<Scalar>(mc, 0), train_config_from_json(manifest.at("train")), {}, {}, {}};
  ck.state.epoch = manifest.at("epoch").get<Index>();
  ck.state.rng = manifest.at("rng_state").get<Rng::State>();
  auto vocab = manifest.at("vocab").get<std::vector<std::string>>();
  if (vocab.empty() || vocab.front() != Vocabulary::kOov) throw ParseError("checkpoint vocabulary lacks the OOV row");
  ck.words = Vocabulary(std::vector<std::string>(vocab.begin() + 1, vocab.end()));
  ck.answer_classes = manifest.at("answer_classes").get<std::vector<std::string>>();

  const auto data_start = static_cast<long long>(in.tellg());
  std::map<std::string, Matrix<Scalar>*> targets;
  auto params = ck.model.parameters();
  for (auto* p : params) targets[p->name] = &p->value;
  bool has_moments = false;
  for (const auto& e : manifest.at("arrays")) {
    if (e.at("name").get<std::string>().rfind("adam.", 0) == 0) has_moments = true;
  }
  if (has_moments) {
    ck.state.adam.init(params);
    ck.state.adam.step = manifest.at("step").get<std::int64_t>();
    for (std::size_t i = 0; i < params.size(); ++i) {
      targets["adam.m/" + params[i]->name] = &ck.state.adam.m[i];
      targets["adam.v/" + params[i]->name] = &ck.state.adam.v[i];
    }
  }

  std::size_t filled = 0;
  for (const auto& e : manifest.at("arrays")) {
    const auto name = e.at("name").get<std::string>();
    auto it = targets.find(name);
    if (it == targets.end()) throw ParseError("checkpoint array '" + name + "' does not belong to this model");
    const auto shape = e.at("shape").get<std::vector<Index>>();
    Matrix<Scalar>& dst = *it->second;
    if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols()) {
      throw ParseError("checkpoint array '" + name + "' has shape " + e.at("shape").dump() + ", model expects " +
                       shape_str(dst));
    }
    in.seekg(data_start + e.at("offset").get<long long>());
    binio::read_array_le(in, dst.data(), static_cast<std::size_t>(dst.size()), "checkpoint array '" + name + "'");
    ++filled;
  }
  if (filled != targets.size()) throw ParseError("checkpoint is missing parameter arrays");
  return ck;
}

template void save_checkpoint<double>(const std::string&, const Model<double>&, const TrainConfig&,
                                      const TrainState<double>&, const Vocabulary&, const std::vector<std::string>&);
template void save_checkpoint<float>(const std::string&, const Model<float>&, const TrainConfig&,
                                     const TrainState<float>&, const Vocabulary&, const std::vector<std::string>&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);

}  // namespace vqag
