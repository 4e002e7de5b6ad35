#include "vqag/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "vqag/checkpoint.hpp"

namespace fs = std::filesystem;

namespace vqag {

namespace {

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// manifest.json lists every file of a run directory with its size and hash.
void write_manifest(const std::string& dir, const std::string& command, const Json& extra,
                    const std::vector<std::string>& files) {
  Json j;
  j["command"] = command;
  j["format_version"] = 1;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  j["files"] = Json::array();
  for (const auto& f : files) {
    const std::string bytes = read_file(dir + "/" + f);
    j["files"].push_back({{"name", f}, {"bytes", bytes.size()}, {"fnv1a64", hex64(fnv1a64(bytes))}});
  }
  write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

Json summary_to_json(const AccuracySummary& s) {
  Json j;
  j["overall"] = s.overall;
  j["count"] = s.count;
  j["by_type"] = Json::object();
  for (const auto& [k, v] : s.by_type) j["by_type"][k] = {{"accuracy", v.accuracy}, {"count", v.count}};
  j["by_template"] = Json::object();
  for (const auto& [k, v] : s.by_template) j["by_template"][k] = {{"accuracy", v.accuracy}, {"count", v.count}};
  return j;
}

AccuracySummary summary_from_json(const Json& j) {
  AccuracySummary s;
  s.overall = j.at("overall").get<double>();
  s.count = j.at("count").get<Index>();
  for (const auto& [k, v] : j.at("by_type").items()) s.by_type[k] = {v.at("accuracy"), v.at("count")};
  for (const auto& [k, v] : j.at("by_template").items()) s.by_template[k] = {v.at("accuracy"), v.at("count")};
  return s;
}

// Rejects a checkpoint whose vocabularies differ from the dataset's.
void check_vocab(const Checkpoint<double>& ck, const Dataset& d) {
  if (ck.words.tokens() != d.words.tokens() || ck.answer_classes != d.answer_classes) {
    throw ConfigError("checkpoint vocabulary does not match the dataset");
  }
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

}  // namespace

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments) {
  Json doc = to_json(base);
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + a + "' must look like section.key=value");
    }
    const std::string section = a.substr(0, dot);
    const std::string key = a.substr(dot + 1, eq - dot - 1);
    const std::string raw = a.substr(eq + 1);
    if (!doc.contains(section) || !doc[section].is_object()) throw ConfigError("unknown config key '" + section + "'");
    if (!doc[section].contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    doc[section][key] = value;
  }
  // The preset only seeds defaults; the explicit sections already carry them.
  doc.erase("preset");
  RunConfig out = run_config_from_json(doc);
  out.preset = base.preset;
  return out;
}

RunConfig resolve_config(const std::string& path) {
  if (!path.empty()) return load_run_config(path);
  if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') return load_run_config(env);
  RunConfig c;
  c.validate();
  return c;
}

Dataset cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
  Dataset d = gen_synthetic(cfg.data);
  save_dataset(out_dir, d);
  write_file(out_dir + "/config.json", to_json(cfg).dump(2) + "\n");
  write_manifest(out_dir, "gen", {{"scenes", d.scenes.size()}, {"questions", d.items.size()}},
                 {"scenes.bin", "questions.txt", "vocab.txt", "config.json"});
  return d;
}

SplitData load_split(const RunConfig& cfg, const std::string& data_dir) {
  SplitData s;
  if (data_dir.empty()) {
    s.all = gen_synthetic(cfg.data);
  } else {
    std::vector<std::string> warnings;
    s.all = load_dataset(data_dir, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  auto [train, eval] = split_by_scene(s.all, cfg.eval_period);
  s.train = cfg.train_on_all ? s.all : std::move(train);
  s.eval = std::move(eval);
  return s;
}

TrainOutcome cmd_train(const TrainRequest& req, std::ostream* progress) {
  const RunConfig& cfg = req.config;
  cfg.validate();
  SplitData data = load_split(cfg, req.data_dir);
  if (data.train.items.empty()) throw InputError("train: no training questions");
  ModelConfig mc = cfg.model;
  bind_to_dataset(mc, data.all);
  std::optional<EmbeddingTable> pretrained;
  if (!cfg.embeddings_path.empty()) {
    pretrained = load_embeddings(cfg.embeddings_path);
    if (pretrained->width() != mc.d_w) {
      throw ConfigError("run.embeddings_path has width " + std::to_string(pretrained->width()) + ", model.d_w is " +
                        std::to_string(mc.d_w));
    }
    mc.embeddings_trainable = cfg.finetune_embeddings;
  }

  fs::create_directories(req.run_dir);
  const std::string ck_path = req.run_dir + "/checkpoint.bin";
  const std::string log_path = req.run_dir + "/train_log.jsonl";
  const std::string cfg_text = to_json(cfg).dump(2) + "\n";

  Model<double> model(mc, cfg.train.seed);
  TrainState<double> state;
  if (req.resume && fs::exists(ck_path)) {
    if (fs::exists(req.run_dir + "/config.json") && read_file(req.run_dir + "/config.json") != cfg_text) {
      throw ConfigError("resume: config differs from the one recorded in " + req.run_dir);
    }
    Checkpoint<double> ck = load_checkpoint<double>(ck_path);
    check_vocab(ck, data.all);
    model = std::move(ck.model);
    state = std::move(ck.state);
    // Drop log lines written after the checkpoint.
    std::istringstream log(fs::exists(log_path) ? read_file(log_path) : std::string());
    std::string line, kept;
    for (Index i = 0; i < state.epoch && std::getline(log, line); ++i) kept += line + "\n";
    write_file(log_path, kept);
  } else {
    write_file(log_path, "");
    if (fs::exists(ck_path)) fs::remove(ck_path);
    if (pretrained) {
      MatrixXd table = model.embeddings.value;
      const Index copied = copy_pretrained_rows(*pretrained, data.all.words, table);
      model.embeddings.value = table;
      if (progress != nullptr) {
        *progress << "pretrained vectors for " << copied << " of " << data.all.words.size() - 1 << " words\n";
      }
    }
  }
  write_file(req.run_dir + "/config.json", cfg_text);

  TrainOptions opts;
  opts.eval = data.eval.items.empty() ? nullptr : &data.eval;
  opts.log_path = log_path;
  opts.checkpoint_path = ck_path;
  if (progress != nullptr) {
    opts.on_epoch = [progress](const EpochRecord& r) { *progress << to_json_line(r) << "\n" << std::flush; };
  }
  TrainOutcome out;
  out.records = train(model, data.train, cfg.train, opts, state);
  const Dataset& scored = data.eval.items.empty() ? data.train : data.eval;
  out.eval = evaluate(model, scored);
  write_file(req.run_dir + "/eval.json", summary_to_json(out.eval).dump(2) + "\n");
  write_manifest(req.run_dir, "train", {{"pathway", to_string(mc.pathway)}, {"epochs", state.epoch}},
                 {"config.json", "train_log.jsonl", "checkpoint.bin", "eval.json"});
  return out;
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "eval") return Split::Eval;
  if (s == "all") return Split::All;
  throw ConfigError("split must be train, eval or all, got '" + s + "'");
}

AccuracySummary cmd_eval(const std::string& checkpoint, const std::string& data_dir, Split split,
                         std::size_t eval_period) {
  Checkpoint<double> ck = load_checkpoint<double>(checkpoint);
  Dataset all = load_dataset(data_dir);
  check_vocab(ck, all);
  if (split == Split::All) return evaluate(ck.model, all);
  auto [train, eval] = split_by_scene(all, eval_period);
  return evaluate(ck.model, split == Split::Train ? train : eval);
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "K\tm\toverall\tyes/no\tnumber\tother\tcount\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << r.K << "\t" << r.m << "\t" << r.accuracy.overall << "\t" << r.accuracy.type_accuracy("yes/no") << "\t"
       << r.accuracy.type_accuracy("number") << "\t" << r.accuracy.type_accuracy("other") << "\t" << r.accuracy.count
       << "\n";
  }
  return os.str();
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::string& data_dir, const std::string& run_dir,
                                const std::vector<Index>& Ks, const std::vector<Index>& ms, std::ostream* progress) {
  if (Ks.empty() || ms.empty()) throw ConfigError("sweep: K and m lists must be non-empty");
  // Validate every cell before any training.
  for (Index K : Ks) {
    for (Index m : ms) {
      RunConfig c = cfg;
      c.model.K = K;
      c.model.m = m;
      c.validate();
      if (m > c.data.slots) throw ConfigError("sweep: m=" + std::to_string(m) + " exceeds the object count");
    }
  }
  fs::create_directories(run_dir);
  std::vector<SweepRow> rows;
  std::string jsonl;
  for (Index K : Ks) {
    for (Index m : ms) {
      RunConfig c = cfg;
      c.model.K = K;
      c.model.m = m;
      const std::string cell = run_dir + "/K" + std::to_string(K) + "_m" + std::to_string(m);
      SweepRow row{K, m, {}, false};
      if (fs::exists(cell + "/result.json")) {
        row.accuracy = summary_from_json(Json::parse(read_file(cell + "/result.json")).at("eval"));
        row.reused = true;
      } else {
        TrainRequest req{c, data_dir, cell, false};
        row.accuracy = cmd_train(req).eval;
        Json r;
        r["K"] = K;
        r["m"] = m;
        r["eval"] = summary_to_json(row.accuracy);
        // Written last: its presence marks the cell as finished.
        write_file(cell + "/result.json", r.dump(2) + "\n");
      }
      if (progress != nullptr) {
        *progress << "K=" << K << " m=" << m << " overall=" << row.accuracy.overall << (row.reused ? " (cached)" : "")
                  << "\n" << std::flush;
      }
      Json line;
      line["K"] = K;
      line["m"] = m;
      line["overall"] = row.accuracy.overall;
      for (const char* t : {"yes/no", "number", "other"}) line[t] = row.accuracy.type_accuracy(t);
      line["count"] = row.accuracy.count;
      jsonl += line.dump() + "\n";
      rows.push_back(row);
    }
  }
  write_file(run_dir + "/sweep.tsv", sweep_table(rows));
  write_file(run_dir + "/sweep.jsonl", jsonl);
  return rows;
}

std::vector<Index> GraphExport::top_degree(std::size_t k) const {
  std::vector<Index> order(nodes.size());
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [this](Index a, Index b) {
    return nodes[static_cast<std::size_t>(a)].degree > nodes[static_cast<std::size_t>(b)].degree;
  });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

std::string GraphExport::to_json() const {
  Json j;
  j["image_id"] = image_id;
  j["question_id"] = question_id;
  j["question"] = question;
  j["answer"] = answer;
  j["score"] = score;
  j["nodes"] = Json::array();
  for (const auto& n : nodes) j["nodes"].push_back({{"index", n.index}, {"box", n.box.corners()}, {"degree", n.degree}});
  j["edges"] = Json::array();
  for (const auto& e : edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"weight", e.weight}});
  return j.dump(1);
}

std::string GraphExport::to_dot() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "digraph explain {\n";
  os << "  label=\"" << question << " -> " << answer << "\";\n";
  os << "  node [shape=circle, fixedsize=true, label=\"\"];\n";
  for (const auto& n : nodes) {
    // Positioned at the box centre (image y grows downward; DOT y grows upward).
    os << "  n" << n.index << " [pos=\"" << 10.0 * n.box.cx() << "," << -10.0 * n.box.cy()
       << "!\", width=" << 0.2 + 0.4 * n.degree << ", xlabel=\"" << n.index << "\"];\n";
  }
  for (const auto& e : edges) {
    os << "  n" << e.from << " -> n" << e.to << " [penwidth=" << 0.5 + 6.0 * e.weight << ", weight=" << e.weight
       << "];\n";
  }
  os << "}\n";
  return os.str();
}

GraphExport explain(const Model<double>& model, const Dataset& data, std::int64_t question_id) {
  if (model.config().pathway == Pathway::Attention) {
    throw ConfigError("explain needs a graph pathway (graph or knn), model uses attention");
  }
  if (!data.has_item(question_id)) throw InputError("unknown question id " + std::to_string(question_id));
  const QAItem& item = data.item(question_id);
  const Scene& scene = data.scene(item.scene_id);
  ForwardTrace<double> t;
  const auto tokens = question_tokens(data, item);
  model.forward(scene, tokens, Mode::Eval, nullptr, &t);

  GraphExport g;
  g.image_id = scene.image_id;
  g.question_id = item.id;
  g.question = join(item.question);
  const Index pred = predict_class(t.logits);
  g.answer = data.answer_classes.at(static_cast<std::size_t>(pred));
  g.score = sigmoid(t.logits(pred));
  const Index n = scene.objects();
  for (Index i = 0; i < n; ++i) g.nodes.push_back({i, scene.boxes[static_cast<std::size_t>(i)], 0.0});
  for (Index i = 0; i < n; ++i) {
    for (Index s = 0; s < t.graph.neighbors.cols(); ++s) {
      const Index j = t.graph.neighbors(i, s);
      const double a = t.graph.alpha(i, s);
      g.edges.push_back({i, j, a});
      g.nodes[static_cast<std::size_t>(i)].degree += a;
      g.nodes[static_cast<std::size_t>(j)].degree += a;
    }
  }
  return g;
}

GraphExport cmd_explain(const std::string& checkpoint, const std::string& data_dir, std::int64_t question_id,
                        const std::string& out_path, const std::string& dot_path) {
  Checkpoint<double> ck = load_checkpoint<double>(checkpoint);
  Dataset d = load_dataset(data_dir);
  check_vocab(ck, d);
  GraphExport g = explain(ck.model, d, question_id);
  if (!out_path.empty()) write_file(out_path, g.to_json() + "\n");
  if (!dot_path.empty()) write_file(dot_path, g.to_dot());
  return g;
}

GradReport cmd_gradcheck(const GradCheckOptions& opts, const std::string& out_path) {
  GradReport r = check_model(opts);
  if (!out_path.empty()) write_file(out_path, r.to_json() + "\n");
  return r;
}

}  // namespace vqag
