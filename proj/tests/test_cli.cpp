#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "vqag/checkpoint.hpp"
#include "vqag/commands.hpp"

using namespace vqag;
namespace fs = std::filesystem;

namespace {

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

RunConfig small_run(std::size_t scenes = 40) {
  RunConfig c;
  c.preset = "tiny";
  c.data = fixture::small_synth(scenes);
  c.model = ModelConfig::tiny();
  c.model.d_v_raw = c.data.raw_width;
  c.model.d_w = 8;
  c.model.d_q = 12;
  c.model.d_g = 12;
  c.model.d_e = 8;
  c.model.d_h = {12};
  c.train.epochs = 2;
  c.train.lr_halve_epoch = 2;
  c.train.batch_size = 16;
  c.train.lr = 1e-2;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VQAG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config documents reject unknown keys by name") {
  try {
    parse_run_config(R"({"model": {"K": 4, "kernals": 3}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), "model.kernals"));
  }
  try {
    parse_run_config(R"({"train": {"lr": "fast"}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(contains(e.what(), "train.lr"));
  }
  CHECK_THROWS_AS(parse_run_config(R"({"optimizer": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"preset": "huge"})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{"), ConfigError);

  const RunConfig p = parse_run_config(R"({"preset": "full"})");
  CHECK(p.model.d_q == 1024);
  CHECK(p.train.lr == 1e-4);
  const RunConfig r = parse_run_config(R"({"model": {"K": 4}, "run": {"eval_period": 4}})");
  CHECK(r.model.K == 4);
  CHECK(r.model.m == ModelConfig::desk().m);
  CHECK(r.eval_period == 4);
}

TEST_CASE("config round trips through JSON") {
  const RunConfig c = small_run();
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back).dump() == to_json(c).dump());
}

TEST_CASE("overrides") {
  const RunConfig base;
  const RunConfig o = apply_overrides(base, {"model.K=4", "train.lr=0.01", "data.colors=[\"red\",\"blue\"]",
                                             "model.pathway=knn", "run.eval_period=3"});
  CHECK(o.model.K == 4);
  CHECK(o.train.lr == 0.01);
  CHECK(o.data.colors == std::vector<std::string>{"red", "blue"});
  CHECK(o.model.pathway == Pathway::Knn);
  CHECK(o.eval_period == 3);
  CHECK(o.model.m == base.model.m);
  CHECK_THROWS_AS(apply_overrides(base, {"model.nope=1"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"K=4"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(base, {"model.K=3"}), ConfigError);  // d_h must divide by K
}

TEST_CASE("config resolution order") {
  const std::string dir = fixture::scratch_dir("cli_config");
  write_file(dir + "/a.json", R"({"model": {"K": 4}})");
  write_file(dir + "/b.json", R"({"model": {"K": 2}})");
  ::unsetenv(kConfigEnv);
  CHECK(resolve_config("").model.K == ModelConfig::desk().K);
  ::setenv(kConfigEnv, (dir + "/b.json").c_str(), 1);
  CHECK(resolve_config("").model.K == 2);
  CHECK(resolve_config(dir + "/a.json").model.K == 4);
  ::unsetenv(kConfigEnv);
  CHECK_THROWS(resolve_config(dir + "/missing.json"));
}

TEST_CASE("gen writes a reproducible dataset directory") {
  const std::string a = fixture::scratch_dir("cli_gen_a"), b = fixture::scratch_dir("cli_gen_b");
  const RunConfig c = small_run(10);
  const Dataset d = cmd_gen(c, a);
  cmd_gen(c, b);
  for (const char* f : {"scenes.bin", "questions.txt", "vocab.txt", "config.json", "manifest.json"}) {
    CAPTURE(f);
    REQUIRE(fs::exists(a + "/" + f));
    CHECK(read_file(a + "/" + f) == read_file(b + "/" + f));
  }
  const auto manifest = Json::parse(read_file(a + "/manifest.json"));
  CHECK(manifest.at("command") == "gen");
  CHECK(manifest.at("scenes") == 10);
  CHECK(manifest.at("files").size() == 4);
  CHECK(manifest.at("files")[0].at("bytes") == fs::file_size(a + "/scenes.bin"));
  CHECK(load_dataset(a).items.size() == d.items.size());
}

TEST_CASE("train writes a run directory and resumes exactly") {
  const std::string data = fixture::scratch_dir("cli_train_data");
  const RunConfig c = small_run(40);
  cmd_gen(c, data);

  const auto start = std::chrono::steady_clock::now();
  const std::string full = fixture::scratch_dir("cli_train_full");
  const TrainOutcome out = cmd_train({c, data, full, false});
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 60.0);
  REQUIRE(out.records.size() == 2);
  for (const char* f : {"config.json", "train_log.jsonl", "checkpoint.bin", "eval.json", "manifest.json"}) {
    CHECK(fs::exists(full + "/" + f));
  }
  CHECK(out.eval.count > 0);
  CHECK(Json::parse(read_file(full + "/eval.json")).at("overall") == out.eval.overall);

  // Stop after one epoch, then resume to two.
  const std::string part = fixture::scratch_dir("cli_train_part");
  RunConfig one = c;
  one.train.epochs = 1;
  one.train.lr_halve_epoch = 1;
  cmd_train({one, data, part, false});
  // Resuming under a different config is refused.
  CHECK_THROWS_AS(cmd_train({c, data, part, true}), ConfigError);
  write_file(part + "/config.json", read_file(full + "/config.json"));
  const TrainOutcome rest = cmd_train({c, data, part, true});
  REQUIRE(rest.records.size() == 1);
  CHECK(rest.records[0].epoch == 2);
  CHECK(read_file(part + "/train_log.jsonl") == read_file(full + "/train_log.jsonl"));
  CHECK(read_file(part + "/checkpoint.bin") == read_file(full + "/checkpoint.bin"));

  CHECK(cmd_eval(full + "/checkpoint.bin", data, Split::Eval, c.eval_period).overall == out.eval.overall);
  CHECK(cmd_eval(full + "/checkpoint.bin", data, Split::All, c.eval_period).count ==
        static_cast<Index>(load_dataset(data).items.size()));
  CHECK_THROWS_AS(split_from_string("test"), ConfigError);

  // A dataset with another vocabulary is rejected.
  const std::string other = fixture::scratch_dir("cli_train_other");
  RunConfig oc = small_run(10);
  oc.data.colors = {"red", "green", "blue", "pink"};
  cmd_gen(oc, other);
  CHECK_THROWS_AS(cmd_eval(full + "/checkpoint.bin", other, Split::All, 5), ConfigError);
}

TEST_CASE("pretrained embeddings are frozen unless fine-tuning is asked for") {
  const std::string root = fixture::scratch_dir("cli_embeddings");
  RunConfig c = small_run(10);
  const Dataset d = cmd_gen(c, root + "/data");
  EmbeddingTable table;
  table.vectors = MatrixXd::Zero(1, c.model.d_w);
  for (const char* w : {"red", "cube", "how"}) {
    table.vocab.add(w);
    table.vectors.conservativeResize(table.vectors.rows() + 1, Eigen::NoChange);
    table.vectors.row(table.vectors.rows() - 1).setConstant(0.25 * static_cast<double>(table.vectors.rows()));
  }
  save_embeddings_binary(table, root + "/vectors.bin");
  c.embeddings_path = root + "/vectors.bin";

  cmd_train({c, root + "/data", root + "/frozen", false});
  const auto frozen = load_checkpoint<double>(root + "/frozen/checkpoint.bin");
  CHECK(!frozen.model.embeddings.trainable);
  const Index red = d.words.lookup("red");
  CHECK(frozen.model.embeddings.value.row(red) == table.vectors.row(table.vocab.lookup("red")));

  c.finetune_embeddings = true;
  cmd_train({c, root + "/data", root + "/tuned", false});
  const auto tuned = load_checkpoint<double>(root + "/tuned/checkpoint.bin");
  CHECK(tuned.model.embeddings.trainable);
  CHECK(tuned.model.embeddings.value.row(red) != table.vectors.row(table.vocab.lookup("red")));

  c.model.d_w = 6;
  CHECK_THROWS_AS(cmd_train({c, root + "/data", root + "/bad", false}), ConfigError);
}

TEST_CASE("sweep covers the grid and reuses finished cells") {
  const std::string data = fixture::scratch_dir("cli_sweep_data");
  const std::string run = fixture::scratch_dir("cli_sweep_run");
  RunConfig c = small_run(20);
  c.train.epochs = 1;
  c.train.lr_halve_epoch = 1;
  cmd_gen(c, data);
  const auto rows = cmd_sweep(c, data, run, {2, 3}, {2, 3});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) CHECK(!r.reused);
  CHECK(rows[1].K == 2);
  CHECK(rows[1].m == 3);
  const std::string table = read_file(run + "/sweep.tsv");
  CHECK(table.rfind("K\tm\toverall\tyes/no\tnumber\tother\tcount\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  CHECK(std::count(table.begin(), table.end(), '\t') == 5 * 6);
  const std::string jsonl = read_file(run + "/sweep.jsonl");
  std::istringstream lines(jsonl);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = Json::parse(line);
    for (const char* k : {"K", "m", "overall", "yes/no", "number", "other", "count"}) CHECK(j.contains(k));
    ++n;
  }
  CHECK(n == 4);

  fs::remove(run + "/K3_m3/result.json");
  const auto again = cmd_sweep(c, data, run, {2, 3}, {2, 3});
  REQUIRE(again.size() == 4);
  CHECK(again[0].reused);
  CHECK(again[2].reused);
  CHECK(!again[3].reused);
  CHECK(again[3].accuracy.overall == rows[3].accuracy.overall);
  CHECK(read_file(run + "/sweep.tsv") == table);

  CHECK_THROWS_AS(cmd_sweep(c, data, run, {3}, {9}), ConfigError);
  CHECK_THROWS_AS(cmd_sweep(c, data, run, {5}, {2}), ConfigError);
  CHECK_THROWS_AS(cmd_sweep(c, data, run, {}, {2}), ConfigError);
}

TEST_CASE("explain exports the learned graph") {
  const std::string data = fixture::scratch_dir("cli_explain_data");
  const std::string run = fixture::scratch_dir("cli_explain_run");
  const RunConfig c = small_run(20);
  cmd_gen(c, data);
  cmd_train({c, data, run, false});
  const Dataset d = load_dataset(data);
  const std::int64_t qid = d.items[3].id;
  const GraphExport g = cmd_explain(run + "/checkpoint.bin", data, qid, run + "/g.json", run + "/g.dot");
  const Index n = d.scene_slots(), m = c.model.m;
  CHECK(static_cast<Index>(g.nodes.size()) == n);
  CHECK(static_cast<Index>(g.edges.size()) == n * m);
  double degree = 0, weight = 0;
  for (const auto& node : g.nodes) degree += node.degree;
  for (const auto& e : g.edges) weight += e.weight;
  CHECK(std::abs(degree - 2 * weight) < 1e-12);
  CHECK(std::abs(weight - static_cast<double>(n)) < 1e-9);  // alpha rows sum to one

  const Checkpoint<double> ck = load_checkpoint<double>(run + "/checkpoint.bin");
  const QAItem& item = d.item(qid);
  const auto ref = oracle::forward(ck.model, d.scene(item.scene_id), question_tokens(d, item));
  for (Index i = 0; i < n; ++i) {
    for (Index s = 0; s < m; ++s) {
      const auto& e = g.edges[static_cast<std::size_t>(i * m + s)];
      CHECK(e.from == i);
      CHECK(e.to == ref.graph.neighbors[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]);
      CHECK(std::abs(e.weight - ref.graph.alpha[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)]) < 1e-9);
    }
  }

  const auto j = Json::parse(read_file(run + "/g.json"));
  CHECK(j.at("question_id") == qid);
  CHECK(j.at("edges").size() == static_cast<std::size_t>(n * m));
  const std::string dot = read_file(run + "/g.dot");
  CHECK(dot.rfind("digraph", 0) == 0);
  CHECK(std::count(dot.begin(), dot.end(), '>') >= n * m);
  CHECK(g.top_degree(2).size() == 2);
  CHECK(g.top_degree(100).size() == static_cast<std::size_t>(n));

  CHECK_THROWS_AS(cmd_explain(run + "/checkpoint.bin", data, 999999, "", ""), InputError);
  Model<double> att(fixture::model_for(d, Pathway::Attention), 1);
  CHECK_THROWS_AS(explain(att, d, qid), ConfigError);
}

TEST_CASE("top_degree ordering") {
  GraphExport g;
  for (double deg : {0.5, 2.0, 2.0, 1.0}) g.nodes.push_back({static_cast<Index>(g.nodes.size()), {}, deg});
  CHECK(g.top_degree(1) == std::vector<Index>{1});
  CHECK(g.top_degree(2) == std::vector<Index>{1, 2});
  CHECK(g.top_degree(3) == std::vector<Index>{1, 2, 3});
}

TEST_CASE("gradcheck report") {
  const std::string dir = fixture::scratch_dir("cli_gradcheck");
  const GradReport r = cmd_gradcheck({}, dir + "/report.json");
  const auto j = Json::parse(read_file(dir + "/report.json"));
  CHECK(j.at("passed") == true);
  CHECK(j.at("groups").size() == r.groups.size());
  CHECK(j.at("max_rel_error").get<double>() < 1e-4);
}

TEST_CASE("command-line exit codes") {
  const std::string dir = fixture::scratch_dir("cli_exit");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("gradcheck") == 0);
  CHECK(run_cli("gradcheck --mutate sign-flip") == 2);
  CHECK(run_cli("gen -o " + dir + "/d --set model.nope=1") == 1);
  CHECK(run_cli("gen -o " + dir + "/d --set data.n_scenes=3 --set data.slots=5 --set data.objects_min=3 "
                "--set data.objects_max=5 --set data.raw_width=11") == 0);
  CHECK(fs::exists(dir + "/d/scenes.bin"));
  CHECK(run_cli("eval --checkpoint " + dir + "/none.bin -d " + dir + "/d") == 2);
}
