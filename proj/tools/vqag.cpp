// Command-line front end. Exit codes: 0 success, 1 usage or config error,
// 2 runtime error (including a failed gradient check).

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vqag/commands.hpp"

using namespace vqag;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> set;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON config document (default: $VQAG_CONFIG, else built-in)");
    app->add_option("--set", set, "Override a config key, e.g. --set model.K=4 (repeatable)");
  }
  RunConfig resolve() const { return apply_overrides(resolve_config(config), set); }
};

std::vector<Index> parse_list(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Question-conditioned graph learning for visual question answering"};
  app.require_subcommand(1);

  Common gen_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic scene-QA dataset");
  gen_c.attach(gen);
  gen->add_option("-o,--out", gen_out, "Output directory")->required();

  Common train_c;
  std::string train_data, train_run, train_model;
  bool train_resume = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a run directory");
  train_c.attach(train_cmd);
  train_cmd->add_option("-d,--data", train_data, "Dataset directory (default: generate from config)");
  train_cmd->add_option("-r,--run", train_run, "Run directory")->required();
  train_cmd->add_option("--model", train_model, "Pathway: graph, knn or attention")
      ->check(CLI::IsMember({"graph", "knn", "attention"}));
  train_cmd->add_flag("--resume", train_resume, "Continue from the run directory's checkpoint");

  std::string eval_ck, eval_data, eval_split = "eval";
  std::size_t eval_period = 5;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ck, "Checkpoint file")->required();
  eval->add_option("-d,--data", eval_data, "Dataset directory")->required();
  eval->add_option("--split", eval_split, "train, eval or all")->check(CLI::IsMember({"train", "eval", "all"}));
  eval->add_option("--eval-period", eval_period, "Every n-th scene is held out");

  Common sweep_c;
  std::string sweep_data, sweep_run, sweep_K = "2,4,8", sweep_m = "2,4,8";
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a K x m grid");
  sweep_c.attach(sweep);
  sweep->add_option("-d,--data", sweep_data, "Dataset directory (default: generate from config)");
  sweep->add_option("-r,--run", sweep_run, "Sweep directory")->required();
  sweep->add_option("--K", sweep_K, "Comma-separated kernel counts");
  sweep->add_option("--m", sweep_m, "Comma-separated neighbourhood sizes");

  std::string ex_ck, ex_data, ex_out, ex_dot;
  std::int64_t ex_qid = 0;
  auto* ex = app.add_subcommand("explain", "Export the learned graph for one question");
  ex->add_option("--checkpoint", ex_ck, "Checkpoint file")->required();
  ex->add_option("-d,--data", ex_data, "Dataset directory")->required();
  ex->add_option("-q,--question", ex_qid, "Question id")->required();
  ex->add_option("-o,--out", ex_out, "JSON output path (default: stdout)");
  ex->add_option("--dot", ex_dot, "DOT output path");

  GradCheckOptions gc;
  std::string gc_model = "graph", gc_mutate = "none", gc_out;
  auto* gcheck = app.add_subcommand("gradcheck", "Finite-difference check of every analytic gradient");
  gcheck->add_option("--model", gc_model, "Pathway")->check(CLI::IsMember({"graph", "knn", "attention"}));
  gcheck->add_option("--mutate", gc_mutate, "Inject a fault")->check(CLI::IsMember({"none", "sign-flip"}));
  gcheck->add_option("--seed", gc.seed, "Seed");
  gcheck->add_option("--eps", gc.eps, "Finite-difference step");
  gcheck->add_option("--tol", gc.tolerance, "Max relative error");
  gcheck->add_option("-o,--out", gc_out, "Also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const Dataset d = cmd_gen(gen_c.resolve(), gen_out);
      std::cout << "wrote " << d.scenes.size() << " scenes and " << d.items.size() << " questions to " << gen_out
                << "\n";
    } else if (train_cmd->parsed()) {
      RunConfig cfg = train_c.resolve();
      if (!train_model.empty()) cfg.model.pathway = pathway_from_string(train_model);
      const TrainOutcome out = cmd_train({cfg, train_data, train_run, train_resume}, &std::cout);
      std::cout << "final eval accuracy " << out.eval.overall << "\n";
    } else if (eval->parsed()) {
      const AccuracySummary s = cmd_eval(eval_ck, eval_data, split_from_string(eval_split), eval_period);
      EpochRecord r;
      r.eval = s;
      Json j = Json::parse(to_json_line(r));
      std::cout << j.at("eval").dump(2) << "\n";
    } else if (sweep->parsed()) {
      const auto rows =
          cmd_sweep(sweep_c.resolve(), sweep_data, sweep_run, parse_list(sweep_K), parse_list(sweep_m), &std::cerr);
      std::cout << sweep_table(rows);
    } else if (ex->parsed()) {
      const GraphExport g = cmd_explain(ex_ck, ex_data, ex_qid, ex_out, ex_dot);
      if (ex_out.empty()) std::cout << g.to_json() << "\n";
    } else if (gcheck->parsed()) {
      gc.config.pathway = pathway_from_string(gc_model);
      gc.mutation = gc_mutate == "sign-flip" ? Mutation::SignFlip : Mutation::None;
      const GradReport r = cmd_gradcheck(gc, gc_out);
      std::cout << r.to_json() << "\n";
      if (!r.passed()) {
        std::cerr << "gradcheck FAILED: max relative error " << r.max_rel_error() << " >= " << r.tolerance << "\n";
        return 2;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
