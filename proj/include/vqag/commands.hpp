#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vqag/dataset_io.hpp"
#include "vqag/gradcheck.hpp"
#include "vqag/run_config.hpp"
#include "vqag/trainer.hpp"

namespace vqag {

// Applies "section.key=value" overrides (value parsed as JSON, falling back to
// a plain string) on top of a config document.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& assignments);

// Config from an explicit path, else $VQAG_CONFIG, else built-in defaults.
RunConfig resolve_config(const std::string& path);

// gen: writes scenes.bin, questions.txt, vocab.txt and manifest.json.
Dataset cmd_gen(const RunConfig& cfg, const std::string& out_dir);

struct TrainRequest {
  RunConfig config;
  std::string data_dir;  // empty: generate from config.data in memory
  std::string run_dir;
  bool resume = false;
};

struct TrainOutcome {
  std::vector<EpochRecord> records;
  AccuracySummary eval;
};

// train: run_dir receives config.json, train_log.jsonl, checkpoint.bin,
// eval.json and manifest.json.
TrainOutcome cmd_train(const TrainRequest& req, std::ostream* progress = nullptr);

// Dataset for a run plus its train/eval split.
struct SplitData {
  Dataset all, train, eval;
};
SplitData load_split(const RunConfig& cfg, const std::string& data_dir);

enum class Split { Train, Eval, All };
Split split_from_string(const std::string& s);

AccuracySummary cmd_eval(const std::string& checkpoint, const std::string& data_dir, Split split,
                         std::size_t eval_period);

struct SweepRow {
  Index K = 0;
  Index m = 0;
  AccuracySummary accuracy;
  bool reused = false;  // loaded from a finished cell instead of trained
};

// sweep: one cell directory per (K, m) under run_dir; finished cells are
// skipped. Writes sweep.tsv and sweep.jsonl with one row per cell.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, const std::string& data_dir, const std::string& run_dir,
                                const std::vector<Index>& Ks, const std::vector<Index>& ms,
                                std::ostream* progress = nullptr);

std::string sweep_table(const std::vector<SweepRow>& rows);

struct ExportNode {
  Index index = 0;
  Box box;
  double degree = 0;  // outgoing plus incoming edge-weight mass
};

struct ExportEdge {
  Index from = 0, to = 0;
  double weight = 0;
};

struct GraphExport {
  std::int64_t image_id = 0;
  std::int64_t question_id = 0;
  std::string question;
  std::string answer;
  double score = 0;  // sigmoid of the winning logit
  std::vector<ExportNode> nodes;
  std::vector<ExportEdge> edges;

  // Node indices of the k largest degrees, lowest index first among ties.
  std::vector<Index> top_degree(std::size_t k) const;
  std::string to_json() const;
  std::string to_dot() const;
};

GraphExport explain(const Model<double>& model, const Dataset& data, std::int64_t question_id);

// explain: writes the export as JSON to out_path and, when dot_path is
// non-empty, as DOT.
GraphExport cmd_explain(const std::string& checkpoint, const std::string& data_dir, std::int64_t question_id,
                        const std::string& out_path, const std::string& dot_path);

GradReport cmd_gradcheck(const GradCheckOptions& opts, const std::string& out_path);

}  // namespace vqag
