#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "thinsec/config.hpp"
#include "thinsec/corpus.hpp"

namespace thinsec {

// <outdir>/<name>/{config.resolved, checkpoints/, metrics/, explain/}
struct RunPaths {
  std::string root;
  std::string checkpoints;
  std::string metrics;
  std::string explain;
};
// Creates the tree and writes config.resolved.
RunPaths prepare_run(const RunConfig& config);

// Applies `threads` / `deterministic` to the OpenMP runtime.
void apply_threading(const RunConfig& config);

// Generated or scanned corpus, split and with normalization stats set.
Corpus load_corpus(const RunConfig& config, std::ostream& log);

// Fresh model for `num_classes` honoring model.init / model.policy.
Model initial_model(const RunConfig& config, std::int64_t num_classes, std::uint64_t seed, std::ostream& log);

struct SynthOutputs {
  std::string corpus_dir;
  std::string manifest;  // path,class,sample_id,polarization,magnification,mask
  std::size_t images = 0;
};
SynthOutputs cmd_synth(const RunConfig& config, std::ostream& log);

struct TrainOutputs {
  std::vector<std::string> checkpoints;  // checkpoints/seed<N>.flck
  std::vector<std::string> metrics;      // metrics/seed<N>_metrics.csv (empty test split: none)
  std::string aggregate;                 // metrics/aggregate.csv
};
// One training per entry of `seeds`.
TrainOutputs cmd_train(const RunConfig& config, std::ostream& log);

struct XvalOutputs {
  std::string grid_csv;     // lr,weight_decay,epochs,fold_1..fold_k,mean
  std::string best_config;  // key=value fragment
  int trainings = 0;
};
XvalOutputs cmd_xval(const RunConfig& config, std::ostream& log);

struct EvalOutputs {
  std::string metrics;
  std::string confusion;
  std::string misclassified;
  std::string consistency;
  double accuracy = 0.0;
};
EvalOutputs cmd_eval(const RunConfig& config, std::ostream& log);

struct ExplainOutputs {
  std::vector<std::string> images;
  std::string pointing_csv;  // stem,method,hit; empty without masks
  std::string rotation_csv;  // stem,method,stability,class_invariant; rotation mode only
  double pointing_score = 0.0;
};
ExplainOutputs cmd_explain(const RunConfig& config, std::ostream& log);

// Dispatch by name (synth | train | xval | eval | explain).
void run_command(const std::string& name, const RunConfig& config, std::ostream& log);

// Process exit code for an exception escaping a command: 2 config/spec,
// 3 data, 4 numeric abort, 5 unsupported architecture, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace thinsec
