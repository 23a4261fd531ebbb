#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "thinsec/model.hpp"
#include "thinsec/synth.hpp"
#include "thinsec/train.hpp"

namespace thinsec {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | dir
  std::string dir;                   // corpus root when source = dir
  double train_fraction = 0.8;
  std::uint64_t split_seed = 3;
  bool group_by_sample = false;
  std::string norm = "train";  // train (stats of the train split) | imagenet
};

struct SynthConfig {
  std::vector<std::string> classes{"calcite", "carbonate_b", "shell", "basalt"};
  int sections = 50;
  std::uint64_t seed = 11;
  int image_size = 224;
  std::vector<std::string> polarizations{"ppl", "xpl"};
  std::vector<std::string> magnifications{"2.5x"};
  std::string out;  // cmd_synth target; empty: <run dir>/corpus
};

struct ModelConfig {
  ModelSpec spec;               // num_classes is taken from the corpus
  std::string init = "scratch"; // scratch | checkpoint | import
  std::string init_path;
  TrainablePolicy policy = TrainablePolicy::full;
};

struct XvalConfig {
  int folds = 3;  // fold assignment and training both use the first entry of seeds
  std::vector<double> lrs{3e-4, 1e-4};
  std::vector<double> weight_decays{3e-4, 1e-4, 1e-5};
  int epochs = -1;  // -1: train.epochs
};

struct EvalConfig {
  std::string checkpoint;
  std::string split = "test";  // test | train | all
};

struct ExplainConfig {
  std::string checkpoint;
  std::string method = "guided_gradcam";
  std::vector<std::string> images;  // PNG paths; empty: the corpus split below
  std::string split = "test";
  std::string target = "predicted";  // predicted | true | <class index>
  std::vector<std::string> modes{"overlay"};
  double alpha = 0.5;
  double threshold = 0.5;
  std::string layer = "last";  // attention: last | all | <index>
  std::string head = "mean";   // attention: mean | all | <index>
  bool rotation = false;
  std::vector<double> angles{0, 30, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330};
  int limit = 0;  // 0: every image
};

struct RunConfig {
  std::string name = "run";
  std::string outdir = "runs";
  int threads = 0;  // 0: OpenMP default
  bool deterministic = false;
  std::vector<std::uint64_t> seeds{1};
  DataConfig data;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
  XvalConfig xval;
  EvalConfig eval;
  ExplainConfig explain;

  RunConfig();
  void validate() const;
  SynthSpec synth_spec() const;
  std::string run_dir() const;  // <outdir>/<name>
};

struct ConfigKey {
  std::string key;
  std::string help;
};
// Every accepted key, in the order the resolved config lists them.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for unknown keys and unparseable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
std::string get_setting(const RunConfig& config, const std::string& key);

// key=value lines; '#' starts a comment, blank lines are skipped. Errors name
// the line.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin = "config");
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Every key with its current value; parsing it back yields an equal config.
std::string resolved_config(const RunConfig& config);

}  // namespace thinsec
