#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "thinsec/augment.hpp"
#include "thinsec/corpus.hpp"
#include "thinsec/metrics.hpp"
#include "thinsec/model.hpp"
#include "thinsec/optim.hpp"

namespace thinsec {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 20;
  AdamWConfig adamw;
  SchedulerConfig scheduler{SchedulerKind::plateau};
  // Quantity the plateau scheduler watches: train_loss (default) or
  // train_error (1 - train accuracy). Test accuracy is never used.
  std::string plateau_metric = "train_loss";
  std::uint64_t seed = 1;
  AugmentPolicy augment;
  // Record test accuracy after every epoch (visualization only).
  bool monitor_test = true;
  int eval_batch_size = 32;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_acc = 0.0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();  // NaN when not monitored
  double lr = 0.0;  // rate used during this epoch
  double loss = 0.0;  // mean train cross-entropy over the epoch
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains on `train_idx` (corpus indices); `test_idx` only feeds the history.
// The model's own trainable mask decides which parameters move; batch norm in
// frozen layers stays in eval mode.
TrainResult train(Model model, const Corpus& corpus, const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& test_idx, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
// Uses the corpus split tags.
TrainResult train(Model model, const Corpus& corpus, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Predictions {
  std::vector<std::size_t> indices;
  std::vector<int> truth;
  std::vector<int> predicted;
};

// Eval mode, no augmentation; argmax with ties to the lowest class index.
Predictions predict(const Model& model, const Corpus& corpus, const std::vector<std::size_t>& indices,
                    int batch_size = 32);
MetricsReport evaluate(const Model& model, const Corpus& corpus, const std::vector<std::size_t>& indices,
                       int batch_size = 32);
MetricsReport evaluate(const Model& model, const Corpus& corpus, Split split = Split::test, int batch_size = 32);

struct GridPoint {
  double lr = 3e-4;
  double weight_decay = 3e-4;
  std::string optimizer = "adamw";
  int epochs = -1;  // -1: use the base config
};

struct GridResult {
  GridPoint point;
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

struct CrossValidation {
  std::vector<GridResult> rows;
  std::size_t best = 0;
  int trainings = 0;
};

using ModelFactory = std::function<Model()>;

// For each grid point trains on k-1 folds of the train split and validates on
// the remaining one. Best = highest mean validation accuracy; ties go to the
// lower learning rate, then the lower weight decay.
CrossValidation cross_validate(const ModelFactory& factory, const Corpus& corpus, int k,
                               const std::vector<GridPoint>& grid, const TrainConfig& base,
                               const std::function<void(const std::string&)>& log = {});

struct Misclassification {
  std::size_t index = 0;
  std::string sample_id;
  std::string stem;
};

struct ErrorGroup {
  int truth = 0;
  int predicted = 0;
  std::vector<Misclassification> samples;
};

// How many images of one section share the same error.
struct SectionConsistency {
  std::string sample_id;
  int truth = 0;
  int predicted = 0;
  int errors = 0;
  int images = 0;  // images of the section that were evaluated
};

struct MisclassificationReport {
  std::vector<ErrorGroup> groups;               // ordered by (truth, predicted)
  std::vector<SectionConsistency> consistency;  // most consistent first
  bool empty() const { return groups.empty(); }
};

MisclassificationReport misclassification_report(const Corpus& corpus, const Predictions& predictions);
MisclassificationReport misclassification_report(const Model& model, const Corpus& corpus,
                                                 const std::vector<std::size_t>& indices);

// true,predicted,sample_id,stem
void write_misclassification_csv(std::ostream& out, const MisclassificationReport& report,
                                 const std::vector<std::string>& class_names);
// sample_id,true,predicted,errors,images
void write_consistency_csv(std::ostream& out, const MisclassificationReport& report,
                           const std::vector<std::string>& class_names);
// epoch,train_acc,test_acc,lr,loss
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace thinsec
