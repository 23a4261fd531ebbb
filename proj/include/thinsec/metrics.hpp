#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace thinsec {

struct MetricsReport {
  int num_classes = 0;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::int64_t total = 0;
  double accuracy = 0.0;
  // Per class; precision is 0 for a class never predicted, recall 0 for a
  // class absent from the truth, F1 0 when precision and recall are both 0.
  std::vector<double> precision, recall, f1;
  // Unweighted means over all classes.
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted, int num_classes);

// Index of the largest value; ties go to the lowest index.
int argmax(std::span<const float> values);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
  std::size_t n = 0;
};
MeanStd mean_std(std::span<const double> values);
// "mean ± std" with `digits` decimals.
std::string format_mean_std(const MeanStd& ms, int digits = 2);

struct SeedAggregate {
  struct Row {
    std::string metric;
    MeanStd value;  // in percent
  };
  std::vector<Row> rows;  // accuracy, macro_precision, macro_recall, macro_f1
  std::size_t runs = 0;
  bool single_run = false;  // std is reported as 0 but carries no information
};
SeedAggregate aggregate_seeds(const std::vector<MetricsReport>& reports);

// Shortest decimal that reads back to the same double.
std::string format_number(double v);

// metric,class,value,run_seed
void write_metrics_csv(std::ostream& out, const MetricsReport& report, const std::vector<std::string>& class_names,
                       std::uint64_t run_seed);
// Grid with class-name headers; rows are true classes, columns predictions.
void write_confusion_csv(std::ostream& out, const MetricsReport& report, const std::vector<std::string>& class_names);
// metric,mean,std,runs,formatted
void write_aggregate_csv(std::ostream& out, const SeedAggregate& agg);

}  // namespace thinsec
