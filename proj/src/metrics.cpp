#include "thinsec/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "thinsec/errors.hpp"

namespace thinsec {

MetricsReport compute_metrics(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw DimensionError("truth and prediction counts differ");
  if (num_classes < 1) throw ConfigError("metrics need at least one class");
  MetricsReport r;
  r.num_classes = num_classes;
  const auto K = static_cast<std::size_t>(num_classes);
  r.confusion.assign(K, std::vector<std::int64_t>(K, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw IndexError("class index out of range in metrics input");
    }
    ++r.confusion[truth[i]][predicted[i]];
  }
  r.total = static_cast<std::int64_t>(truth.size());
  std::int64_t trace = 0;
  r.precision.assign(K, 0.0);
  r.recall.assign(K, 0.0);
  r.f1.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    trace += r.confusion[k][k];
    std::int64_t row = 0, col = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row += r.confusion[k][j];
      col += r.confusion[j][k];
    }
    const auto tp = static_cast<double>(r.confusion[k][k]);
    r.precision[k] = col ? tp / static_cast<double>(col) : 0.0;
    r.recall[k] = row ? tp / static_cast<double>(row) : 0.0;
    const double s = r.precision[k] + r.recall[k];
    r.f1[k] = s > 0.0 ? 2.0 * r.precision[k] * r.recall[k] / s : 0.0;
    r.macro_precision += r.precision[k];
    r.macro_recall += r.recall[k];
    r.macro_f1 += r.f1[k];
  }
  r.accuracy = r.total ? static_cast<double>(trace) / static_cast<double>(r.total) : 0.0;
  r.macro_precision /= static_cast<double>(K);
  r.macro_recall /= static_cast<double>(K);
  r.macro_f1 /= static_cast<double>(K);
  return r;
}

int argmax(std::span<const float> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  for (double v : values) r.mean += v;
  r.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

std::string format_mean_std(const MeanStd& ms, int digits) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", digits, ms.mean, digits, ms.std);
  return buf;
}

SeedAggregate aggregate_seeds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ConfigError("no runs to aggregate");
  SeedAggregate agg;
  agg.runs = reports.size();
  agg.single_run = reports.size() == 1;
  auto column = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(100.0 * get(r));
    return mean_std(v);
  };
  agg.rows.push_back({"accuracy", column([](const MetricsReport& r) { return r.accuracy; })});
  agg.rows.push_back({"macro_precision", column([](const MetricsReport& r) { return r.macro_precision; })});
  agg.rows.push_back({"macro_recall", column([](const MetricsReport& r) { return r.macro_recall; })});
  agg.rows.push_back({"macro_f1", column([](const MetricsReport& r) { return r.macro_f1; })});
  return agg;
}

std::string format_number(double v) {
  char buf[40];
  for (int digits = 6; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& r, const std::vector<std::string>& names,
                       std::uint64_t seed) {
  out << "metric,class,value,run_seed\n";
  auto row = [&](const char* metric, const std::string& cls, double v) {
    out << metric << ',' << cls << ',' << format_number(v) << ',' << seed << '\n';
  };
  row("accuracy", "all", r.accuracy);
  row("macro_precision", "all", r.macro_precision);
  row("macro_recall", "all", r.macro_recall);
  row("macro_f1", "all", r.macro_f1);
  for (int k = 0; k < r.num_classes; ++k) {
    const std::string& cls = names.at(k);
    row("precision", cls, r.precision[k]);
    row("recall", cls, r.recall[k]);
    row("f1", cls, r.f1[k]);
    std::int64_t support = 0;
    for (auto c : r.confusion[k]) support += c;
    row("support", cls, static_cast<double>(support));
  }
}

void write_confusion_csv(std::ostream& out, const MetricsReport& r, const std::vector<std::string>& names) {
  out << "true\\predicted";
  for (int k = 0; k < r.num_classes; ++k) out << ',' << names.at(k);
  out << '\n';
  for (int i = 0; i < r.num_classes; ++i) {
    out << names.at(i);
    for (int j = 0; j < r.num_classes; ++j) out << ',' << r.confusion[i][j];
    out << '\n';
  }
}

void write_aggregate_csv(std::ostream& out, const SeedAggregate& agg) {
  out << "metric,mean,std,runs,formatted\n";
  for (const auto& row : agg.rows) {
    out << row.metric << ',' << format_number(row.value.mean) << ',' << format_number(row.value.std) << ','
        << agg.runs << ",\"" << format_mean_std(row.value) << (agg.single_run ? " (single run)" : "") << "\"\n";
  }
}

}  // namespace thinsec
