#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedshot/errors.hpp"

namespace fedshot {

// Confusion counts over a fixed label set; rows are true labels, columns
// predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<int> labels);

  void add(int true_label, int predicted_label, int64_t count = 1);
  int64_t at(int true_label, int predicted_label) const;
  const std::vector<int>& labels() const { return labels_; }
  int64_t row_sum(int true_label) const;
  int64_t col_sum(int predicted_label) const;

 private:
  size_t index_of(int label) const;
  std::vector<int> labels_;
  std::vector<int64_t> counts_;
};

// Per-class F1 = 2PR/(P+R); degenerate precision/recall count as zero.
std::map<int, double> f1_per_class(const ConfusionMatrix& cm);

struct SummaryStat {
  double mean = 0.0;
  double stddev = 0.0;  // population
  int count = 0;
};

SummaryStat summarize(const std::vector<double>& values);

// "0.87 ± 0.02" rendering used in the results table.
std::string format_mean_std(const SummaryStat& s);

struct MetricSummary {
  std::string fold_id;
  std::string setting;  // e.g. "2-way 2-shot"
  struct PerLabel {
    std::string label;
    SummaryStat f1;
  };
  std::vector<PerLabel> per_label;
};

std::string render_table(const MetricSummary& summary);

}  // namespace fedshot
