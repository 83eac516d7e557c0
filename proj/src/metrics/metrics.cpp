#include "fedshot/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fedshot {

ConfusionMatrix::ConfusionMatrix(std::vector<int> labels) : labels_(std::move(labels)) {
  std::sort(labels_.begin(), labels_.end());
  labels_.erase(std::unique(labels_.begin(), labels_.end()), labels_.end());
  if (labels_.empty()) throw EmptyInput("confusion matrix needs at least one label");
  counts_.assign(labels_.size() * labels_.size(), 0);
}

size_t ConfusionMatrix::index_of(int label) const {
  auto it = std::lower_bound(labels_.begin(), labels_.end(), label);
  if (it == labels_.end() || *it != label)
    throw UnknownLabel("label " + std::to_string(label) + " not in confusion matrix");
  return static_cast<size_t>(it - labels_.begin());
}

void ConfusionMatrix::add(int true_label, int predicted_label, int64_t count) {
  counts_[index_of(true_label) * labels_.size() + index_of(predicted_label)] += count;
}

int64_t ConfusionMatrix::at(int true_label, int predicted_label) const {
  return counts_[index_of(true_label) * labels_.size() + index_of(predicted_label)];
}

int64_t ConfusionMatrix::row_sum(int true_label) const {
  const size_t r = index_of(true_label);
  int64_t s = 0;
  for (size_t c = 0; c < labels_.size(); ++c) s += counts_[r * labels_.size() + c];
  return s;
}

int64_t ConfusionMatrix::col_sum(int predicted_label) const {
  const size_t c = index_of(predicted_label);
  int64_t s = 0;
  for (size_t r = 0; r < labels_.size(); ++r) s += counts_[r * labels_.size() + c];
  return s;
}

std::map<int, double> f1_per_class(const ConfusionMatrix& cm) {
  std::map<int, double> out;
  for (int label : cm.labels()) {
    const int64_t tp = cm.at(label, label);
    const int64_t pred = cm.col_sum(label);
    const int64_t actual = cm.row_sum(label);
    const double precision = pred > 0 ? static_cast<double>(tp) / pred : 0.0;
    const double recall = actual > 0 ? static_cast<double>(tp) / actual : 0.0;
    out[label] =
        precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return out;
}

SummaryStat summarize(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInput("summarize: no values");
  SummaryStat s;
  s.count = static_cast<int>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= values.size();
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / values.size());
  return s;
}

std::string format_mean_std(const SummaryStat& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", s.mean, s.stddev);
  return buf;
}

std::string render_table(const MetricSummary& summary) {
  std::ostringstream os;
  os << "Setting: " << summary.setting;
  if (!summary.fold_id.empty()) os << "   Fold: " << summary.fold_id;
  os << "\n";
  size_t width = 5;
  for (const auto& row : summary.per_label) width = std::max(width, row.label.size());
  os << std::string(width + 2, '-') << "----------------------\n";
  for (const auto& row : summary.per_label) {
    os << row.label << std::string(width - row.label.size() + 2, ' ')
       << format_mean_std(row.f1) << "  (" << row.f1.count << " episodes)\n";
  }
  return os.str();
}

}  // namespace fedshot
