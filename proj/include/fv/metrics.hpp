#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fv/error.hpp"
#include "fv/tensor.hpp"
#include "fv/train.hpp"

// Classification metrics: confusion matrix, per-class and macro-averaged
// precision/recall/F1/TPR/FPR, the generalized multiclass Matthews
// correlation, micro-average ROC/AUC, and CSV/SVG report writers.

namespace fv {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // row-major [true][predicted]

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k)
      : num_classes(k),
        counts(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0) {
    if (k < 1) throw ConfigError("confusion matrix needs >= 1 class");
  }

  std::int64_t& at(int t, int p) {
    return counts[static_cast<std::size_t>(t) * num_classes + p];
  }
  std::int64_t at(int t, int p) const {
    return counts[static_cast<std::size_t>(t) * num_classes + p];
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                 const std::vector<int>& labels, int k);

// A metric value that may be undefined (zero denominator). Undefined values
// are reported as 0 with the flag set — never NaN.
struct MetricValue {
  double value = 0.0;
  bool undefined = false;
};

struct ClassMetrics {
  MetricValue precision, recall, f1, tpr, fpr;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  // Macro average over classes; undefined contributors count as 0 and set
  // the flag on the averaged value.
  ClassMetrics macro;
  MetricValue mcc;  // generalized multiclass correlation over the full matrix
};

MetricsReport classification_metrics(const ConfusionMatrix& cm);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0)->(1,1)
  double auc = 0.0;
};

// Pools every (sample, class) pair into one binary problem scored by the
// predicted probability, sweeps the distinct-score thresholds, and
// integrates by the trapezoid rule.
RocCurve roc_auc_micro(const std::vector<Tensor>& scores,
                       const std::vector<int>& labels);

// --- report files -----------------------------------------------------------

// `metric,value,flag` rows; a leading comment states the averaging scheme.
void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const std::vector<std::string>& class_names = {});

// Grid with a `true\pred` corner cell and class headers on both axes.
void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names = {});

void write_roc_csv(const std::string& path, const RocCurve& curve);

// Minimal static line charts.
struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};
std::string line_chart_svg(const std::string& title,
                           const std::vector<ChartSeries>& series);
void write_roc_svg(const std::string& path, const RocCurve& curve);
void write_loss_svg(const std::string& path,
                    const std::vector<EpochStats>& history);

}  // namespace fv
