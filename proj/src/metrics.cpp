#include "fv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fv/csv.hpp"
#include "fv/image.hpp"  // write_file_atomic

namespace fv {

ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                 const std::vector<int>& labels, int k) {
  if (preds.size() != labels.size())
    throw ContractError("confusion_matrix: " + std::to_string(preds.size()) +
                        " predictions vs " + std::to_string(labels.size()) +
                        " labels");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= k || labels[i] < 0 || labels[i] >= k)
      throw ContractError("confusion_matrix: class pair (" +
                          std::to_string(labels[i]) + "," +
                          std::to_string(preds[i]) + ") outside [0," +
                          std::to_string(k) + ") at sample " +
                          std::to_string(i));
    cm.at(labels[i], preds[i]) += 1;
  }
  return cm;
}

namespace {

MetricValue ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

MetricValue macro_mean(const std::vector<MetricValue>& vs) {
  MetricValue out;
  for (const auto& v : vs) {
    out.value += v.value;
    out.undefined = out.undefined || v.undefined;
  }
  out.value /= static_cast<double>(vs.size());
  return out;
}

}  // namespace

MetricsReport classification_metrics(const ConfusionMatrix& cm) {
  const int k = cm.num_classes;
  const std::int64_t total = cm.total();
  if (total == 0)
    throw ContractError("classification_metrics: empty confusion matrix");

  MetricsReport report;
  std::int64_t trace = 0;
  for (int c = 0; c < k; ++c) trace += cm.at(c, c);
  report.accuracy = static_cast<double>(trace) / static_cast<double>(total);

  std::vector<MetricValue> precisions, recalls, f1s, tprs, fprs;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = cm.at(c, c), fn = 0, fp = 0;
    for (int j = 0; j < k; ++j) {
      if (j == c) continue;
      fn += cm.at(c, j);
      fp += cm.at(j, c);
    }
    const std::int64_t tn = total - tp - fn - fp;

    ClassMetrics m;
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.tpr = m.recall;  // identical by definition in one-vs-rest
    m.fpr = ratio(fp, fp + tn);
    if (m.precision.undefined || m.recall.undefined ||
        m.precision.value + m.recall.value == 0.0) {
      m.f1 = {0.0, true};
    } else {
      m.f1 = {2.0 * m.precision.value * m.recall.value /
                  (m.precision.value + m.recall.value),
              false};
    }
    report.per_class.push_back(m);
    precisions.push_back(m.precision);
    recalls.push_back(m.recall);
    f1s.push_back(m.f1);
    tprs.push_back(m.tpr);
    fprs.push_back(m.fpr);
  }
  report.macro.precision = macro_mean(precisions);
  report.macro.recall = macro_mean(recalls);
  report.macro.f1 = macro_mean(f1s);
  report.macro.tpr = macro_mean(tprs);
  report.macro.fpr = macro_mean(fprs);

  // Generalized multiclass correlation over the full matrix.
  double sum_tk_pk = 0.0, sum_pk2 = 0.0, sum_tk2 = 0.0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tk = 0, pk = 0;
    for (int j = 0; j < k; ++j) {
      tk += cm.at(c, j);
      pk += cm.at(j, c);
    }
    sum_tk_pk += static_cast<double>(tk) * static_cast<double>(pk);
    sum_pk2 += static_cast<double>(pk) * static_cast<double>(pk);
    sum_tk2 += static_cast<double>(tk) * static_cast<double>(tk);
  }
  const double s = static_cast<double>(total);
  const double numerator = static_cast<double>(trace) * s - sum_tk_pk;
  const double den_sq = (s * s - sum_pk2) * (s * s - sum_tk2);
  if (den_sq <= 0.0) {
    report.mcc = {0.0, true};
  } else {
    report.mcc = {numerator / std::sqrt(den_sq), false};
  }
  return report;
}

RocCurve roc_auc_micro(const std::vector<Tensor>& scores,
                       const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size())
    throw ContractError("roc_auc_micro: need equal, nonempty scores/labels");
  const std::int64_t k = scores[0].numel();
  if (k < 2) throw ContractError("roc_auc_micro: need >= 2 classes");

  // Flatten into (score, is_positive) pairs.
  std::vector<std::pair<double, bool>> flat;
  flat.reserve(scores.size() * static_cast<std::size_t>(k));
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].numel() != k)
      throw ContractError("roc_auc_micro: score vector " + std::to_string(i) +
                          " has " + std::to_string(scores[i].numel()) +
                          " classes, expected " + std::to_string(k));
    if (labels[i] < 0 || labels[i] >= k)
      throw ContractError("roc_auc_micro: label " + std::to_string(labels[i]) +
                          " outside [0," + std::to_string(k) + ")");
    for (std::int64_t c = 0; c < k; ++c) {
      const double s = scores[i][c];
      if (!std::isfinite(s))
        throw NumericError("roc_auc_micro: non-finite score at sample " +
                           std::to_string(i));
      const bool pos = (labels[i] == c);
      positives += pos ? 1 : 0;
      flat.emplace_back(s, pos);
    }
  }
  const std::int64_t negatives =
      static_cast<std::int64_t>(flat.size()) - positives;

  std::sort(flat.begin(), flat.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < flat.size()) {
    const double threshold = flat[i].first;
    while (i < flat.size() && flat[i].first == threshold) {
      if (flat[i].second)
        ++tp;
      else
        ++fp;
      ++i;
    }
    curve.points.emplace_back(
        static_cast<double>(fp) / static_cast<double>(negatives),
        static_cast<double>(tp) / static_cast<double>(positives));
  }

  double auc = 0.0;
  for (std::size_t p = 1; p < curve.points.size(); ++p) {
    const auto& [x0, y0] = curve.points[p - 1];
    const auto& [x1, y1] = curve.points[p];
    auc += (x1 - x0) * (y0 + y1) * 0.5;
  }
  curve.auc = auc;
  return curve;
}

namespace {

std::string class_label(const std::vector<std::string>& names, int c) {
  if (c < static_cast<int>(names.size())) return names[static_cast<std::size_t>(c)];
  return "class" + std::to_string(c);
}

std::string flag_str(const MetricValue& v) {
  return v.undefined ? "undefined" : "";
}

void metric_row(std::string& out, const std::string& name,
                const MetricValue& v) {
  out += name + "," + format_g(v.value) + "," + flag_str(v) + "\n";
}

}  // namespace

void write_metrics_csv(const std::string& path, const MetricsReport& report,
                       const std::vector<std::string>& class_names) {
  const int k = static_cast<int>(report.per_class.size());
  std::string out = "# precision/recall/f1/tpr/fpr are macro-averaged over " +
                    std::to_string(k) +
                    " classes; undefined (zero-denominator) metrics are "
                    "reported as 0 with flag=undefined\n";
  out += "metric,value,flag\n";
  out += "accuracy," + format_g(report.accuracy) + ",\n";
  metric_row(out, "precision", report.macro.precision);
  metric_row(out, "recall", report.macro.recall);
  metric_row(out, "f1", report.macro.f1);
  metric_row(out, "tpr", report.macro.tpr);
  metric_row(out, "fpr", report.macro.fpr);
  metric_row(out, "mcc", report.mcc);
  for (int c = 0; c < k; ++c) {
    const auto& m = report.per_class[static_cast<std::size_t>(c)];
    const std::string suffix = "_" + class_label(class_names, c);
    metric_row(out, "precision" + suffix, m.precision);
    metric_row(out, "recall" + suffix, m.recall);
    metric_row(out, "f1" + suffix, m.f1);
    metric_row(out, "tpr" + suffix, m.tpr);
    metric_row(out, "fpr" + suffix, m.fpr);
  }
  write_file_atomic(path, out);
}

void write_confusion_csv(const std::string& path, const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names) {
  std::string out = "true\\pred";
  for (int p = 0; p < cm.num_classes; ++p)
    out += "," + class_label(class_names, p);
  out += "\n";
  for (int t = 0; t < cm.num_classes; ++t) {
    out += class_label(class_names, t);
    for (int p = 0; p < cm.num_classes; ++p)
      out += "," + std::to_string(cm.at(t, p));
    out += "\n";
  }
  write_file_atomic(path, out);
}

void write_roc_csv(const std::string& path, const RocCurve& curve) {
  std::string out = "fpr,tpr\n";
  for (const auto& [fpr, tpr] : curve.points)
    out += format_g(fpr) + "," + format_g(tpr) + "\n";
  write_file_atomic(path, out);
}

std::string line_chart_svg(const std::string& title,
                           const std::vector<ChartSeries>& series) {
  constexpr double kW = 640, kH = 480;
  constexpr double kLeft = 60, kRight = 620, kTop = 40, kBottom = 440;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax - xmin <= 0) xmax = xmin + 1;
  if (ymax - ymin <= 0) ymax = ymin + 1;

  auto sx = [&](double x) {
    return kLeft + (x - xmin) / (xmax - xmin) * (kRight - kLeft);
  };
  auto sy = [&](double y) {
    return kBottom - (y - ymin) / (ymax - ymin) * (kBottom - kTop);
  };

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_g(kW) +
      "\" height=\"" + format_g(kH) + "\" viewBox=\"0 0 640 480\">\n";
  svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">" +
         title + "</text>\n";
  // axes
  svg += "<line x1=\"60\" y1=\"440\" x2=\"620\" y2=\"440\" "
         "stroke=\"black\"/>\n";
  svg += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"440\" stroke=\"black\"/>\n";
  auto tick = [&](double v, bool x_axis) {
    std::string t = "<text font-family=\"sans-serif\" font-size=\"11\" ";
    if (x_axis)
      t += "x=\"" + format_g(sx(v), 6) + "\" y=\"456\" text-anchor=\"middle\"";
    else
      t += "x=\"54\" y=\"" + format_g(sy(v) + 4, 6) +
           "\" text-anchor=\"end\"";
    t += ">" + format_g(v, 4) + "</text>\n";
    return t;
  };
  svg += tick(xmin, true) + tick(xmax, true);
  svg += tick(ymin, false) + tick(ymax, false);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = kColors[si % 4];
    std::string pts;
    for (const auto& [x, y] : series[si].points)
      pts += format_g(sx(x), 6) + "," + format_g(sy(y), 6) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    svg += "<text x=\"76\" y=\"" + format_g(kTop + 20 + 16 * static_cast<double>(si), 6) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" + color +
           "\">" + series[si].name + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_roc_svg(const std::string& path, const RocCurve& curve) {
  ChartSeries roc{"micro-average ROC (AUC " + format_g(curve.auc, 6) + ")",
                  curve.points};
  ChartSeries diag{"chance", {{0.0, 0.0}, {1.0, 1.0}}};
  write_file_atomic(path, line_chart_svg("ROC", {roc, diag}));
}

void write_loss_svg(const std::string& path,
                    const std::vector<EpochStats>& history) {
  ChartSeries train{"train loss", {}};
  ChartSeries test{"test loss", {}};
  for (std::size_t e = 0; e < history.size(); ++e) {
    train.points.emplace_back(static_cast<double>(e + 1),
                              history[e].train_loss);
    test.points.emplace_back(static_cast<double>(e + 1),
                             history[e].test_loss);
  }
  write_file_atomic(path, line_chart_svg("loss per epoch", {train, test}));
}

}  // namespace fv
