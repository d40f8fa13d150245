#include "hyspec/train/metrics.hpp"

#include <cstdio>

#include "hyspec/error.hpp"

namespace hyspec::train {

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

MetricsReport metrics_from_confusion(std::vector<std::int64_t> confusion, std::int64_t classes) {
  if (classes < 1) throw ConfigError("metrics: need at least one class");
  if (static_cast<std::int64_t>(confusion.size()) != classes * classes) {
    throw DimensionError("metrics: confusion matrix must hold " + std::to_string(classes * classes) + " entries");
  }
  MetricsReport r;
  r.classes = classes;
  r.confusion = std::move(confusion);
  const auto k = static_cast<std::size_t>(classes);
  std::vector<double> row(k, 0.0), col(k, 0.0);
  double diag = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto c = r.confusion[i * k + j];
      if (c < 0) throw NumericError("metrics: negative confusion count");
      row[i] += static_cast<double>(c);
      col[j] += static_cast<double>(c);
      r.total += c;
    }
    diag += static_cast<double>(r.confusion[i * k + i]);
  }
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  if (r.total == 0) return r;
  const double n = static_cast<double>(r.total);
  double pe = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double tp = static_cast<double>(r.confusion[i * k + i]);
    r.precision[i] = col[i] > 0.0 ? tp / col[i] : 0.0;
    r.recall[i] = row[i] > 0.0 ? tp / row[i] : 0.0;
    const double s = r.precision[i] + r.recall[i];
    r.f1[i] = s > 0.0 ? 2.0 * r.precision[i] * r.recall[i] / s : 0.0;
    r.aa += r.recall[i];
    pe += row[i] * col[i];
  }
  r.aa /= static_cast<double>(k);
  r.oa = diag / n;
  pe /= n * n;
  if (pe >= 1.0) {
    r.kappa = r.oa == 1.0 ? 1.0 : 0.0;
  } else {
    r.kappa = (r.oa - pe) / (1.0 - pe);
  }
  return r;
}

MetricsReport metrics_from_predictions(std::span<const std::int64_t> truth, std::span<const std::int64_t> pred,
                                       std::int64_t classes) {
  if (truth.size() != pred.size()) throw DimensionError("metrics: truth and prediction counts differ");
  std::vector<std::int64_t> conf(static_cast<std::size_t>(classes * classes), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || pred[i] < 0 || pred[i] >= classes) {
      throw IndexError("metrics: class index out of range [0, " + std::to_string(classes) + ")");
    }
    ++conf[static_cast<std::size_t>(truth[i] * classes + pred[i])];
  }
  return metrics_from_confusion(std::move(conf), classes);
}

std::string MetricsReport::to_csv() const {
  std::string out = "metric,value\n";
  out += "oa," + format_g9(oa) + "\n";
  out += "aa," + format_g9(aa) + "\n";
  out += "kappa," + format_g9(kappa) + "\n";
  out += "total," + std::to_string(total) + "\n";
  for (std::size_t i = 0; i < precision.size(); ++i) {
    const std::string c = std::to_string(i + 1);
    out += "precision_" + c + "," + format_g9(precision[i]) + "\n";
    out += "recall_" + c + "," + format_g9(recall[i]) + "\n";
    out += "f1_" + c + "," + format_g9(f1[i]) + "\n";
  }
  return out;
}

}  // namespace hyspec::train
