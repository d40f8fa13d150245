#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hyspec::train {

// Confusion-matrix summary. Rows are truth, columns predictions; classes
// are 0-based here and 1-based in the CSV keys.
struct MetricsReport {
  std::int64_t classes = 0;
  std::int64_t total = 0;
  std::vector<std::int64_t> confusion;  // classes x classes, row-major
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> precision, recall, f1;

  std::int64_t count(std::int64_t truth, std::int64_t pred) const {
    return confusion[static_cast<std::size_t>(truth * classes + pred)];
  }
  // "metric,value" lines, values printed with %.9g.
  std::string to_csv() const;
};

MetricsReport metrics_from_confusion(std::vector<std::int64_t> confusion, std::int64_t classes);
MetricsReport metrics_from_predictions(std::span<const std::int64_t> truth, std::span<const std::int64_t> pred,
                                       std::int64_t classes);

std::string format_g9(double v);

}  // namespace hyspec::train
