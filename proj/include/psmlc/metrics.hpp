#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "psmlc/error.hpp"
#include "psmlc/labels.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassMetrics {
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double mean_f1 = 0.0;
  double threshold = 0.5;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;

  std::vector<double> f1_values() const {
    std::vector<double> f;
    for (const auto& c : per_class) f.push_back(c.f1);
    return f;
  }
};

/// Per-class confusion counts; a prediction is positive iff p >= threshold.
/// Missing labels are left out of every count.
inline std::vector<ConfusionCounts> confusion(const Tensor& probabilities, const PartialLabelMatrix& labels,
                                              double threshold = 0.5) {
  if (probabilities.rows() != labels.rows() || probabilities.cols() != labels.cols()) {
    throw ConfigError("confusion: probabilities and labels differ in shape");
  }
  std::vector<ConfusionCounts> counts(labels.cols());
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    for (std::size_t k = 0; k < labels.cols(); ++k) {
      const LabelValue y = labels(r, k);
      if (y == LabelValue::Missing) continue;
      const bool predicted = probabilities(r, k) >= threshold;
      auto& c = counts[k];
      if (y == LabelValue::Positive) {
        predicted ? ++c.tp : ++c.fn;
      } else {
        predicted ? ++c.fp : ++c.tn;
      }
    }
  }
  return counts;
}

/// Precision, recall and their harmonic mean; every 0/0 is taken as 0.
inline PrecisionRecallF1 f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrecisionRecallF1 out;
  if (tp + fp > 0) out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) out.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

inline double mean_f1(std::span<const double> per_class_f1) {
  if (per_class_f1.empty()) throw ConfigError("mean_f1 needs at least one class");
  return std::accumulate(per_class_f1.begin(), per_class_f1.end(), 0.0) /
         static_cast<double>(per_class_f1.size());
}

inline double mean_f1(const MetricsReport& report) {
  const auto f = report.f1_values();
  return mean_f1(f);
}

inline MetricsReport evaluate(const Tensor& probabilities, const PartialLabelMatrix& labels, double threshold = 0.5) {
  MetricsReport report;
  report.threshold = threshold;
  for (const auto& c : confusion(probabilities, labels, threshold)) {
    const auto prf = f1_from_counts(c.tp, c.fp, c.fn);
    report.per_class.push_back({c, prf.precision, prf.recall, prf.f1});
  }
  report.mean_f1 = mean_f1(report);
  return report;
}

}  // namespace psmlc
