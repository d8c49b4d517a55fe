#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psmlc/error.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

/// Ternary label state. Missing is a distinct state, never 0 or 1.
enum class LabelValue : std::int8_t { Negative = 0, Positive = 1, Missing = -1 };

inline char to_token(LabelValue v) {
  switch (v) {
    case LabelValue::Positive: return '1';
    case LabelValue::Negative: return '0';
    case LabelValue::Missing: return '?';
  }
  return '?';
}

inline LabelValue label_from_token(std::string_view token) {
  if (token == "1") return LabelValue::Positive;
  if (token == "0") return LabelValue::Negative;
  if (token == "?") return LabelValue::Missing;
  throw InputError("unknown label token '" + std::string(token) + "'");
}

/// N x K grid of ternary labels.
class PartialLabelMatrix {
 public:
  PartialLabelMatrix() = default;

  PartialLabelMatrix(std::size_t rows, std::size_t cols, LabelValue fill = LabelValue::Missing)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  PartialLabelMatrix(std::size_t rows, std::size_t cols, std::vector<LabelValue> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) throw InputError("label matrix size mismatch");
  }

  /// Rows written as token strings, e.g. {"1?0?", "11??"}.
  static PartialLabelMatrix from_rows(std::initializer_list<std::string_view> rows) {
    PartialLabelMatrix m;
    for (auto r : rows) {
      if (m.rows_ == 0) m.cols_ = r.size();
      if (r.size() != m.cols_) throw InputError("ragged label rows");
      for (char c : r) m.values_.push_back(label_from_token(std::string_view(&c, 1)));
      ++m.rows_;
    }
    return m;
  }

  /// Inverse of (pme_fill, mask_of): masked-out entries become Missing.
  static PartialLabelMatrix from_dense(const Tensor& filled, const Tensor& mask) {
    require_same_shape(filled, mask, "from_dense");
    PartialLabelMatrix m(filled.rows(), filled.cols());
    for (std::size_t i = 0; i < filled.size(); ++i) {
      if (mask[i] == 0.0) continue;
      if (filled[i] == 1.0) {
        m.values_[i] = LabelValue::Positive;
      } else if (filled[i] == 0.0) {
        m.values_[i] = LabelValue::Negative;
      } else {
        throw InputError("from_dense: labeled entry is not binary");
      }
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  LabelValue operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  LabelValue& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

  std::span<const LabelValue> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  const std::vector<LabelValue>& values() const noexcept { return values_; }

  bool is_labeled(std::size_t r, std::size_t c) const {
    return (*this)(r, c) != LabelValue::Missing;
  }

  bool fully_labeled() const {
    for (auto v : values_) {
      if (v == LabelValue::Missing) return false;
    }
    return true;
  }

  PartialLabelMatrix gather_rows(std::span<const std::size_t> indices) const {
    PartialLabelMatrix m(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), m.values_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return m;
  }

  PartialLabelMatrix slice_rows(std::size_t begin, std::size_t count) const {
    std::vector<LabelValue> v(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                              values_.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols_));
    return PartialLabelMatrix(count, cols_, std::move(v));
  }

  friend bool operator==(const PartialLabelMatrix&, const PartialLabelMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<LabelValue> values_;
};

/// Maximum-entropy fill: Positive -> 1, Negative -> 0, Missing -> 0.5.
inline Tensor pme_fill(const PartialLabelMatrix& labels) {
  Tensor out = Tensor::matrix(labels.rows(), labels.cols());
  const auto& v = labels.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] == LabelValue::Positive ? 1.0 : v[i] == LabelValue::Negative ? 0.0 : 0.5;
  }
  return out;
}

/// 1 where the entry is labeled, 0 where it is Missing.
inline Tensor mask_of(const PartialLabelMatrix& labels) {
  Tensor out = Tensor::matrix(labels.rows(), labels.cols());
  const auto& v = labels.values();
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] == LabelValue::Missing ? 0.0 : 1.0;
  return out;
}

/// Per-class loss weights balancing labeled positives against negatives.
struct ClassWeights {
  std::vector<double> positive;  // w+ = n- / (n+ + n-)
  std::vector<double> negative;  // w- = n+ / (n+ + n-)
  std::vector<std::size_t> n_positive;
  std::vector<std::size_t> n_negative;

  std::size_t size() const noexcept { return positive.size(); }

  /// w+ = w- = 1 for every class.
  static ClassWeights uniform(std::size_t k) {
    return ClassWeights{std::vector<double>(k, 1.0), std::vector<double>(k, 1.0),
                        std::vector<std::size_t>(k, 0), std::vector<std::size_t>(k, 0)};
  }
};

struct ClassStats {
  std::size_t labeled = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t missing = 0;

  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

inline std::vector<ClassStats> label_statistics(const PartialLabelMatrix& labels) {
  std::vector<ClassStats> stats(labels.cols());
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    for (std::size_t k = 0; k < labels.cols(); ++k) {
      switch (labels(r, k)) {
        case LabelValue::Positive: ++stats[k].positive; ++stats[k].labeled; break;
        case LabelValue::Negative: ++stats[k].negative; ++stats[k].labeled; break;
        case LabelValue::Missing: ++stats[k].missing; break;
      }
    }
  }
  return stats;
}

inline std::string class_label(std::size_t k, std::span<const std::string> names) {
  if (k < names.size()) return "class " + std::to_string(k) + " (" + names[k] + ")";
  return "class " + std::to_string(k);
}

/// Dataset-level class weights from the labeled entries only.
inline ClassWeights compute_class_weights(const PartialLabelMatrix& labels,
                                          std::span<const std::string> class_names = {}) {
  const auto stats = label_statistics(labels);
  ClassWeights w;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    const auto& s = stats[k];
    if (s.positive == 0) throw ValidationError(class_label(k, class_names) + ": no labeled positives");
    if (s.negative == 0) throw ValidationError(class_label(k, class_names) + ": no labeled negatives");
    const double total = static_cast<double>(s.positive + s.negative);
    w.positive.push_back(static_cast<double>(s.negative) / total);
    w.negative.push_back(static_cast<double>(s.positive) / total);
    w.n_positive.push_back(s.positive);
    w.n_negative.push_back(s.negative);
  }
  return w;
}

enum class Severity { error, warning };

struct Violation {
  enum class Kind { no_labeled_positives, no_labeled_negatives, unlabeled_sample, fully_labeled_sample };

  Kind kind;
  Severity severity;
  std::size_t index;  // class index or row index depending on kind
  std::string message;
};

struct ValidationOptions {
  // Require every row to carry at least one Missing entry.
  bool require_partial_rows = false;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const {
    for (const auto& v : violations) {
      if (v.severity == Severity::error) return false;
    }
    return true;
  }

  std::size_t count(Violation::Kind kind) const {
    std::size_t n = 0;
    for (const auto& v : violations) n += v.kind == kind;
    return n;
  }
};

/// Checks per-class pos/neg presence among labeled entries and per-row
/// coverage. All-missing rows are always reported as warnings; fully
/// labeled rows are errors only under require_partial_rows.
inline ValidationReport validate_partial_dataset(const PartialLabelMatrix& labels,
                                                 ValidationOptions options = {},
                                                 std::span<const std::string> class_names = {}) {
  ValidationReport report;
  const auto stats = label_statistics(labels);
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (stats[k].positive == 0) {
      report.violations.push_back({Violation::Kind::no_labeled_positives, Severity::error, k,
                                   class_label(k, class_names) + ": no labeled positives"});
    }
    if (stats[k].negative == 0) {
      report.violations.push_back({Violation::Kind::no_labeled_negatives, Severity::error, k,
                                   class_label(k, class_names) + ": no labeled negatives"});
    }
  }
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    std::size_t missing = 0;
    for (auto v : labels.row(r)) missing += v == LabelValue::Missing;
    if (labels.cols() > 0 && missing == labels.cols()) {
      report.violations.push_back({Violation::Kind::unlabeled_sample, Severity::warning, r,
                                   "row " + std::to_string(r) + ": unlabeled sample"});
    } else if (options.require_partial_rows && missing == 0) {
      report.violations.push_back({Violation::Kind::fully_labeled_sample, Severity::error, r,
                                   "row " + std::to_string(r) + ": fully labeled sample"});
    }
  }
  return report;
}

}  // namespace psmlc
