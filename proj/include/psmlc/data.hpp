#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "psmlc/error.hpp"
#include "psmlc/labels.hpp"
#include "psmlc/rng.hpp"
#include "psmlc/tensor.hpp"

namespace psmlc {

/// Features and (possibly partial) labels of one sample set.
struct Dataset {
  Tensor features;  // N x D
  PartialLabelMatrix labels;
  std::vector<std::string> class_names;
  std::string provenance;

  std::size_t size() const { return labels.rows(); }
  std::size_t num_features() const { return features.cols(); }
  std::size_t num_classes() const { return labels.cols(); }

  void validate() const {
    if (features.rank() != 2) throw InputError("dataset features must be a matrix");
    if (features.rows() != labels.rows()) throw InputError("feature rows do not match label rows");
    if (class_names.size() != labels.cols()) throw InputError("class_names length does not match K");
  }

  Dataset slice(std::size_t begin, std::size_t count) const {
    return {features.slice_rows(begin, count), labels.slice_rows(begin, count), class_names, provenance};
  }

  Dataset with_labels(PartialLabelMatrix new_labels) const {
    return {features, std::move(new_labels), class_names, provenance};
  }
};

inline std::vector<std::string> default_class_names(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Linear-threshold multi-label generator settings.
struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t d = 16;
  std::size_t k = 4;
  double noise = 0.0;
  std::vector<double> positive_rates{0.3, 0.2, 0.15, 0.08};
  // Seed for the label planes; defaults to the generation seed.
  std::optional<std::uint64_t> plane_seed;
  std::vector<std::string> class_names;

  void validate() const {
    if (n == 0 || d == 0 || k == 0) throw ConfigError("synthetic spec: sizes must be positive");
    if (n < 2 * k) throw ConfigError("synthetic spec: need N >= 2K");
    if (positive_rates.size() != k) throw ConfigError("synthetic spec: need one positive rate per class");
    for (double r : positive_rates) {
      if (!(r > 0.0 && r < 1.0)) throw ConfigError("synthetic spec: positive rates must lie in (0, 1)");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("synthetic spec: noise must be >= 0");
    if (!class_names.empty() && class_names.size() != k) {
      throw ConfigError("synthetic spec: class_names length does not match K");
    }
  }
};

/// Fully labeled dataset: z ~ N(0, I), label k positive iff a_k . z > tau_k,
/// tau_k placed between order statistics so exactly round(rate_k * N)
/// samples are positive; features = z + noise * N(0, I).
///
/// For D > 1 each a_k is a unit vector with zero coordinate sum, so
/// subtracting a row's mean leaves a_k . z unchanged.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng plane_rng = Rng::stream(spec.plane_seed.value_or(seed), "planes");
  Rng latent_rng = Rng::stream(seed, "latent");
  Rng noise_rng = Rng::stream(seed, "noise");

  Tensor planes = Tensor::matrix(spec.k, spec.d);
  for (std::size_t c = 0; c < spec.k; ++c) {
    double mean = 0.0;
    for (double& a : planes.row(c)) {
      a = plane_rng.normal();
      mean += a;
    }
    mean = spec.d > 1 ? mean / static_cast<double>(spec.d) : 0.0;
    double norm = 0.0;
    for (double& a : planes.row(c)) {
      a -= mean;
      norm += a * a;
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw GenerationError("degenerate label plane for class " + std::to_string(c));
    for (double& a : planes.row(c)) a /= norm;
  }

  Tensor latent = Tensor::matrix(spec.n, spec.d);
  for (double& z : latent.data()) z = latent_rng.normal();

  PartialLabelMatrix labels(spec.n, spec.k, LabelValue::Negative);
  std::vector<double> scores(spec.n);
  for (std::size_t c = 0; c < spec.k; ++c) {
    auto a = planes.row(c);
    for (std::size_t i = 0; i < spec.n; ++i) {
      auto z = latent.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < spec.d; ++j) s += a[j] * z[j];
      scores[i] = s;
    }
    const auto m = static_cast<std::size_t>(std::llround(spec.positive_rates[c] * static_cast<double>(spec.n)));
    if (m == 0 || m >= spec.n) {
      throw GenerationError("positive rate for class " + std::to_string(c) + " is unachievable with N = " +
                            std::to_string(spec.n));
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (!(sorted[m - 1] > sorted[m])) {
      throw GenerationError("tied scores at the threshold for class " + std::to_string(c));
    }
    const double tau = 0.5 * (sorted[m - 1] + sorted[m]);
    for (std::size_t i = 0; i < spec.n; ++i) {
      if (scores[i] > tau) labels(i, c) = LabelValue::Positive;
    }
  }

  Tensor features = latent;
  if (spec.noise > 0.0) {
    for (double& x : features.data()) x += spec.noise * noise_rng.normal();
  }
  Dataset ds{std::move(features), std::move(labels),
             spec.class_names.empty() ? default_class_names(spec.k) : spec.class_names,
             "synthetic seed=" + std::to_string(seed)};
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing and splitting
// ---------------------------------------------------------------------------

/// Per-row standardisation with the population standard deviation.
/// Constant rows map to zeros; sigma is floored at 1e-8.
inline Tensor instance_normalize(const Tensor& features) {
  Tensor out = features;
  const std::size_t d = features.cols();
  if (d == 0) return out;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = out.row(r);
    if (std::all_of(row.begin(), row.end(), [&](double v) { return v == row[0]; })) {
      std::fill(row.begin(), row.end(), 0.0);
      continue;
    }
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double sigma = std::max(std::sqrt(var), 1e-8);
    for (double& v : row) v = (v - mean) / sigma;
  }
  return out;
}

/// Contiguous split: train = rows [0, n_train), test = [n_train, n_train + n_test).
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train, std::size_t n_test) {
  if (n_train + n_test > ds.size()) {
    throw InputError("split needs " + std::to_string(n_train + n_test) + " rows, dataset has " +
                     std::to_string(ds.size()));
  }
  return {ds.slice(0, n_train), ds.slice(n_train, n_test)};
}

// ---------------------------------------------------------------------------
// Partial-supervision simulators
// ---------------------------------------------------------------------------

inline constexpr int kPartitionAttempts = 8;

namespace detail {

inline void require_full(const PartialLabelMatrix& labels, const char* who) {
  if (!labels.fully_labeled()) throw InputError(std::string(who) + " needs fully labeled input");
}

inline bool has_pos_and_neg(const PartialLabelMatrix& labels) {
  for (const auto& s : label_statistics(labels)) {
    if (s.positive == 0 || s.negative == 0) return false;
  }
  return true;
}

}  // namespace detail

/// Shuffles rows, splits them into K near-equal subsets, and keeps only
/// class k's label in subset k. Retries with the next seed offset when a
/// subset lacks a positive or a negative for its class.
inline PartialLabelMatrix make_single_class_partition(const PartialLabelMatrix& full, std::uint64_t seed) {
  detail::require_full(full, "single-class partition");
  const std::size_t n = full.rows();
  const std::size_t k = full.cols();
  if (k == 0) throw InputError("single-class partition needs K >= 1");
  for (int attempt = 0; attempt < kPartitionAttempts; ++attempt) {
    Rng rng = Rng::stream(seed + static_cast<std::uint64_t>(attempt), "single_class_partition");
    const auto order = rng.permutation(n);
    PartialLabelMatrix out(n, k, LabelValue::Missing);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t count = n / k + (c < n % k ? 1 : 0);
      for (std::size_t i = 0; i < count; ++i, ++pos) out(order[pos], c) = full(order[pos], c);
    }
    if (detail::has_pos_and_neg(out)) return out;
  }
  throw PartitionError("single-class partition: no valid split after " + std::to_string(kPartitionAttempts) +
                       " attempts");
}

/// Keeps each entry independently with probability p, else marks it Missing.
inline PartialLabelMatrix make_bernoulli_partial(const PartialLabelMatrix& full, double p, std::uint64_t seed) {
  detail::require_full(full, "bernoulli partial");
  if (!(p > 0.0 && p <= 1.0)) throw InputError("bernoulli keep probability must lie in (0, 1]");
  for (int attempt = 0; attempt < kPartitionAttempts; ++attempt) {
    Rng rng = Rng::stream(seed + static_cast<std::uint64_t>(attempt), "bernoulli_partial");
    PartialLabelMatrix out = full;
    for (std::size_t r = 0; r < full.rows(); ++r) {
      for (std::size_t c = 0; c < full.cols(); ++c) {
        if (!rng.bernoulli(p)) out(r, c) = LabelValue::Missing;
      }
    }
    if (detail::has_pos_and_neg(out)) return out;
  }
  throw PartitionError("bernoulli partial: no valid mask after " + std::to_string(kPartitionAttempts) +
                       " attempts");
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  ds.validate();
  for (std::size_t j = 0; j < ds.num_features(); ++j) out << (j ? "," : "") << 'f' << j;
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    out << (ds.num_features() + k ? "," : "") << "label:" << ds.class_names[k];
  }
  out << '\n';
  for (std::size_t r = 0; r < ds.size(); ++r) {
    auto x = ds.features.row(r);
    for (std::size_t j = 0; j < x.size(); ++j) out << (j ? "," : "") << format_double(x[j]);
    for (std::size_t k = 0; k < ds.num_classes(); ++k) {
      out << (ds.num_features() + k ? "," : "") << to_token(ds.labels(r, k));
    }
    out << '\n';
  }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_csv(ds, out);
  if (!out) throw IoError("write to '" + path + "' failed");
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace detail

/// Reads `f0..f{D-1},label:<name>...`. When expected_classes is set the
/// header must declare exactly that many label columns.
inline Dataset read_csv(std::istream& in, std::optional<std::size_t> expected_classes = std::nullopt,
                        std::string provenance = "stream") {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", line_no);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = detail::split_commas(line);
  std::size_t d = 0;
  std::vector<std::string> names;
  for (auto field : header) {
    if (field.starts_with("label:")) {
      if (field.size() == 6) throw ParseError("empty class name in header", line_no);
      names.emplace_back(field.substr(6));
    } else {
      if (!names.empty()) throw ParseError("feature column after label columns", line_no);
      if (field != "f" + std::to_string(d)) {
        throw ParseError("expected header column f" + std::to_string(d) + ", got '" + std::string(field) + "'",
                         line_no);
      }
      ++d;
    }
  }
  if (names.empty()) throw ParseError("header declares no label columns", line_no);
  if (expected_classes && names.size() != *expected_classes) {
    throw ParseError("header declares " + std::to_string(names.size()) + " classes, expected " +
                         std::to_string(*expected_classes),
                     line_no);
  }
  const std::size_t k = names.size();

  std::vector<double> features;
  std::vector<LabelValue> labels;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_commas(line);
    if (fields.size() != d + k) {
      throw ParseError("expected " + std::to_string(d + k) + " fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      const auto f = fields[j];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty()) {
        throw ParseError("malformed number '" + std::string(f) + "' in column f" + std::to_string(j), line_no);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite feature value", line_no);
      features.push_back(v);
    }
    for (std::size_t c = 0; c < k; ++c) {
      const auto f = fields[d + c];
      if (f != "0" && f != "1" && f != "?") {
        throw ParseError("unknown label token '" + std::string(f) + "'", line_no);
      }
      labels.push_back(label_from_token(f));
    }
    ++rows;
  }
  return Dataset{Tensor::matrix(rows, d, std::move(features)), PartialLabelMatrix(rows, k, std::move(labels)),
                 std::move(names), std::move(provenance)};
}

inline Dataset read_csv(const std::string& path, std::optional<std::size_t> expected_classes = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_csv(in, expected_classes, path);
}

}  // namespace psmlc
