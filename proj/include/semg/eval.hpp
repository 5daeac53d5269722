#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "semg/dsp.hpp"
#include "semg/ingest.hpp"
#include "semg/model.hpp"

namespace semg::eval {

/// Exact non-negative fraction; metrics stay exact until formatted.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t num, std::int64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational& o) const { return num * o.den == o.num * den; }
};

/// Undefined (zero denominator) metrics are std::nullopt, never 0 or NaN.
using Metric = std::optional<Rational>;

Metric ratio(std::int64_t num, std::int64_t den);

/// Percentage with two decimals, half-up, computed in integer arithmetic;
/// "n/a" when undefined.
std::string format_percent(const Metric& m);
/// Same rounding, as a number (NaN when undefined).
double percent_2dp(const Metric& m);

struct ConfusionMatrix {
  // rows = true class, columns = predicted class; order Myopathy, Normal, ALS
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int c) const;
  std::int64_t col_sum(int c) const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> true_labels, std::span<const int> predicted);

struct ClassMetrics {
  std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
  Metric sensitivity;
  Metric specificity;
  Metric precision;
  Metric f1;
  /// (TP + TN) / total for this one-vs-rest binarisation.
  Metric binary_accuracy;
};

/// One-vs-rest reduction of the matrix for one class.
ClassMetrics class_metrics(const ConfusionMatrix& cm, int class_index);

/// trace / total. Throws InputError on an empty matrix.
Rational overall_accuracy(const ConfusionMatrix& cm);

/// Unweighted mean; undefined if any input is undefined.
Metric macro_mean(std::span<const Metric> values);

struct Report {
  ConfusionMatrix confusion;
  std::array<ClassMetrics, kNumClasses> per_class;
  Rational overall;
  Metric macro_sensitivity;
  Metric macro_specificity;
  std::array<std::int64_t, kNumClasses> counts{};
};

Report make_report(const ConfusionMatrix& cm);

/// Infer-mode forward over the test set, argmax per segment, all metrics.
Report evaluate(const model::ModelState<float>& state, const dsp::FeatureSet& test_set);

/// Structured report text (JSON) with fixed key names; `extra` (a JSON object
/// text, may be empty) is embedded under "config".
std::string report_json(const Report& r, const std::string& extra_json = {});

std::string confusion_csv(const ConfusionMatrix& cm);
ConfusionMatrix parse_confusion_csv(const std::string& text);
std::string confusion_svg(const ConfusionMatrix& cm);

/// Writes `<base>.csv` and `<base>.svg`.
void render_confusion(const ConfusionMatrix& cm, const std::filesystem::path& base);

}  // namespace semg::eval
