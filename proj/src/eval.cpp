#include "semg/eval.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "semg/binio.hpp"
#include "semg/errors.hpp"
#include "semg/train.hpp"

namespace semg::eval {

Rational Rational::make(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num < 0) throw InputError("rational must be non-negative with a positive denominator");
  const auto g = std::gcd(num, den);
  return g > 0 ? Rational{num / g, den / g} : Rational{0, 1};
}

Metric ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return Rational::make(num, den);
}

namespace {

// round_half_up(num * 10000 / den), i.e. hundredths of a percent.
std::int64_t hundredths(const Rational& r) { return (2 * r.num * 10000 + r.den) / (2 * r.den); }

std::string label_key(int c) { return std::string(label_name(label_from_index(c))); }

}  // namespace

std::string format_percent(const Metric& m) {
  if (!m) return "n/a";
  const auto h = hundredths(*m);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%02lld", static_cast<long long>(h / 100), static_cast<long long>(h % 100));
  return buf;
}

double percent_2dp(const Metric& m) {
  if (!m) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(format_percent(m));
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts)
    for (auto v : row) t += v;
  return t;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (int c = 0; c < kNumClasses; ++c) t += counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  return t;
}

std::int64_t ConfusionMatrix::row_sum(int c) const {
  std::int64_t t = 0;
  for (auto v : counts[static_cast<std::size_t>(c)]) t += v;
  return t;
}

std::int64_t ConfusionMatrix::col_sum(int c) const {
  std::int64_t t = 0;
  for (const auto& row : counts) t += row[static_cast<std::size_t>(c)];
  return t;
}

ConfusionMatrix confusion(std::span<const int> true_labels, std::span<const int> predicted) {
  if (true_labels.size() != predicted.size()) throw InputError("confusion: label vectors differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const int t = true_labels[i], p = predicted[i];
    if (t < 0 || t >= kNumClasses || p < 0 || p >= kNumClasses) {
      throw InputError("confusion: invalid label at position " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, int c) {
  if (c < 0 || c >= kNumClasses) throw InputError("class_metrics: invalid class index");
  ClassMetrics m;
  m.tp = cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  m.fn = cm.row_sum(c) - m.tp;
  m.fp = cm.col_sum(c) - m.tp;
  m.tn = cm.total() - m.tp - m.fn - m.fp;
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.specificity = ratio(m.tn, m.tn + m.fp);
  m.precision = ratio(m.tp, m.tp + m.fp);
  // 2PS / (P + S) reduces to 2TP / (2TP + FP + FN); undefined whenever P or S is.
  // Undefined when P or S is, and when P = S = 0 (0/0).
  if (m.sensitivity && m.precision && m.tp > 0) m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
  m.binary_accuracy = ratio(m.tp + m.tn, cm.total());
  return m;
}

Rational overall_accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InputError("overall_accuracy: empty confusion matrix");
  return Rational::make(cm.trace(), cm.total());
}

Metric macro_mean(std::span<const Metric> values) {
  if (values.empty()) return std::nullopt;
  std::int64_t num = 0, den = 1;
  for (const auto& v : values) {
    if (!v) return std::nullopt;
    // num/den + v.num/v.den
    const auto l = std::lcm(den, v->den);
    num = num * (l / den) + v->num * (l / v->den);
    den = l;
  }
  return Rational::make(num, den * static_cast<std::int64_t>(values.size()));
}

Report make_report(const ConfusionMatrix& cm) {
  Report r;
  r.confusion = cm;
  r.overall = overall_accuracy(cm);
  std::array<Metric, kNumClasses> sens, spec;
  for (int c = 0; c < kNumClasses; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    r.per_class[uc] = class_metrics(cm, c);
    sens[uc] = r.per_class[uc].sensitivity;
    spec[uc] = r.per_class[uc].specificity;
    r.counts[uc] = cm.row_sum(c);
  }
  r.macro_sensitivity = macro_mean(sens);
  r.macro_specificity = macro_mean(spec);
  return r;
}

Report evaluate(const model::ModelState<float>& state, const dsp::FeatureSet& test_set) {
  if (test_set.size() == 0) throw DatasetError("test set is empty");
  const auto ev = train::evaluate_set(state, test_set);
  std::vector<int> truth;
  truth.reserve(test_set.size());
  for (auto l : test_set.labels) truth.push_back(label_index(l));
  return make_report(confusion(truth, ev.predictions));
}

std::string report_json(const Report& r, const std::string& extra_json) {
  using nlohmann::ordered_json;
  auto pct = [](const Metric& m) -> ordered_json {
    if (!m) return "n/a";
    return percent_2dp(m);
  };
  ordered_json j;
  j["overall_accuracy"] = pct(r.overall);
  j["macro_sensitivity"] = pct(r.macro_sensitivity);
  j["macro_specificity"] = pct(r.macro_specificity);
  ordered_json per = ordered_json::object();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& m = r.per_class[static_cast<std::size_t>(c)];
    per[label_key(c)] = {{"sensitivity", pct(m.sensitivity)},
                         {"specificity", pct(m.specificity)},
                         {"precision", pct(m.precision)},
                         {"f1", pct(m.f1)}};
  }
  j["per_class"] = per;
  ordered_json conf = ordered_json::array();
  for (const auto& row : r.confusion.counts) conf.push_back(row);
  j["confusion"] = conf;
  ordered_json counts = ordered_json::object();
  for (int c = 0; c < kNumClasses; ++c) counts[label_key(c)] = r.counts[static_cast<std::size_t>(c)];
  j["counts"] = counts;
  j["total"] = r.confusion.total();
  if (!extra_json.empty()) j["config"] = ordered_json::parse(extra_json);
  return j.dump(2) + "\n";
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\pred";
  for (int c = 0; c < kNumClasses; ++c) out << ',' << label_key(c);
  out << '\n';
  for (int t = 0; t < kNumClasses; ++t) {
    out << label_key(t);
    for (auto v : cm.counts[static_cast<std::size_t>(t)]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InputError("confusion CSV is empty");
  ConfusionMatrix cm;
  for (int t = 0; t < kNumClasses; ++t) {
    if (!std::getline(in, line)) throw InputError("confusion CSV has too few rows");
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    if (cell != label_key(t)) throw InputError("confusion CSV row " + std::to_string(t) + " has label '" + cell + "'");
    for (int p = 0; p < kNumClasses; ++p) {
      if (!std::getline(row, cell, ',')) throw InputError("confusion CSV row too short");
      cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] = std::stoll(cell);
    }
  }
  return cm;
}

std::string confusion_svg(const ConfusionMatrix& cm) {
  constexpr int cell = 110, left = 120, top = 70;
  constexpr int size = left + cell * kNumClasses + 30;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << top + cell * kNumClasses + 60
      << "\" font-family=\"sans-serif\">\n";
  out << "<text x=\"" << left + cell * kNumClasses / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << "Confusion matrix</text>\n";
  out << "<text x=\"" << left + cell * kNumClasses / 2 << "\" y=\"" << top + cell * kNumClasses + 45
      << "\" text-anchor=\"middle\" font-size=\"13\">predicted</text>\n";
  for (int t = 0; t < kNumClasses; ++t) {
    const auto row_total = cm.row_sum(t);
    out << "<text x=\"" << left - 8 << "\" y=\"" << top + t * cell + cell / 2 + 5
        << "\" text-anchor=\"end\" font-size=\"13\">" << label_key(t) << "</text>\n";
    out << "<text x=\"" << left + t * cell + cell / 2 << "\" y=\"" << top - 8
        << "\" text-anchor=\"middle\" font-size=\"13\">" << label_key(t) << "</text>\n";
    for (int p = 0; p < kNumClasses; ++p) {
      const auto v = cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      const double frac = row_total > 0 ? static_cast<double>(v) / static_cast<double>(row_total) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - 0.8 * frac)));
      out << "<rect x=\"" << left + p * cell << "\" y=\"" << top + t * cell << "\" width=\"" << cell << "\" height=\""
          << cell << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#333\"/>\n";
      out << "<text x=\"" << left + p * cell + cell / 2 << "\" y=\"" << top + t * cell + cell / 2 + 6
          << "\" text-anchor=\"middle\" font-size=\"18\" fill=\"" << (frac > 0.6 ? "#fff" : "#000") << "\">" << v
          << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

void render_confusion(const ConfusionMatrix& cm, const std::filesystem::path& base) {
  auto csv = base;
  csv += ".csv";
  auto svg = base;
  svg += ".svg";
  binio::write_text_atomic(csv, confusion_csv(cm));
  binio::write_text_atomic(svg, confusion_svg(cm));
}

}  // namespace semg::eval
