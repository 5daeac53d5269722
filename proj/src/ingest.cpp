#include "semg/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "semg/binio.hpp"
#include "semg/errors.hpp"

namespace semg {

namespace {

constexpr std::string_view kSignalMagic = "SEMG";
constexpr std::uint32_t kSignalVersion = 1;
constexpr std::string_view kManifestHeader = "path,format,label,subject,split";

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string_view label_name(Label l) {
  switch (l) {
    case Label::Myopathy: return "myopathy";
    case Label::Normal: return "normal";
    case Label::ALS: return "als";
  }
  return "?";
}

Label parse_label(std::string_view name) {
  auto n = lower(trim(name));
  if (n == "myopathy") return Label::Myopathy;
  if (n == "normal") return Label::Normal;
  if (n == "als") return Label::ALS;
  throw InputError("invalid label '" + std::string(name) + "'");
}

Label label_from_index(int index) {
  if (index < 0 || index >= kNumClasses) throw InputError("invalid label index " + std::to_string(index));
  return static_cast<Label>(index);
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Auto: return "auto";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  auto n = lower(trim(name));
  if (n == "train") return Split::Train;
  if (n == "val") return Split::Val;
  if (n == "test") return Split::Test;
  if (n == "auto") return Split::Auto;
  throw InputError("invalid split '" + std::string(name) + "'");
}

// ---- manifest ---------------------------------------------------------------

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != kManifestHeader) {
    throw InputError("manifest " + path.string() + ": expected header '" + std::string(kManifestHeader) + "'");
  }
  DatasetManifest manifest;
  std::set<std::filesystem::path> seen;
  auto base = path.parent_path();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw InputError("manifest line " + std::to_string(line_no) + ": expected 5 fields");
    }
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.is_relative()) e.path = base / e.path;
    e.format = lower(fields[1]);
    if (e.format != "semg" && e.format != "txt") {
      throw InputError("manifest line " + std::to_string(line_no) + ": unknown format '" + fields[1] + "'");
    }
    e.label = parse_label(fields[2]);
    e.subject_id = fields[3];
    e.split = parse_split(fields[4]);
    if (!seen.insert(e.path.lexically_normal()).second) {
      throw InputError("manifest line " + std::to_string(line_no) + ": duplicate path " + fields[0]);
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& e : manifest.entries) {
    out << e.path.generic_string() << ',' << e.format << ',' << label_name(e.label) << ','
        << e.subject_id << ',' << split_name(e.split) << '\n';
  }
  binio::write_text_atomic(path, out.str());
}

// ---- signal files -----------------------------------------------------------

Recording load_recording(const std::filesystem::path& path, std::string_view format_tag,
                         double txt_rate_hz) {
  if (!std::filesystem::exists(path)) throw InputError("missing file " + path.string());
  Recording rec;
  rec.recording_id = path.stem().string();
  if (format_tag == "semg") {
    auto bytes = binio::read_file(path);
    binio::Reader r(bytes);
    if (bytes.size() < 16 || !r.magic(kSignalMagic)) {
      throw InputError(path.string() + ": malformed header");
    }
    std::uint32_t version = r.u32();
    std::uint32_t count = r.u32();
    std::uint32_t rate = r.u32();
    if (version != kSignalVersion || rate == 0 || r.remaining() != std::size_t{count} * 4) {
      throw InputError(path.string() + ": malformed header");
    }
    rec.sample_rate_hz = rate;
    rec.samples.resize(count);
    for (auto& s : rec.samples) s = r.f32();
  } else if (format_tag == "txt") {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto t = trim(line);
      if (t.empty()) continue;
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(t, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != t.size()) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": not a number");
      }
      rec.samples.push_back(v);
    }
    rec.sample_rate_hz = txt_rate_hz;
  } else {
    throw InputError("unknown format tag '" + std::string(format_tag) + "'");
  }
  if (rec.samples.empty()) throw InputError(path.string() + ": length zero");
  if (!(rec.sample_rate_hz > 0)) throw InputError(path.string() + ": non-positive sample rate");
  return rec;
}

Recording load_recording(const ManifestEntry& entry) {
  auto rec = load_recording(entry.path, entry.format);
  rec.label = entry.label;
  rec.subject_id = entry.subject_id;
  return rec;
}

void save_recording_semg(const std::filesystem::path& path, std::span<const double> samples,
                         std::uint32_t sample_rate_hz) {
  binio::Writer w;
  w.magic(kSignalMagic);
  w.u32(kSignalVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  w.u32(sample_rate_hz);
  for (double s : samples) w.f32(static_cast<float>(s));
  binio::write_file_atomic(path, w.bytes());
}

// ---- windowing --------------------------------------------------------------

std::vector<RawWindow> window_recording(const Recording& rec, std::size_t window_len) {
  if (window_len == 0) throw InputError("window_len must be positive");
  std::vector<RawWindow> out;
  std::size_t n = rec.samples.size() / window_len;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawWindow w;
    auto first = rec.samples.begin() + static_cast<std::ptrdiff_t>(i * window_len);
    w.samples.assign(first, first + static_cast<std::ptrdiff_t>(window_len));
    w.source = {rec.recording_id, i};
    w.label = rec.label;
    w.subject_id = rec.subject_id;
    w.sample_rate_hz = rec.sample_rate_hz;
    out.push_back(std::move(w));
  }
  return out;
}

// ---- resampling -------------------------------------------------------------

Resampler::Resampler(std::size_t in_len, std::size_t out_len) : in_len_(in_len), out_len_(out_len) {
  if (in_len == 0 || out_len == 0) throw InputError("resampler lengths must be positive");
  if (out_len > in_len * kMaxUpsampling) {
    throw InputError("upsampling from " + std::to_string(in_len) + " to " + std::to_string(out_len) +
                     " samples exceeds the supported 4x range");
  }
  const double step = static_cast<double>(in_len) / static_cast<double>(out_len);
  const double scale = std::min(1.0, 1.0 / step);  // cutoff relative to input Nyquist
  const double fc = kCutoffFraction * 0.5 * scale;  // cycles per input sample
  const double half_width = (kTapsPerBranch / 2) / scale;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);

  first_.resize(out_len);
  offset_.resize(out_len + 1);
  offset_[0] = 0;
  for (std::size_t n = 0; n < out_len; ++n) {
    const double center = static_cast<double>(n) * step;
    auto lo = static_cast<std::ptrdiff_t>(std::ceil(center - half_width));
    auto hi = static_cast<std::ptrdiff_t>(std::floor(center + half_width));
    lo = std::max<std::ptrdiff_t>(lo, 0);
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(in_len) - 1);
    first_[n] = static_cast<std::size_t>(lo);
    const std::size_t start = weights_.size();
    double sum = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      const double t = static_cast<double>(k) - center;
      const double x = 2.0 * fc * t;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double r = t / half_width;
      const double win = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      const double h = 2.0 * fc * sinc * win;
      weights_.push_back(h);
      sum += h;
    }
    for (std::size_t k = start; k < weights_.size(); ++k) weights_[k] /= sum;
    offset_[n + 1] = weights_.size();
  }
}

void Resampler::apply(std::span<const double> in, std::span<double> out) const {
  if (in.size() != in_len_ || out.size() != out_len_) {
    throw InputError("resampler expects " + std::to_string(in_len_) + " -> " + std::to_string(out_len_) +
                     " samples, got " + std::to_string(in.size()) + " -> " + std::to_string(out.size()));
  }
  for (std::size_t n = 0; n < out_len_; ++n) {
    const double* w = weights_.data() + offset_[n];
    const double* x = in.data() + first_[n];
    const std::size_t taps = offset_[n + 1] - offset_[n];
    double acc = 0.0;
    for (std::size_t k = 0; k < taps; ++k) acc += w[k] * x[k];
    out[n] = acc;
  }
}

std::vector<double> Resampler::apply(std::span<const double> in) const {
  std::vector<double> out(out_len_);
  apply(in, out);
  return out;
}

const Resampler& cached_resampler(std::size_t in_len, std::size_t out_len) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<Resampler>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{in_len, out_len}];
  if (!slot) slot = std::make_unique<Resampler>(in_len, out_len);
  return *slot;
}

Segment resample_window(const RawWindow& w, std::size_t out_len) {
  if (w.samples.empty()) throw InputError("cannot resample an empty window");
  if (out_len == 0) throw InputError("out_len must be positive");
  const auto& rs = cached_resampler(w.samples.size(), out_len);
  Segment s;
  s.samples = rs.apply(w.samples);
  s.label = w.label;
  s.subject_id = w.subject_id;
  s.source = w.source;
  return s;
}

std::vector<Segment> segment_recordings(std::span<const Recording> recs, std::size_t window_len,
                                        std::size_t out_len) {
  // Build the shared table up front so the parallel loop only reads it.
  if (!recs.empty()) cached_resampler(window_len, out_len);
  std::vector<std::vector<Segment>> per_rec(recs.size());
  const auto n = static_cast<std::ptrdiff_t>(recs.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      for (const auto& w : window_recording(recs[static_cast<std::size_t>(i)], window_len)) {
        per_rec[static_cast<std::size_t>(i)].push_back(resample_window(w, out_len));
      }
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  std::vector<Segment> out;
  for (auto& v : per_rec) {
    for (auto& s : v) out.push_back(std::move(s));
  }
  return out;
}

// ---- subject split ----------------------------------------------------------

SplitResult split_by_subject(std::span<const Segment> segments, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw InputError("split ratios must be positive and sum to 1");
  }
  std::map<std::string, int> subject_class;
  for (const auto& s : segments) {
    auto [it, inserted] = subject_class.try_emplace(s.subject_id, label_index(s.label));
    if (!inserted) it->second = std::min(it->second, label_index(s.label));
  }
  std::array<std::vector<std::string>, kNumClasses> by_class;
  for (const auto& [subject, cls] : subject_class) by_class[static_cast<std::size_t>(cls)].push_back(subject);

  std::map<std::string, Split> assignment;
  for (int c = 0; c < kNumClasses; ++c) {
    auto& subjects = by_class[static_cast<std::size_t>(c)];
    if (subjects.empty()) continue;
    if (subjects.size() < 3) {
      throw DatasetError("cannot build subject-disjoint split: class " + std::string(label_name(label_from_index(c))) +
                         " has " + std::to_string(subjects.size()) + " subject(s), need at least 3");
    }
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(c)};
    std::mt19937_64 rng(sq);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    const auto n = static_cast<double>(subjects.size());
    auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.val * n)));
    auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.test * n)));
    while (n_val + n_test > subjects.size() - 1) {
      if (n_val >= n_test && n_val > 1) --n_val;
      else --n_test;
    }
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      assignment[subjects[i]] = i < n_val ? Split::Val : i < n_val + n_test ? Split::Test : Split::Train;
    }
  }

  SplitResult out;
  for (const auto& s : segments) {
    switch (assignment.at(s.subject_id)) {
      case Split::Train: out.train.push_back(s); break;
      case Split::Val: out.val.push_back(s); break;
      default: out.test.push_back(s); break;
    }
  }
  return out;
}

// ---- synthetic data ---------------------------------------------------------

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t tag) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), a, b, tag};
  return std::mt19937_64(sq);
}

constexpr int kToneCount = 48;
constexpr double kNoiseFloor = 0.02;

}  // namespace

std::vector<double> synth_signal(Label label, std::size_t n_samples, double rate_hz, double gain,
                                 std::uint64_t seed) {
  auto rng = make_rng(seed, static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(n_samples), 0x5e6d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n_samples, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;

  if (label == Label::ALS) {
    const double carrier_phase = two_pi * unit(rng);
    const double gate_phase = unit(rng);
    constexpr double carrier_hz = 200.0;
    constexpr double gate_hz = 5.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
      const double t = static_cast<double>(i) / rate_hz;
      const double g = std::fmod(t * gate_hz + gate_phase, 1.0) < 0.5 ? 1.0 : 0.0;
      x[i] = std::numbers::sqrt2 * g * std::sin(two_pi * carrier_hz * t + carrier_phase);
    }
  } else {
    const double lo = label == Label::Myopathy ? 50.0 : 300.0;
    const double hi = label == Label::Myopathy ? 150.0 : 500.0;
    const double amp = std::sqrt(2.0 / kToneCount);
    for (int k = 0; k < kToneCount; ++k) {
      const double f = lo + (hi - lo) * unit(rng);
      const double phase = two_pi * unit(rng);
      const double a = amp * (0.5 + unit(rng));
      for (std::size_t i = 0; i < n_samples; ++i) {
        x[i] += a * std::sin(two_pi * f * static_cast<double>(i) / rate_hz + phase);
      }
    }
  }
  for (auto& v : x) v = gain * (v + kNoiseFloor * normal(rng));
  return x;
}

double synth_subject_gain(std::uint64_t seed, Label label, std::size_t subject) {
  auto rng = make_rng(seed, static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(subject), 0x9a1f);
  std::uniform_real_distribution<double> u(std::log(0.5), std::log(2.0));
  return std::exp(u(rng));
}

std::string synth_subject_id(Label label, std::size_t subject) {
  return std::string(label_name(label)) + "_s" + std::to_string(subject);
}

std::vector<Segment> synth_dataset(std::uint64_t seed, std::size_t n_segments_per_class,
                                   std::size_t n_subjects_per_class) {
  if (n_segments_per_class == 0 || n_subjects_per_class == 0) {
    throw InputError("synth_dataset counts must be >= 1");
  }
  const double segment_rate = static_cast<double>(kSegmentLen) * kNominalRateHz / static_cast<double>(kWindowLen);
  std::vector<Segment> out;
  out.reserve(kNumClasses * n_segments_per_class);
  for (int c = 0; c < kNumClasses; ++c) {
    const Label label = label_from_index(c);
    for (std::size_t i = 0; i < n_segments_per_class; ++i) {
      const std::size_t subject = i % n_subjects_per_class;
      Segment s;
      s.label = label;
      s.subject_id = synth_subject_id(label, subject);
      s.source = {"synth_" + std::string(label_name(label)) + "_" + std::to_string(i), 0};
      const std::uint64_t sig_seed = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(c) * 1000003ULL + i;
      s.samples = synth_signal(label, kSegmentLen, segment_rate, synth_subject_gain(seed, label, subject), sig_seed);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace semg
