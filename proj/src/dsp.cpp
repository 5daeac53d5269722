#include "semg/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "semg/binio.hpp"
#include "semg/errors.hpp"

namespace semg::dsp {

namespace {

constexpr std::string_view kFeatureMagic = "SFTR";
constexpr std::uint32_t kFeatureVersion = 1;

// FFTW planning is not thread-safe; plans are created once under a lock and
// executed through the new-array interface, which is.
fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> in(n);
  std::vector<fftw_complex> out(n / 2 + 1);
  auto plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(n, plan);
  return plan;
}

// Reflect (no edge repeat) index into [0, len).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t len) {
  if (len == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (len - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(len)) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return w;
}

std::vector<double> naive_dft_frame(std::span<const double> frame) {
  const std::size_t n = frame.size();
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double re = 0.0;
    double im = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      // Reduce k*j mod n first so the angle stays in [0, 2 pi).
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      re += frame[j] * std::cos(angle);
      im -= frame[j] * std::sin(angle);
    }
    mag[k] = std::hypot(re, im);
  }
  return mag;
}

Grid stft_magnitude(std::span<const double> segment, std::size_t n_fft, std::size_t hop) {
  if (n_fft < 2 || n_fft % 2 != 0) throw InputError("n_fft must be even and >= 2");
  if (hop == 0) throw InputError("hop must be positive");
  if (segment.size() < n_fft / 2) {
    throw InputError("segment of " + std::to_string(segment.size()) + " samples is shorter than n_fft/2");
  }
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t frames = segment.size() / hop + 1;
  const auto pad = static_cast<std::ptrdiff_t>(n_fft / 2);
  const auto window = hann_periodic(n_fft);
  auto plan = r2c_plan(n_fft);

  Grid out(bins, frames);
  std::vector<double> frame(n_fft);
  std::vector<fftw_complex> spec(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * hop) - pad;
    for (std::size_t j = 0; j < n_fft; ++j) {
      frame[j] = window[j] * segment[reflect_index(start + static_cast<std::ptrdiff_t>(j), segment.size())];
    }
    fftw_execute_dft_r2c(plan, frame.data(), spec.data());
    for (std::size_t k = 0; k < bins; ++k) out(k, t) = std::hypot(spec[k][0], spec[k][1]);
  }
  return out;
}

Grid log_amplitude(const Grid& mag) {
  Grid out(mag.rows, mag.cols);
  for (std::size_t i = 0; i < mag.values.size(); ++i) {
    const double m = mag.values[i];
    if (m < 0 || std::isnan(m)) throw InputError("log_amplitude: negative magnitude");
    out.values[i] = 20.0 * std::log10(std::max(m, kMagnitudeFloor));
  }
  return out;
}

Grid delta(const Grid& g, std::size_t width) {
  if (width < 3 || width % 2 == 0) throw InputError("delta width must be odd and >= 3");
  if (g.cols == 0) throw InputError("delta needs at least one frame");
  const auto half = static_cast<std::ptrdiff_t>((width - 1) / 2);
  double denom = 0.0;
  for (std::ptrdiff_t n = 1; n <= half; ++n) denom += static_cast<double>(n * n);
  denom *= 2.0;
  const auto last = static_cast<std::ptrdiff_t>(g.cols) - 1;
  auto clamp = [last](std::ptrdiff_t t) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t, 0, last)); };

  Grid out(g.rows, g.cols);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::ptrdiff_t t = 0; t <= last; ++t) {
      double acc = 0.0;
      for (std::ptrdiff_t n = 1; n <= half; ++n) {
        acc += static_cast<double>(n) * (g(r, clamp(t + n)) - g(r, clamp(t - n)));
      }
      out(r, static_cast<std::size_t>(t)) = acc / denom;
    }
  }
  return out;
}

Grid delta_difference(const Grid& g) {
  if (g.cols == 0) throw InputError("delta needs at least one frame");
  Grid out(g.rows, g.cols);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t t = 1; t < g.cols; ++t) out(r, t) = g(r, t) - g(r, t - 1);
  }
  return out;
}

FeatureTensor featurize(std::span<const double> segment, const FeatureConfig& cfg) {
  const auto log_spec = log_amplitude(stft_magnitude(segment, cfg.n_fft, cfg.hop));
  const auto d = cfg.delta_mode == DeltaMode::Regression ? delta(log_spec, cfg.delta_width)
                                                         : delta_difference(log_spec);
  FeatureTensor ft;
  ft.freq = log_spec.rows;
  ft.frames = log_spec.cols;
  ft.values.resize(ft.size());
  for (std::size_t f = 0; f < ft.freq; ++f) {
    for (std::size_t t = 0; t < ft.frames; ++t) {
      ft.values[(f * ft.frames + t) * 2] = static_cast<float>(log_spec(f, t));
      ft.values[(f * ft.frames + t) * 2 + 1] = static_cast<float>(d(f, t));
    }
  }
  return ft;
}

std::vector<FeatureTensor> featurize_batch(std::span<const Segment> segments, const FeatureConfig& cfg) {
  std::vector<FeatureTensor> out(segments.size());
  if (segments.empty()) return out;
  r2c_plan(cfg.n_fft);
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(segments.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = featurize(segments[static_cast<std::size_t>(i)].samples, cfg);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

namespace serial {
std::vector<FeatureTensor> featurize_batch(std::span<const Segment> segments, const FeatureConfig& cfg) {
  std::vector<FeatureTensor> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(featurize(s.samples, cfg));
  return out;
}
}  // namespace serial

// ---- feature file -----------------------------------------------------------

void write_feature_file(const std::filesystem::path& path, const FeatureSet& set) {
  if (set.features.size() != set.labels.size()) throw InputError("feature/label count mismatch");
  std::size_t freq = kFreqBins;
  std::size_t frames = kFrames;
  if (!set.features.empty()) {
    freq = set.features.front().freq;
    frames = set.features.front().frames;
  }
  binio::Writer w;
  w.magic(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(freq));
  w.u32(static_cast<std::uint32_t>(frames));
  w.u32(static_cast<std::uint32_t>(kChannels));
  for (auto l : set.labels) w.u8(static_cast<std::uint8_t>(l));
  w.bytes().reserve(w.bytes().size() + set.size() * freq * frames * kChannels * 4);
  for (const auto& ft : set.features) {
    if (ft.freq != freq || ft.frames != frames) throw InputError("feature tensors have mixed shapes");
    for (float v : ft.values) w.f32(v);
  }
  binio::write_file_atomic(path, w.bytes());
}

FeatureSet read_feature_file(const std::filesystem::path& path) {
  auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  if (bytes.size() < 24 || !r.magic(kFeatureMagic)) throw InputError(path.string() + ": not a feature file");
  if (r.u32() != kFeatureVersion) throw InputError(path.string() + ": unsupported feature file version");
  const std::uint32_t count = r.u32();
  const std::uint32_t freq = r.u32();
  const std::uint32_t frames = r.u32();
  const std::uint32_t channels = r.u32();
  if (channels != kChannels || freq == 0 || frames == 0) {
    throw InputError(path.string() + ": unsupported feature dims");
  }
  const std::size_t per = std::size_t{freq} * frames * channels;
  if (r.remaining() != count + count * per * 4) throw InputError(path.string() + ": truncated feature file");
  FeatureSet set;
  set.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto l = r.u8();
    if (l >= kNumClasses) throw InputError(path.string() + ": invalid label in record " + std::to_string(i));
    set.labels.push_back(static_cast<Label>(l));
  }
  set.features.resize(count);
  for (auto& ft : set.features) {
    ft.freq = freq;
    ft.frames = frames;
    ft.values.resize(per);
    for (auto& v : ft.values) v = r.f32();
  }
  return set;
}

}  // namespace semg::dsp
