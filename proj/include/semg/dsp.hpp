#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "semg/ingest.hpp"

namespace semg::dsp {

inline constexpr std::size_t kNfft = 256;
inline constexpr std::size_t kHop = 64;
inline constexpr std::size_t kFreqBins = kNfft / 2 + 1;  // 129
inline constexpr std::size_t kFrames = kSegmentLen / kHop + 1;  // 32
inline constexpr std::size_t kChannels = 2;
inline constexpr double kMagnitudeFloor = 1e-10;

/// Row-major 2-D grid (rows = frequency bins, cols = frames).
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

enum class DeltaMode : std::uint8_t { Regression, Difference };

struct FeatureConfig {
  std::size_t n_fft = kNfft;
  std::size_t hop = kHop;
  std::size_t delta_width = 9;
  DeltaMode delta_mode = DeltaMode::Regression;
};

/// (freq, frame, channel) row-major, channel 0 = log spectrogram, 1 = delta.
struct FeatureTensor {
  std::size_t freq = kFreqBins;
  std::size_t frames = kFrames;
  std::vector<float> values;

  static constexpr std::size_t channels = kChannels;
  std::size_t size() const { return freq * frames * channels; }
  float at(std::size_t f, std::size_t t, std::size_t c) const { return values[(f * frames + t) * channels + c]; }
};

/// Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / N)).
std::vector<double> hann_periodic(std::size_t n);

/// Direct O(N^2) DFT magnitudes for bins 0..N/2. Test oracle.
std::vector<double> naive_dft_frame(std::span<const double> frame);

/// Centered STFT magnitude: reflect-pad by n_fft/2, Hann window, FFT.
/// Returns a (n_fft/2 + 1) x (len/hop + 1) grid.
Grid stft_magnitude(std::span<const double> segment, std::size_t n_fft = kNfft, std::size_t hop = kHop);

/// 20 log10(max(m, 1e-10)).
Grid log_amplitude(const Grid& mag);

/// Per-row regression delta over `width` frames with edge replication.
Grid delta(const Grid& log_grid, std::size_t width = 9);

/// Two-point backward difference d_t = c_t - c_{t-1} with edge replication.
Grid delta_difference(const Grid& log_grid);

FeatureTensor featurize(std::span<const double> segment, const FeatureConfig& cfg = {});

/// Featurizes a batch of segments; OpenMP-parallel over segments.
std::vector<FeatureTensor> featurize_batch(std::span<const Segment> segments, const FeatureConfig& cfg = {});

namespace serial {
/// Single-threaded reference for featurize_batch.
std::vector<FeatureTensor> featurize_batch(std::span<const Segment> segments, const FeatureConfig& cfg = {});
}  // namespace serial

// ---- feature file ("SFTR") --------------------------------------------------

struct FeatureSet {
  std::vector<FeatureTensor> features;
  std::vector<Label> labels;
  std::size_t size() const { return features.size(); }
};

void write_feature_file(const std::filesystem::path& path, const FeatureSet& set);
FeatureSet read_feature_file(const std::filesystem::path& path);

}  // namespace semg::dsp
