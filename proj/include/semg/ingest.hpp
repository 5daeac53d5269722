#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace semg {

enum class Label : std::uint8_t { Myopathy = 0, Normal = 1, ALS = 2 };

inline constexpr int kNumClasses = 3;
inline constexpr std::size_t kWindowLen = 23437;
inline constexpr std::size_t kSegmentLen = 2000;
inline constexpr double kNominalRateHz = 24000.0;

/// Lower-case name used in manifests and CLI output ("myopathy", "normal", "als").
std::string_view label_name(Label l);
Label parse_label(std::string_view name);
Label label_from_index(int index);
inline int label_index(Label l) { return static_cast<int>(l); }

struct Recording {
  std::vector<double> samples;
  double sample_rate_hz = kNominalRateHz;
  Label label = Label::Normal;
  std::string subject_id;
  std::string recording_id;
};

struct WindowSource {
  std::string recording_id;
  std::size_t window_index = 0;
};

struct RawWindow {
  std::vector<double> samples;
  WindowSource source;
  Label label = Label::Normal;
  std::string subject_id;
  double sample_rate_hz = kNominalRateHz;
};

struct Segment {
  std::vector<double> samples;
  Label label = Label::Normal;
  std::string subject_id;
  WindowSource source;
};

enum class Split : std::uint8_t { Train, Val, Test, Auto };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::filesystem::path path;
  std::string format;  // "semg" or "txt"
  Label label = Label::Normal;
  std::string subject_id;
  Split split = Split::Auto;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
};

// ---- file formats ---------------------------------------------------------

/// Reads a CSV manifest (`path,format,label,subject,split`). Relative paths
/// resolve against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// format_tag "semg": 16-byte header + float32 LE payload. "txt": one sample
/// per line, sample rate taken from `txt_rate_hz`.
Recording load_recording(const std::filesystem::path& path, std::string_view format_tag,
                         double txt_rate_hz = kNominalRateHz);
/// Loads and attaches label/subject from the manifest entry.
Recording load_recording(const ManifestEntry& entry);

void save_recording_semg(const std::filesystem::path& path, std::span<const double> samples,
                         std::uint32_t sample_rate_hz);

// ---- windowing and resampling ---------------------------------------------

/// Consecutive non-overlapping windows from sample 0; the short tail is dropped.
std::vector<RawWindow> window_recording(const Recording& rec, std::size_t window_len = kWindowLen);

/// Band-limited resampler for a fixed (in_len -> out_len) mapping.
///
/// Output sample n is placed at input position n * in_len / out_len and is a
/// Kaiser-windowed sinc interpolation of the input, low-passed at 0.95x the
/// lower of the two Nyquist frequencies. The weight table is built once per
/// instance; per-output weights are normalised to unit sum.
class Resampler {
 public:
  static constexpr double kCutoffFraction = 0.95;
  static constexpr double kKaiserBeta = 8.6;
  static constexpr int kTapsPerBranch = 64;
  static constexpr std::size_t kMaxUpsampling = 4;

  Resampler(std::size_t in_len, std::size_t out_len);

  std::size_t in_len() const { return in_len_; }
  std::size_t out_len() const { return out_len_; }

  void apply(std::span<const double> in, std::span<double> out) const;
  std::vector<double> apply(std::span<const double> in) const;

 private:
  std::size_t in_len_;
  std::size_t out_len_;
  std::vector<std::size_t> first_;   // first input index per output
  std::vector<std::size_t> offset_;  // offset into weights_ per output (size out_len+1)
  std::vector<double> weights_;
};

/// Returns a process-wide cached resampler for the mapping.
const Resampler& cached_resampler(std::size_t in_len, std::size_t out_len);

Segment resample_window(const RawWindow& w, std::size_t out_len = kSegmentLen);

/// Windows and resamples every recording; recordings are processed in parallel,
/// output order is recording order then window order.
std::vector<Segment> segment_recordings(std::span<const Recording> recs,
                                        std::size_t window_len = kWindowLen,
                                        std::size_t out_len = kSegmentLen);

// ---- splitting and synthetic data -----------------------------------------

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitResult {
  std::vector<Segment> train;
  std::vector<Segment> val;
  std::vector<Segment> test;
};

/// Subject-disjoint split. Subjects are grouped by class and each class's
/// subjects are shuffled with `seed`, then allotted to val/test/train.
/// Throws DatasetError when any present class has fewer than 3 subjects.
SplitResult split_by_subject(std::span<const Segment> segments, SplitRatios ratios, std::uint64_t seed);

/// Signal generator shared by synth_dataset and the CLI `synth` command.
/// Class 0: band-limited noise 50-150 Hz. Class 1: 300-500 Hz. Class 2:
/// 200 Hz carrier gated on/off at 5 Hz.
std::vector<double> synth_signal(Label label, std::size_t n_samples, double rate_hz, double gain,
                                 std::uint64_t seed);

/// Deterministic per-subject gain in [0.5, 2].
double synth_subject_gain(std::uint64_t seed, Label label, std::size_t subject);

std::string synth_subject_id(Label label, std::size_t subject);

/// Segments generated directly at the segment rate (2000 samples spanning one
/// 23437-sample window at 24 kHz). Segment i of a class belongs to subject
/// i % n_subjects_per_class.
std::vector<Segment> synth_dataset(std::uint64_t seed, std::size_t n_segments_per_class,
                                   std::size_t n_subjects_per_class);

}  // namespace semg
