#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "semg/binio.hpp"
#include "semg/errors.hpp"
#include "semg/ingest.hpp"
#include "support.hpp"

using namespace semg;
namespace fs = std::filesystem;

namespace {

Recording make_recording(std::size_t n, double value = 0.0) {
  Recording r;
  r.samples.assign(n, value);
  r.recording_id = "r";
  r.subject_id = "s";
  return r;
}

void write_raw(const fs::path& p, std::uint32_t version, std::uint32_t count, std::uint32_t rate,
               const std::vector<float>& payload) {
  binio::Writer w;
  w.magic("SEMG");
  w.u32(version);
  w.u32(count);
  w.u32(rate);
  for (float v : payload) w.f32(v);
  binio::write_file_atomic(p, w.bytes());
}

std::vector<Segment> segments_for(const std::vector<std::pair<std::string, Label>>& subjects, std::size_t per) {
  std::vector<Segment> out;
  for (const auto& [id, label] : subjects) {
    for (std::size_t i = 0; i < per; ++i) {
      Segment s;
      s.samples.assign(kSegmentLen, 0.0);
      s.label = label;
      s.subject_id = id;
      out.push_back(s);
    }
  }
  return out;
}

std::set<std::string> subject_set(const std::vector<Segment>& v) {
  std::set<std::string> s;
  for (const auto& seg : v) s.insert(seg.subject_id);
  return s;
}

}  // namespace

// ---- labels and manifest ------------------------------------------------------

TEST(Labels, NamesRoundTrip) {
  for (int c = 0; c < kNumClasses; ++c) {
    const auto l = label_from_index(c);
    EXPECT_EQ(parse_label(label_name(l)), l);
    EXPECT_EQ(label_index(l), c);
  }
  EXPECT_EQ(label_name(Label::ALS), "als");
  EXPECT_THROW(parse_label("healthy"), InputError);
  EXPECT_THROW(label_from_index(3), InputError);
}

TEST(Manifest, ReadsRowsAndResolvesRelativePaths) {
  const auto dir = testkit::scratch_dir("manifest_read");
  std::ofstream(dir / "m.csv") << "path,format,label,subject,split\n"
                               << "a.semg,semg,myopathy,s1,train\n"
                               << "/abs/b.txt,txt,als,s2,auto\n";
  const auto m = read_manifest(dir / "m.csv");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].path, dir / "a.semg");
  EXPECT_EQ(m.entries[0].label, Label::Myopathy);
  EXPECT_EQ(m.entries[0].split, Split::Train);
  EXPECT_EQ(m.entries[1].path, fs::path("/abs/b.txt"));
  EXPECT_EQ(m.entries[1].format, "txt");
  EXPECT_EQ(m.entries[1].split, Split::Auto);
}

TEST(Manifest, RejectsBadHeaderDuplicatesAndLabels) {
  const auto dir = testkit::scratch_dir("manifest_bad");
  std::ofstream(dir / "h.csv") << "file,format,label,subject,split\n";
  EXPECT_THROW(read_manifest(dir / "h.csv"), InputError);
  std::ofstream(dir / "d.csv") << "path,format,label,subject,split\na,semg,normal,s,train\na,semg,normal,s,val\n";
  EXPECT_THROW(read_manifest(dir / "d.csv"), InputError);
  std::ofstream(dir / "l.csv") << "path,format,label,subject,split\na,semg,healthy,s,train\n";
  EXPECT_THROW(read_manifest(dir / "l.csv"), InputError);
  std::ofstream(dir / "s.csv") << "path,format,label,subject,split\na,semg,normal,s,holdout\n";
  EXPECT_THROW(read_manifest(dir / "s.csv"), InputError);
  std::ofstream(dir / "f.csv") << "path,format,label,subject,split\na,wav,normal,s,train\n";
  EXPECT_THROW(read_manifest(dir / "f.csv"), InputError);
}

TEST(Manifest, WriteThenReadIsIdentity) {
  const auto dir = testkit::scratch_dir("manifest_rt");
  DatasetManifest m;
  m.entries.push_back({"x.semg", "semg", Label::Normal, "s0", Split::Val});
  m.entries.push_back({"y.txt", "txt", Label::ALS, "s1", Split::Auto});
  write_manifest(dir / "m.csv", m);
  const auto back = read_manifest(dir / "m.csv");
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[0].path, dir / "x.semg");
  EXPECT_EQ(back.entries[1].label, Label::ALS);
  EXPECT_EQ(back.entries[1].subject_id, "s1");
}

// ---- signal files ----------------------------------------------------------------

TEST(LoadRecording, DecodesFloat32Payload) {
  const auto dir = testkit::scratch_dir("load_ok");
  write_raw(dir / "ones.semg", 1, 12, 24000, std::vector<float>(12, 1.0f));
  const auto r = load_recording(dir / "ones.semg", "semg");
  ASSERT_EQ(r.samples.size(), 12u);
  for (double v : r.samples) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.sample_rate_hz, 24000.0);
}

TEST(LoadRecording, FullLengthRecording) {
  const auto dir = testkit::scratch_dir("load_full");
  std::vector<double> x(262124);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.001 * static_cast<double>(i));
  save_recording_semg(dir / "full.semg", x, 24000);
  const auto r = load_recording(dir / "full.semg", "semg");
  ASSERT_EQ(r.samples.size(), 262124u);
  EXPECT_EQ(r.samples[1234], static_cast<double>(static_cast<float>(x[1234])));
}

TEST(LoadRecording, MalformedHeaderAndEmptyFiles) {
  const auto dir = testkit::scratch_dir("load_bad");
  write_raw(dir / "len.semg", 1, 13, 24000, std::vector<float>(12, 1.0f));
  try {
    load_recording(dir / "len.semg", "semg");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("malformed header"), std::string::npos);
  }
  write_raw(dir / "ver.semg", 2, 1, 24000, {1.0f});
  EXPECT_THROW(load_recording(dir / "ver.semg", "semg"), InputError);
  write_raw(dir / "rate.semg", 1, 1, 0, {1.0f});
  EXPECT_THROW(load_recording(dir / "rate.semg", "semg"), InputError);
  std::ofstream(dir / "short.semg") << "SEM";
  EXPECT_THROW(load_recording(dir / "short.semg", "semg"), InputError);
  write_raw(dir / "zero.semg", 1, 0, 24000, {});
  try {
    load_recording(dir / "zero.semg", "semg");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("length zero"), std::string::npos);
  }
  EXPECT_THROW(load_recording(dir / "missing.semg", "semg"), InputError);
  EXPECT_THROW(load_recording(dir / "len.semg", "flac"), InputError);
}

TEST(LoadRecording, TextFormat) {
  const auto dir = testkit::scratch_dir("load_txt");
  std::ofstream(dir / "a.txt") << "1.5\n-2\n\n3e-1\n";
  const auto r = load_recording(dir / "a.txt", "txt", 1000.0);
  ASSERT_EQ(r.samples.size(), 3u);
  EXPECT_EQ(r.samples[0], 1.5);
  EXPECT_EQ(r.samples[2], 0.3);
  EXPECT_EQ(r.sample_rate_hz, 1000.0);
  std::ofstream(dir / "b.txt") << "1.5\nabc\n";
  EXPECT_THROW(load_recording(dir / "b.txt", "txt"), InputError);
  std::ofstream(dir / "c.txt") << "\n";
  EXPECT_THROW(load_recording(dir / "c.txt", "txt"), InputError);
}

// ---- windowing -------------------------------------------------------------------

TEST(Window, LongRecordingGivesElevenWindows) {
  auto rec = make_recording(262124);
  for (std::size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i] = static_cast<double>(i);
  rec.label = Label::ALS;
  rec.subject_id = "p1";
  const auto w = window_recording(rec);
  ASSERT_EQ(w.size(), 11u);
  for (std::size_t k = 0; k < w.size(); ++k) {
    ASSERT_EQ(w[k].samples.size(), kWindowLen);
    EXPECT_EQ(w[k].samples.front(), static_cast<double>(k * kWindowLen));
    EXPECT_EQ(w[k].source.window_index, k);
    EXPECT_EQ(w[k].label, Label::ALS);
    EXPECT_EQ(w[k].subject_id, "p1");
  }
}

TEST(Window, BelowAndAtThreshold) {
  EXPECT_TRUE(window_recording(make_recording(kWindowLen - 1)).empty());
  auto rec = make_recording(kWindowLen);
  for (std::size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i] = std::cos(static_cast<double>(i));
  const auto w = window_recording(rec);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].samples, rec.samples);
}

TEST(Window, CountIsFloorForAllSmallLengths) {
  constexpr std::size_t len = 7;
  for (std::size_t n = 0; n <= 3 * len; ++n) {
    EXPECT_EQ(window_recording(make_recording(n), len).size(), n / len) << "n=" << n;
  }
}

// ---- resampling ------------------------------------------------------------------

TEST(Resample, ConstantPassesThrough) {
  RawWindow w;
  w.samples.assign(kWindowLen, 3.0);
  const auto s = resample_window(w);
  ASSERT_EQ(s.samples.size(), kSegmentLen);
  for (double v : s.samples) EXPECT_NEAR(v, 3.0, 1e-6);
}

TEST(Resample, ToneKeepsFrequencyAndAmplitude) {
  RawWindow w;
  w.samples.resize(kWindowLen);
  const double f = 100.0, fs_in = kNominalRateHz;
  for (std::size_t i = 0; i < kWindowLen; ++i) {
    w.samples[i] = std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / fs_in);
  }
  const auto s = resample_window(w);
  ASSERT_EQ(s.samples.size(), kSegmentLen);
  const double step = static_cast<double>(kWindowLen) / static_cast<double>(kSegmentLen);
  double worst = 0;
  for (std::size_t n = 50; n < kSegmentLen - 50; ++n) {
    const double expect = std::sin(2 * std::numbers::pi * f * static_cast<double>(n) * step / fs_in);
    worst = std::max(worst, std::abs(s.samples[n] - expect));
  }
  EXPECT_LT(worst, 0.01);
}

TEST(Resample, AliasedToneIsSuppressed) {
  // 1500 Hz is above the ~1024 Hz output Nyquist and must not fold back.
  RawWindow w;
  w.samples.resize(kWindowLen);
  for (std::size_t i = 0; i < kWindowLen; ++i) {
    w.samples[i] = std::sin(2 * std::numbers::pi * 1500.0 * static_cast<double>(i) / kNominalRateHz);
  }
  const auto s = resample_window(w);
  double peak = 0;
  for (std::size_t n = 50; n < kSegmentLen - 50; ++n) peak = std::max(peak, std::abs(s.samples[n]));
  EXPECT_LT(peak, 0.01);
}

TEST(Resample, IsLinear) {
  const auto x = testkit::random_vector(kWindowLen, 1);
  const auto y = testkit::random_vector(kWindowLen, 2);
  const double a = 1.75, b = -0.4;
  std::vector<double> z(kWindowLen);
  for (std::size_t i = 0; i < kWindowLen; ++i) z[i] = a * x[i] + b * y[i];
  const auto& r = cached_resampler(kWindowLen, kSegmentLen);
  const auto rx = r.apply(x), ry = r.apply(y), rz = r.apply(z);
  std::vector<double> combo(kSegmentLen);
  for (std::size_t i = 0; i < kSegmentLen; ++i) combo[i] = a * rx[i] + b * ry[i];
  EXPECT_LT(testkit::rel_error(rz, combo), 1e-9);
}

TEST(Resample, LengthAndRangeChecks) {
  EXPECT_NO_THROW(Resampler(500, 2000));
  EXPECT_THROW(Resampler(499, 2000), InputError);
  EXPECT_THROW(Resampler(0, 10), InputError);
  EXPECT_THROW(Resampler(10, 0), InputError);
  const Resampler r(100, 40);
  std::vector<double> out(40);
  EXPECT_THROW(r.apply(std::vector<double>(99), out), InputError);
  RawWindow empty;
  EXPECT_THROW(resample_window(empty), InputError);
}

TEST(Segments, ParallelMatchesPerRecording) {
  std::vector<Recording> recs;
  for (int k = 0; k < 3; ++k) {
    Recording r;
    r.samples = testkit::random_vector(kWindowLen * static_cast<std::size_t>(k + 1) + 17, 10 + k);
    r.recording_id = "r" + std::to_string(k);
    r.subject_id = "s" + std::to_string(k);
    r.label = label_from_index(k);
    recs.push_back(r);
  }
  const auto all = segment_recordings(recs);
  ASSERT_EQ(all.size(), 6u);
  std::size_t i = 0;
  for (const auto& r : recs) {
    for (const auto& w : window_recording(r)) {
      const auto s = resample_window(w);
      EXPECT_EQ(all[i].samples, s.samples);
      EXPECT_EQ(all[i].label, r.label);
      EXPECT_EQ(all[i].source.recording_id, r.recording_id);
      ++i;
    }
  }
  for (const auto& s : all) EXPECT_EQ(s.samples.size(), kSegmentLen);
}

// ---- splitting ------------------------------------------------------------------

TEST(Split, NineSubjectsThirds) {
  const auto segs = segments_for({{"m1", Label::Myopathy}, {"m2", Label::Myopathy}, {"m3", Label::Myopathy},
                                  {"n1", Label::Normal},   {"n2", Label::Normal},   {"n3", Label::Normal},
                                  {"a1", Label::ALS},      {"a2", Label::ALS},      {"a3", Label::ALS}},
                                 2);
  const auto r = split_by_subject(segs, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 5);
  const auto tr = subject_set(r.train), va = subject_set(r.val), te = subject_set(r.test);
  EXPECT_EQ(tr.size(), 3u);
  EXPECT_EQ(va.size(), 3u);
  EXPECT_EQ(te.size(), 3u);
  for (const auto& s : tr) {
    EXPECT_FALSE(va.count(s));
    EXPECT_FALSE(te.count(s));
  }
  for (const auto& s : va) EXPECT_FALSE(te.count(s));
  for (const auto* part : {&r.train, &r.val, &r.test}) {
    std::set<Label> labels;
    for (const auto& s : *part) labels.insert(s.label);
    EXPECT_EQ(labels.size(), 3u);
  }
}

TEST(Split, Deterministic) {
  const auto segs = synth_dataset(3, 12, 6);
  const auto a = split_by_subject(segs, {}, 11);
  const auto b = split_by_subject(segs, {}, 11);
  EXPECT_EQ(subject_set(a.train), subject_set(b.train));
  EXPECT_EQ(subject_set(a.val), subject_set(b.val));
  EXPECT_EQ(subject_set(a.test), subject_set(b.test));
}

TEST(Split, TooFewSubjects) {
  const auto segs = segments_for({{"m1", Label::Myopathy}, {"n1", Label::Normal}}, 3);
  try {
    split_by_subject(segs, {}, 0);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("cannot build subject-disjoint split"), std::string::npos);
  }
}

TEST(Split, RatiosValidated) {
  const auto segs = synth_dataset(1, 3, 3);
  EXPECT_THROW(split_by_subject(segs, {0.5, 0.2, 0.2}, 0), InputError);
  EXPECT_THROW(split_by_subject(segs, {1.0, 0.0, 0.0}, 0), InputError);
}

TEST(Split, DisjointOverRandomManifests) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::string, Label>> subjects;
    for (int c = 0; c < kNumClasses; ++c) {
      const int n = 3 + static_cast<int>(rng() % 6);
      for (int k = 0; k < n; ++k) subjects.push_back({"c" + std::to_string(c) + "s" + std::to_string(k), label_from_index(c)});
    }
    const auto segs = segments_for(subjects, 1 + rng() % 3);
    const auto r = split_by_subject(segs, {}, seed);
    EXPECT_EQ(r.train.size() + r.val.size() + r.test.size(), segs.size());
    const auto tr = subject_set(r.train), va = subject_set(r.val), te = subject_set(r.test);
    for (const auto& s : tr) ASSERT_TRUE(!va.count(s) && !te.count(s)) << "seed " << seed;
    for (const auto& s : va) ASSERT_FALSE(te.count(s)) << "seed " << seed;
  }
}

// ---- synthetic data ---------------------------------------------------------------

TEST(Synth, CountsAndLabels) {
  const auto d = synth_dataset(7, 10, 2);
  ASSERT_EQ(d.size(), 30u);
  std::array<int, 3> per{};
  std::set<std::string> subjects;
  for (const auto& s : d) {
    ++per[static_cast<std::size_t>(label_index(s.label))];
    EXPECT_EQ(s.samples.size(), kSegmentLen);
    subjects.insert(s.subject_id);
  }
  EXPECT_EQ(per, (std::array<int, 3>{10, 10, 10}));
  EXPECT_EQ(subjects.size(), 6u);
}

TEST(Synth, BitwiseDeterministic) {
  const auto a = synth_dataset(7, 4, 2), b = synth_dataset(7, 4, 2), c = synth_dataset(8, 4, 2);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].samples, b[i].samples);
  EXPECT_NE(a[0].samples, c[0].samples);
}

TEST(Synth, MyopathyEnergyBelow200Hz) {
  // Direct DFT energy integral over the full segment.
  const double fs = static_cast<double>(kSegmentLen) * kNominalRateHz / static_cast<double>(kWindowLen);
  for (const auto& s : synth_dataset(7, 3, 3)) {
    if (s.label != Label::Myopathy) continue;
    const std::size_t N = s.samples.size();
    double low = 0, total = 0;
    for (std::size_t k = 0; k <= N / 2; ++k) {
      double re = 0, im = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const double a = 2 * std::numbers::pi * static_cast<double>((k * n) % N) / static_cast<double>(N);
        re += s.samples[n] * std::cos(a);
        im -= s.samples[n] * std::sin(a);
      }
      const double e = re * re + im * im;
      total += e;
      if (static_cast<double>(k) * fs / static_cast<double>(N) < 200.0) low += e;
    }
    EXPECT_GT(low / total, 0.8);
  }
}

TEST(Synth, SubjectGainRange) {
  for (std::size_t s = 0; s < 50; ++s) {
    const double g = synth_subject_gain(9, Label::Normal, s);
    EXPECT_GE(g, 0.5);
    EXPECT_LE(g, 2.0);
    EXPECT_EQ(g, synth_subject_gain(9, Label::Normal, s));
  }
  EXPECT_THROW(synth_dataset(1, 0, 1), InputError);
}
