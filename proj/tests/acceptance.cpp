// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any FAIL.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "semg/binio.hpp"
#include "semg/dsp.hpp"
#include "semg/eval.hpp"
#include "semg/ingest.hpp"
#include "semg/model.hpp"
#include "semg/train.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace semg;
using testkit::numeric_grad;
using testkit::random_tensor;
using testkit::rel_error;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& what) {
  std::printf("%s [%d] %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 -------------------------------------------------------------------------------

void stft_oracle() {
  const auto t0 = Clock::now();
  const auto w = dsp::hann_periodic(dsp::kNfft);
  double worst = 0;
  std::size_t frames = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto x = testkit::random_vector(kSegmentLen, 1000 + seed);
    const auto g = dsp::stft_magnitude(x);
    const auto len = static_cast<std::ptrdiff_t>(x.size());
    for (std::size_t t = 0; t < g.cols; ++t) {
      std::vector<double> f(dsp::kNfft);
      for (std::size_t n = 0; n < dsp::kNfft; ++n) {
        std::ptrdiff_t i = static_cast<std::ptrdiff_t>(t * dsp::kHop + n) - static_cast<std::ptrdiff_t>(dsp::kNfft / 2);
        if (i < 0) i = -i;
        if (i >= len) i = 2 * (len - 1) - i;
        f[n] = w[n] * x[static_cast<std::size_t>(i)];
      }
      const auto ref = dsp::naive_dft_frame(f);
      for (std::size_t k = 0; k < g.rows; ++k) worst = std::max(worst, std::abs(g(k, t) - ref[k]));
      ++frames;
    }
  }
  const double secs = seconds_since(t0);
  report(1, worst <= 1e-10 && secs < 5.0,
         fmt("STFT vs naive DFT: max abs err %.3g over %zu frames of 100 segments (<= 1e-10), %.2f s (< 5 s)", worst,
             frames, secs));
}

// ---- 2 -------------------------------------------------------------------------------

void shape_pipeline() {
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = testkit::random_vector(kSegmentLen, seed, seed % 2 ? 1e-3 : 50.0);
    const auto ft = dsp::featurize(x);
    ok = ok && ft.freq == 129 && ft.frames == 32 && ft.channels == 2 && ft.values.size() == 129u * 32u * 2u;
  }
  const auto zero = dsp::featurize(std::vector<double>(kSegmentLen, 0.0));
  ok = ok && zero.values.size() == 129u * 32u * 2u;

  Recording rec;
  rec.samples = synth_signal(Label::Normal, 262124, kNominalRateHz, 1.0, 5);
  rec.subject_id = "n1";
  const std::vector<Recording> recs{rec};
  const auto segs = segment_recordings(recs);
  ok = ok && segs.size() == 11;
  for (const auto& s : segs) ok = ok && s.samples.size() == kSegmentLen;
  report(2, ok, fmt("shape pipeline: segments featurize to (129, 32, 2); 262124-sample recording -> %zu segments", segs.size()));
}

// ---- 3 -------------------------------------------------------------------------------

double layer_checks() {
  using namespace nn;
  double worst = 0;
  auto track = [&](double e) { worst = std::max(worst, e); };
  for (std::uint64_t s = 0; s < 20; ++s) {
    {
      auto x = random_tensor({2, 4, 5, 3}, s);
      auto p = ConvParams<double>::zeros(3, 3, 3, 2);
      testkit::randomize(p.kernel.span(), s + 1, 0.5);
      testkit::randomize(std::span<double>(p.bias), s + 2, 0.5);
      const auto w = random_tensor({2, 4, 5, 2}, s + 3);
      auto f = [&] { return testkit::dot(conv2d_forward(x, p).vec(), w.vec()); };
      ConvParams<double> g;
      const auto gx = conv2d_backward(x, p, w, g);
      track(rel_error(gx.vec(), numeric_grad(x.span(), f)));
      track(rel_error(g.kernel.vec(), numeric_grad(p.kernel.span(), f)));
      track(rel_error(g.bias, numeric_grad(std::span<double>(p.bias), f)));
    }
    {
      auto x = random_tensor({3, 2, 3, 4}, s + 10, 2.0);
      auto p = BatchNormParams<double>::identity(4);
      testkit::randomize(std::span<double>(p.gamma), s + 11);
      testkit::randomize(std::span<double>(p.beta), s + 12);
      const auto w = random_tensor(x.shape(), s + 13);
      auto f = [&] {
        auto q = p;
        return testkit::dot(batchnorm_forward(x, q, Mode::Train).vec(), w.vec());
      };
      auto q = p;
      BatchNormCache<double> cache;
      batchnorm_forward(x, q, Mode::Train, &cache);
      BatchNormGrads<double> g;
      const auto gx = batchnorm_backward(cache, p, w, g);
      track(rel_error(gx.vec(), numeric_grad(x.span(), f)));
      track(rel_error(g.gamma, numeric_grad(std::span<double>(p.gamma), f)));
      track(rel_error(g.beta, numeric_grad(std::span<double>(p.beta), f)));
    }
    {
      auto x = random_tensor({4, 6}, s + 20);
      for (auto& v : x.vec())
        if (std::abs(v) < 1e-3) v = 0.5;
      const auto w = random_tensor({4, 6}, s + 21);
      auto fr = [&] { return testkit::dot(relu_forward(x).vec(), w.vec()); };
      track(rel_error(relu_backward(x, w).vec(), numeric_grad(x.span(), fr)));
      auto fs_ = [&] { return testkit::dot(sigmoid_forward(x).vec(), w.vec()); };
      track(rel_error(sigmoid_backward(sigmoid_forward(x), w).vec(), numeric_grad(x.span(), fs_)));
    }
    {
      auto x = random_tensor({3, 7}, s + 30);
      DenseParams<double> p{random_tensor({7, 4}, s + 31), testkit::random_vector(4, s + 32)};
      const auto w = random_tensor({3, 4}, s + 33);
      auto f = [&] { return testkit::dot(dense_forward(x, p).vec(), w.vec()); };
      DenseParams<double> g;
      const auto gx = dense_backward(x, p, w, g);
      track(rel_error(gx.vec(), numeric_grad(x.span(), f)));
      track(rel_error(g.weights.vec(), numeric_grad(p.weights.span(), f)));
      track(rel_error(g.bias, numeric_grad(std::span<double>(p.bias), f)));
    }
    {
      auto z = random_tensor({4, 3}, s + 40, 2.0);
      const std::vector<int> y{0, 2, 1, 1};
      auto f = [&] { return softmax_xent(z, std::span<const int>(y)).loss; };
      track(rel_error(softmax_xent(z, std::span<const int>(y)).grad_logits.vec(), numeric_grad(z.span(), f)));
    }
  }
  return worst;
}

double model_checks() {
  const auto c = model::reduced_config();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = model::init<double>(c, seed);
    s.standardization.mean = {0.3, -0.2};
    s.standardization.std = {1.5, 0.7};
    auto x = random_tensor({3, c.input_freq, c.input_frames, 2}, seed + 100);
    const std::vector<int> labels{2, 0, 1};
    auto loss = [&] {
      auto tmp = s;
      return nn::softmax_xent(model::forward(tmp, x, nn::Mode::Train).logits, std::span<const int>(labels)).loss;
    };
    model::ForwardCache<double> cache;
    auto tmp = s;
    const auto out = model::forward(tmp, x, nn::Mode::Train, &cache);
    model::ModelGrads<double> g;
    const auto gx = model::backward(s, cache, nn::softmax_xent(out.logits, std::span<const int>(labels)).grad_logits, g);
    std::vector<double> analytic, numeric;
    auto params = model::trainable_buffers(s);
    auto grads = model::trainable_buffers(g);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto n = numeric_grad(params[i].second, loss);
      analytic.insert(analytic.end(), grads[i].second.begin(), grads[i].second.end());
      numeric.insert(numeric.end(), n.begin(), n.end());
    }
    worst = std::max(worst, rel_error(analytic, numeric));
    worst = std::max(worst, rel_error(gx.vec(), numeric_grad(x.span(), loss)));
  }
  return worst;
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const double layers = layer_checks();
  const double full = model_checks();
  const double secs = seconds_since(t0);
  report(3, layers <= 1e-5 && full <= 1e-4 && secs < 60.0,
         fmt("finite-difference gradients over 20 seeds: layers max rel err %.3g (<= 1e-5), reduced model %.3g "
             "(<= 1e-4), %.1f s (< 60 s)",
             layers, full, secs));
}

// ---- 4 -------------------------------------------------------------------------------

void metric_reconstruction() {
  const char* table[3][4] = {{"91.48", "94.49", "88.95", "90.20"},
                             {"93.33", "93.30", "95.65", "94.48"},
                             {"81.82", "98.22", "75.00", "78.26"}};
  auto matches = [&](const eval::ConfusionMatrix& cm) {
    const auto r = eval::make_report(cm);
    bool ok = eval::format_percent(r.overall) == "92.02" && eval::format_percent(r.macro_sensitivity) == "88.88" &&
              eval::format_percent(r.macro_specificity) == "95.34";
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& m = r.per_class[c];
      ok = ok && eval::format_percent(m.sensitivity) == table[c][0] && eval::format_percent(m.specificity) == table[c][1] &&
           eval::format_percent(m.precision) == table[c][2] && eval::format_percent(m.f1) == table[c][3];
    }
    return ok;
  };
  eval::ConfusionMatrix star;
  star.counts = {{{161, 14, 1}, {14, 308, 8}, {6, 0, 27}}};
  const bool fixture = matches(star);

  const std::int64_t d[3] = {161, 308, 27}, rows[3] = {176, 330, 33}, cols[3] = {181, 322, 36};
  int completions = 0, agreeing = 0;
  for (std::int64_t a01 = 0; a01 <= rows[0] - d[0]; ++a01)
    for (std::int64_t a10 = 0; a10 <= rows[1] - d[1]; ++a10)
      for (std::int64_t a20 = 0; a20 <= rows[2] - d[2]; ++a20) {
        const std::int64_t a02 = rows[0] - d[0] - a01, a12 = rows[1] - d[1] - a10, a21 = rows[2] - d[2] - a20;
        if (a02 < 0 || a12 < 0 || a21 < 0) continue;
        if (d[0] + a10 + a20 != cols[0] || a01 + d[1] + a21 != cols[1] || a02 + a12 + d[2] != cols[2]) continue;
        eval::ConfusionMatrix cm;
        cm.counts = {{{d[0], a01, a02}, {a10, d[1], a12}, {a20, a21, d[2]}}};
        ++completions;
        agreeing += matches(cm);
      }
  report(4, fixture && completions > 0 && agreeing == completions,
         fmt("published metrics: fixture reproduces 12 per-class values and 92.02/88.88/95.34 (%s); %d/%d marginal "
             "completions agree",
             fixture ? "exact" : "MISMATCH", agreeing, completions));
}

// ---- 5, 6 ------------------------------------------------------------------------------

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" SEMG_CLI_PATH "' " + args + " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct PipelineRun {
  bool ok = false;
  double accuracy = 0;
  double seconds = 0;
  std::size_t epochs = 0;
  std::size_t train_n = 0, val_n = 0, test_n = 0;
};

PipelineRun end_to_end(const fs::path& dir) {
  PipelineRun r;
  const auto t0 = Clock::now();
  const char* steps[] = {
      "synth --seed 7 --per-class 100 --synth.subjects 5 --out data",
      "featurize --seed 7 --manifest data/manifest.csv --out feats",
      "train --seed 7 --features feats --out run --train.max_epochs 30",
      "evaluate --model run/model.smdl --features feats --out report",
  };
  for (const char* step : steps) {
    if (run_cli(dir, step) != 0) {
      std::printf("  step failed: %s\n", step);
      return r;
    }
  }
  r.seconds = seconds_since(t0);
  const auto rep = nlohmann::json::parse(std::ifstream(dir / "report" / "report.json"));
  const auto meta = nlohmann::json::parse(std::ifstream(dir / "run" / "train.json"));
  r.accuracy = rep["overall_accuracy"].get<double>();
  r.epochs = meta["epochs_run"].get<std::size_t>();
  r.train_n = dsp::read_feature_file(dir / "feats" / "train.sftr").size();
  r.val_n = dsp::read_feature_file(dir / "feats" / "val.sftr").size();
  r.test_n = dsp::read_feature_file(dir / "feats" / "test.sftr").size();
  r.ok = true;
  return r;
}

// Reads the featurize provenance index and checks no subject spans two splits.
bool subject_disjoint(const fs::path& feats_dir) {
  std::ifstream in(feats_dir / "segments.csv");
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::string> owner;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string split, record, label, subject;
    std::getline(row, split, ',');
    std::getline(row, record, ',');
    std::getline(row, label, ',');
    std::getline(row, subject, ',');
    const auto [it, fresh] = owner.emplace(subject, split);
    if (!fresh && it->second != split) return false;
  }
  return !owner.empty();
}

void synthetic_training_and_determinism() {
  const auto root = testkit::scratch_dir("acceptance");
  const auto a = root / "a", b = root / "b";
  fs::create_directories(a);
  fs::create_directories(b);
  const auto r = end_to_end(a);
  bool split_ok = false;
  if (r.ok) split_ok = subject_disjoint(a / "feats");
  report(5,
         r.ok && split_ok && r.accuracy >= 95.0 && r.epochs <= 30 && r.seconds < 300.0 && r.train_n == 180 &&
             r.val_n == 60 && r.test_n == 60,
         fmt("synthetic end-to-end (seed 7): split %zu/%zu/%zu subject-disjoint=%s, test accuracy %.2f%% (>= 95%%), "
             "%zu epochs (<= 30), %.1f s (< 300 s)",
             r.train_n, r.val_n, r.test_n, split_ok ? "yes" : "no", r.accuracy, r.epochs, r.seconds));

  const auto r2 = end_to_end(b);
  const bool same_model = r.ok && r2.ok &&
                          binio::read_file(a / "run" / "model.smdl") == binio::read_file(b / "run" / "model.smdl");
  const bool same_report = r.ok && r2.ok &&
                           binio::read_file(a / "report" / "report.json") ==
                               binio::read_file(b / "report" / "report.json");
  const bool same_history = r.ok && r2.ok &&
                            binio::read_file(a / "run" / "history.csv") == binio::read_file(b / "run" / "history.csv");
  report(6, same_model && same_report && same_history,
         fmt("determinism: repeated run gives byte-identical model file (%s), report (%s), history (%s)",
             same_model ? "yes" : "no", same_report ? "yes" : "no", same_history ? "yes" : "no"));
}

// ---- 7 -------------------------------------------------------------------------------

void real_data_advisory() {
  const char* manifest = std::getenv("SEMG_EMGLAB_MANIFEST");
  if (!manifest || !*manifest) {
    report(7, true,
           "real-data accuracy is advisory only (target 92% +/- 5): no dataset supplied "
           "(set SEMG_EMGLAB_MANIFEST to run it); acceptance rests on criteria 1-6 and 8");
    return;
  }
  const auto dir = testkit::scratch_dir("acceptance_real");
  const std::string m = fs::absolute(manifest).string();
  const bool ran = run_cli(dir, "featurize --manifest '" + m + "' --out feats") == 0 &&
                   run_cli(dir, "train --features feats --out run") == 0 &&
                   run_cli(dir, "evaluate --model run/model.smdl --features feats --out report") == 0;
  double acc = std::numeric_limits<double>::quiet_NaN();
  if (ran) acc = nlohmann::json::parse(std::ifstream(dir / "report" / "report.json"))["overall_accuracy"].get<double>();
  // Advisory: the pipeline must run; the accuracy band is informational.
  report(7, ran,
         fmt("real-data experiment ran=%s, test accuracy %.2f%% (advisory band 87-97%%: %s)", ran ? "yes" : "no", acc,
             ran && std::abs(acc - 92.0) <= 5.0 ? "inside" : "outside"));
}

// ---- 8 -------------------------------------------------------------------------------

void overfit_sanity() {
  const auto segs = synth_dataset(8, 1, 1);
  const auto feats = dsp::featurize_batch(segs);
  dsp::FeatureSet three;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    three.features.push_back(feats[i]);
    three.labels.push_back(segs[i].label);
  }
  train::TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  cfg.seed = 8;
  const auto t0 = Clock::now();
  const auto res = train::train(model::init<float>(model::ModelConfig{}, 8), three, three, cfg);
  double min_loss = std::numeric_limits<double>::infinity();
  std::size_t first_below = 0;
  for (const auto& e : res.history.epochs) {
    min_loss = std::min(min_loss, e.train_loss);
    if (first_below == 0 && e.train_loss < 0.01) first_below = e.epoch;
  }
  const auto rep = eval::evaluate(res.best, three);
  const bool perfect = rep.overall == eval::Rational::make(3, 3);
  report(8, three.size() == 3 && first_below > 0 && first_below <= 50 && perfect,
         fmt("overfit 3 segments: train loss < 0.01 first at epoch %zu (<= 50, min %.3g); accuracy on the same "
             "segments %s (%.1f s)",
             first_below, min_loss, eval::format_percent(rep.overall).c_str(), seconds_since(t0)));
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<void()>>> criteria{
      {1, stft_oracle},  {2, shape_pipeline}, {3, gradient_suite},
      {4, metric_reconstruction}, {5, synthetic_training_and_determinism}, {7, real_data_advisory},
      {8, overfit_sanity}};
  for (const auto& [id, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
