// semg: command-line front end for the EMG classification pipeline.
//
//   semg synth     --seed 7 --per-class 10 --out data/
//   semg featurize --manifest data/manifest.csv --out feats/
//   semg train     --features feats/ --out run/
//   semg evaluate  --model run/model.smdl --features feats/ --out report/
//   semg predict   --model run/model.smdl --signal rec.semg
//
// Every setting lives in a `[section] key = value` config file (--config) and
// is mirrored as a `--section.key` flag. Precedence: flag > file > default.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "semg/binio.hpp"
#include "semg/dsp.hpp"
#include "semg/errors.hpp"
#include "semg/eval.hpp"
#include "semg/ingest.hpp"
#include "semg/model.hpp"
#include "semg/train.hpp"

namespace fs = std::filesystem;
using namespace semg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitDataset = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitMismatch = 5;
constexpr int kExitUsage = 64;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { Int, Real, Bool, Text };

struct Setting {
  std::string key;  // "section.key"
  Kind kind;
  std::string value;
  std::string help;
};

std::vector<Setting> default_settings() {
  return {
      {"run.seed", Kind::Int, "0", "global seed (model init, shuffling, splits, synthesis)"},
      {"paths.manifest", Kind::Text, "", "dataset manifest CSV"},
      {"paths.features", Kind::Text, "", "feature directory holding train/val/test.sftr"},
      {"paths.model", Kind::Text, "", "model file"},
      {"paths.out", Kind::Text, "", "output directory"},
      {"ingest.txt_rate", Kind::Real, "24000", "sample rate assumed for txt signal files (Hz)"},
      {"ingest.split_train", Kind::Real, "0.6", "train fraction of subjects for auto splits"},
      {"ingest.split_val", Kind::Real, "0.2", "validation fraction of subjects for auto splits"},
      {"ingest.split_test", Kind::Real, "0.2", "test fraction of subjects for auto splits"},
      {"dsp.n_fft", Kind::Int, "256", "STFT frame length"},
      {"dsp.hop", Kind::Int, "64", "STFT hop"},
      {"dsp.delta_width", Kind::Int, "9", "regression delta width in frames (odd)"},
      {"dsp.delta_mode", Kind::Text, "regression", "delta variant: regression | difference"},
      {"model.stem_channels", Kind::Int, "16", "stem conv output channels"},
      {"model.feature_channels", Kind::Int, "32", "feature block channels"},
      {"model.attention_hidden", Kind::Int, "32", "attention bottleneck width"},
      {"model.kernel", Kind::Int, "3", "conv kernel size (odd)"},
      {"model.standardize", Kind::Bool, "true", "per-channel z-score of the input features"},
      {"train.lr", Kind::Real, "0.001", "learning rate"},
      {"train.batch_size", Kind::Int, "32", "mini-batch size (>= 2)"},
      {"train.max_epochs", Kind::Int, "100", "epoch limit"},
      {"train.patience", Kind::Int, "10", "early-stopping patience in epochs"},
      {"train.optimizer", Kind::Text, "adam", "adam | sgd"},
      {"train.momentum", Kind::Real, "0.9", "SGD momentum"},
      {"train.class_weighting", Kind::Bool, "false", "inverse-frequency loss weights"},
      {"train.checkpoint", Kind::Bool, "false", "write <out>/checkpoint after every epoch"},
      {"synth.per_class", Kind::Int, "10", "recordings per class"},
      {"synth.subjects", Kind::Int, "5", "subjects per class"},
      {"synth.samples", Kind::Int, "23437", "samples per recording"},
      {"synth.rate", Kind::Int, "24000", "sample rate (Hz)"},
  };
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InputError(key + ": expected a boolean, got '" + v + "'");
}

class RunConfig {
 public:
  RunConfig() : settings_(default_settings()) {}

  std::vector<Setting>& settings() { return settings_; }

  void set(const std::string& key, const std::string& value) { find(key).value = value; }
  bool has(const std::string& key) const {
    for (const auto& s : settings_)
      if (s.key == key) return true;
    return false;
  }

  const std::string& text(const std::string& key) const { return find(key).value; }
  std::uint64_t u64(const std::string& key) const {
    const auto& v = text(key);
    try {
      std::size_t used = 0;
      if (!v.empty() && v[0] != '-') {
        auto x = std::stoull(v, &used);
        if (used == v.size()) return x;
      }
    } catch (const std::exception&) {
    }
    throw InputError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  std::uint32_t u32(const std::string& key) const {
    auto x = u64(key);
    if (x > 0xffffffffULL) throw InputError(key + ": value out of range");
    return static_cast<std::uint32_t>(x);
  }
  double real(const std::string& key) const {
    const auto& v = text(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used == v.size() && std::isfinite(x)) return x;
    } catch (const std::exception&) {
    }
    throw InputError(key + ": expected a number, got '" + v + "'");
  }
  bool flag(const std::string& key) const { return parse_bool(key, text(key)); }
  fs::path path(const std::string& key) const {
    const auto& v = text(key);
    if (v.empty()) throw UsageError("missing --" + key);
    return fs::path(v);
  }

  /// Reads `[section] key = value` lines; unknown keys are a usage error.
  void apply_file(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw InputError("cannot read config " + file.string());
    CLI::ConfigINI ini;
    for (const auto& item : ini.from_config(in)) {
      if (item.name == "++" || item.name == "--") continue;  // section markers
      std::string key;
      for (const auto& p : item.parents) key += p + ".";
      key += item.name;
      if (!has(key)) throw UsageError("unknown config key '" + key + "' in " + file.string());
      if (item.inputs.size() != 1) throw InputError("config key '" + key + "' needs exactly one value");
      set(key, item.inputs[0]);
    }
  }

  void validate() const {
    for (const auto& s : settings_) {
      switch (s.kind) {
        case Kind::Int: u64(s.key); break;
        case Kind::Real: real(s.key); break;
        case Kind::Bool: flag(s.key); break;
        case Kind::Text: break;
      }
    }
  }

  nlohmann::ordered_json json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& s : settings_) {
      const auto dot = s.key.find('.');
      const auto section = s.key.substr(0, dot), name = s.key.substr(dot + 1);
      switch (s.kind) {
        case Kind::Int: j[section][name] = u64(s.key); break;
        case Kind::Real: j[section][name] = real(s.key); break;
        case Kind::Bool: j[section][name] = flag(s.key); break;
        case Kind::Text: j[section][name] = s.value; break;
      }
    }
    return j;
  }

 private:
  Setting& find(const std::string& key) {
    for (auto& s : settings_)
      if (s.key == key) return s;
    throw UsageError("unknown setting " + key);
  }
  const Setting& find(const std::string& key) const { return const_cast<RunConfig*>(this)->find(key); }

  std::vector<Setting> settings_;
};

/// Flags registered on one subcommand; resolved into a RunConfig after parsing.
struct Flags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_setting_flags(CLI::App* sub, Flags& flags, const std::map<std::string, std::string>& aliases) {
  sub->add_option("--config", flags.config_file, "INI config file ([section] key = value)")->check(CLI::ExistingFile);
  for (const auto& s : default_settings()) {
    std::string names = "--" + s.key;
    if (auto it = aliases.find(s.key); it != aliases.end()) names = it->second + "," + names;
    auto* opt = sub->add_option(names, flags.values[s.key], s.help);
    if (!s.value.empty()) opt->default_str(s.value);
    opt->group(aliases.count(s.key) ? "Options" : "Settings");
    flags.options[s.key] = opt;
  }
}

RunConfig resolve(const Flags& flags) {
  RunConfig cfg;
  if (!flags.config_file.empty()) cfg.apply_file(flags.config_file);
  for (const auto& [key, opt] : flags.options) {
    if (opt->count() > 0) cfg.set(key, flags.values.at(key));
  }
  cfg.validate();
  return cfg;
}

dsp::FeatureConfig feature_config(const RunConfig& cfg) {
  dsp::FeatureConfig f;
  f.n_fft = cfg.u64("dsp.n_fft");
  f.hop = cfg.u64("dsp.hop");
  f.delta_width = cfg.u64("dsp.delta_width");
  const auto& mode = cfg.text("dsp.delta_mode");
  if (mode == "regression") {
    f.delta_mode = dsp::DeltaMode::Regression;
  } else if (mode == "difference") {
    f.delta_mode = dsp::DeltaMode::Difference;
  } else {
    throw InputError("dsp.delta_mode: expected regression or difference, got '" + mode + "'");
  }
  if (f.n_fft < 2 || f.n_fft % 2 != 0) throw InputError("dsp.n_fft must be even and >= 2");
  if (f.hop == 0) throw InputError("dsp.hop must be positive");
  if (f.delta_width < 3 || f.delta_width % 2 == 0) throw InputError("dsp.delta_width must be odd and >= 3");
  return f;
}

model::ModelConfig model_config(const RunConfig& cfg, std::uint32_t freq, std::uint32_t frames) {
  model::ModelConfig m;
  m.stem_channels = cfg.u32("model.stem_channels");
  m.feature_channels = cfg.u32("model.feature_channels");
  m.attention_hidden = cfg.u32("model.attention_hidden");
  m.kernel_h = m.kernel_w = cfg.u32("model.kernel");
  m.input_freq = freq;
  m.input_frames = frames;
  m.input_channels = static_cast<std::uint32_t>(dsp::kChannels);
  m.standardize = cfg.flag("model.standardize");
  m.seed = cfg.u64("run.seed");
  m.validate();
  return m;
}

/// Input dims implied by the dsp settings.
std::pair<std::uint32_t, std::uint32_t> feature_dims(const RunConfig& cfg) {
  const auto f = feature_config(cfg);
  return {static_cast<std::uint32_t>(f.n_fft / 2 + 1), static_cast<std::uint32_t>(kSegmentLen / f.hop + 1)};
}

std::string shape_line(std::string_view name, const dsp::FeatureSet& set, std::pair<std::size_t, std::size_t> dims) {
  std::ostringstream out;
  out << name << " (" << set.size() << ", " << dims.first << ", " << dims.second << ", " << dsp::kChannels << ")";
  return out.str();
}

void check_dims(const dsp::FeatureSet& set, std::uint32_t freq, std::uint32_t frames, const fs::path& file) {
  for (const auto& ft : set.features) {
    if (ft.freq != freq || ft.frames != frames) {
      throw ArtifactMismatch(file.string() + ": feature shape (" + std::to_string(ft.freq) + ", " +
                             std::to_string(ft.frames) + ") does not match the configured (" + std::to_string(freq) +
                             ", " + std::to_string(frames) + ")");
    }
  }
}

// ---- subcommands --------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
  const auto out = cfg.path("paths.out");
  const auto seed = cfg.u64("run.seed");
  const auto per_class = cfg.u64("synth.per_class");
  const auto subjects = cfg.u64("synth.subjects");
  const auto samples = cfg.u64("synth.samples");
  const auto rate = cfg.u32("synth.rate");
  if (subjects == 0) throw InputError("synth.subjects must be positive");
  if (samples == 0) throw InputError("synth.samples must be positive");
  if (rate == 0) throw InputError("synth.rate must be positive");
  fs::create_directories(out);

  DatasetManifest manifest;
  for (int c = 0; c < kNumClasses; ++c) {
    const Label label = label_from_index(c);
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t subject = i % subjects;
      std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(i), 0x51c7u};
      std::uint32_t words[2];
      sq.generate(words, words + 2);
      const std::uint64_t file_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
      const auto x = synth_signal(label, samples, rate, synth_subject_gain(seed, label, subject), file_seed);
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03zu.semg", std::string(label_name(label)).c_str(), i);
      save_recording_semg(out / name, x, rate);
      manifest.entries.push_back({name, "semg", label, synth_subject_id(label, subject), Split::Auto});
    }
  }
  write_manifest(out / "manifest.csv", manifest);
  std::cout << "wrote " << manifest.entries.size() << " recordings and " << (out / "manifest.csv").string() << "\n";
  return kExitOk;
}

int cmd_featurize(const RunConfig& cfg) {
  const auto manifest_path = cfg.path("paths.manifest");
  const auto out = cfg.path("paths.out");
  const auto fcfg = feature_config(cfg);
  const double txt_rate = cfg.real("ingest.txt_rate");
  const SplitRatios ratios{cfg.real("ingest.split_train"), cfg.real("ingest.split_val"),
                           cfg.real("ingest.split_test")};

  const auto manifest = read_manifest(manifest_path);
  if (manifest.entries.empty()) throw InputError("manifest " + manifest_path.string() + " has no entries");

  std::vector<Recording> recs;
  recs.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto r = load_recording(e.path, e.format, txt_rate);
    r.label = e.label;
    r.subject_id = e.subject_id;
    if (r.samples.size() < kWindowLen) {
      std::cerr << "warning: " << e.path.string() << " is shorter than one window and yields no segments\n";
    }
    recs.push_back(std::move(r));
  }
  const auto segments = segment_recordings(recs);

  // Segments come back in recording order, floor(len / window) per recording.
  std::vector<Segment> fixed[3];
  std::vector<Segment> autos;
  std::size_t next = 0;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const std::size_t n = recs[r].samples.size() / kWindowLen;
    for (std::size_t k = 0; k < n; ++k, ++next) {
      const auto split = manifest.entries[r].split;
      if (split == Split::Auto) {
        autos.push_back(segments[next]);
      } else {
        fixed[static_cast<int>(split)].push_back(segments[next]);
      }
    }
  }
  if (next != segments.size()) throw InputError("internal: segment count mismatch");
  if (!autos.empty()) {
    auto parts = split_by_subject(autos, ratios, cfg.u64("run.seed"));
    for (auto* dst : {&parts.train, &parts.val, &parts.test}) {
      const int idx = dst == &parts.train ? 0 : dst == &parts.val ? 1 : 2;
      fixed[idx].insert(fixed[idx].end(), dst->begin(), dst->end());
    }
  }

  fs::create_directories(out);
  // Provenance of every feature record, in file order.
  std::ostringstream index;
  index << "split,record,label,subject,recording,window\n";
  for (int s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < fixed[s].size(); ++i) {
      const auto& seg = fixed[s][i];
      index << split_name(static_cast<Split>(s)) << ',' << i << ',' << label_name(seg.label) << ','
            << seg.subject_id << ',' << seg.source.recording_id << ',' << seg.source.window_index << '\n';
    }
  }
  binio::write_text_atomic(out / "segments.csv", index.str());

  const auto dims = feature_dims(cfg);
  for (int s = 0; s < 3; ++s) {
    dsp::FeatureSet set;
    set.features = dsp::featurize_batch(fixed[s], fcfg);
    for (const auto& seg : fixed[s]) set.labels.push_back(seg.label);
    const std::string name(split_name(static_cast<Split>(s)));
    dsp::write_feature_file(out / (name + ".sftr"), set);
    std::cout << shape_line(name, set, dims) << "\n";
  }
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  const auto features = cfg.path("paths.features");
  const auto out = cfg.path("paths.out");
  const auto train_set = dsp::read_feature_file(features / "train.sftr");
  const auto val_set = dsp::read_feature_file(features / "val.sftr");
  const auto [freq, frames] = feature_dims(cfg);
  check_dims(train_set, freq, frames, features / "train.sftr");
  check_dims(val_set, freq, frames, features / "val.sftr");

  const auto mcfg = model_config(cfg, freq, frames);
  train::TrainConfig tcfg;
  tcfg.lr = cfg.real("train.lr");
  tcfg.batch_size = cfg.u64("train.batch_size");
  tcfg.max_epochs = cfg.u64("train.max_epochs");
  tcfg.patience = cfg.u64("train.patience");
  tcfg.seed = cfg.u64("run.seed");
  tcfg.class_weighting = cfg.flag("train.class_weighting");
  tcfg.momentum = cfg.real("train.momentum");
  const auto& opt = cfg.text("train.optimizer");
  if (opt == "adam") {
    tcfg.optimizer = train::Optimizer::Adam;
  } else if (opt == "sgd") {
    tcfg.optimizer = train::Optimizer::SgdMomentum;
  } else {
    throw InputError("train.optimizer: expected adam or sgd, got '" + opt + "'");
  }
  if (cfg.flag("train.checkpoint")) tcfg.checkpoint_dir = out / "checkpoint";
  tcfg.validate();

  fs::create_directories(out);
  auto state = model::init<float>(mcfg, mcfg.seed);
  auto result = train::train(std::move(state), train_set, val_set, tcfg, [](const train::EpochRecord& r) {
    std::printf("epoch %zu train_loss %.6f train_acc %.4f val_loss %.6f val_acc %.4f\n", r.epoch, r.train_loss,
                r.train_acc, r.val_loss, r.val_acc);
    std::fflush(stdout);
  });

  model::save(result.best, out / "model.smdl");
  binio::write_text_atomic(out / "history.csv", train::history_csv(result.history));
  nlohmann::ordered_json summary;
  summary["best_epoch"] = result.history.best_epoch;
  summary["epochs_run"] = result.history.epochs.size();
  summary["initial_val_acc"] = result.history.initial_val_acc;
  summary["train_records"] = train_set.size();
  summary["val_records"] = val_set.size();
  summary["config"] = cfg.json();
  binio::write_text_atomic(out / "train.json", summary.dump(2) + "\n");
  std::printf("best epoch %zu, model written to %s\n", result.history.best_epoch,
              (out / "model.smdl").string().c_str());
  return kExitOk;
}

int parse_label_cell(const std::string& cell, std::size_t line_no) {
  if (cell.size() == 1 && cell[0] >= '0' && cell[0] <= '2') return cell[0] - '0';
  try {
    return label_index(parse_label(cell));
  } catch (const InputError&) {
    throw InputError("predictions line " + std::to_string(line_no) + ": bad label '" + cell + "'");
  }
}

/// CSV with header `true,pred`; cells are label names or class indices.
eval::ConfusionMatrix read_predictions(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(file.string() + ": empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "true,pred") throw InputError(file.string() + ": expected header 'true,pred'");
  std::vector<int> truth, pred;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw InputError("predictions line " + std::to_string(line_no) + ": expected 2 fields");
    truth.push_back(parse_label_cell(line.substr(0, comma), line_no));
    pred.push_back(parse_label_cell(line.substr(comma + 1), line_no));
  }
  return eval::confusion(truth, pred);
}

int cmd_evaluate(const RunConfig& cfg, const std::string& predictions) {
  const auto out = cfg.path("paths.out");
  nlohmann::ordered_json extra;
  extra["settings"] = cfg.json();
  eval::Report report;
  if (!predictions.empty()) {
    const auto cm = read_predictions(predictions);
    if (cm.total() == 0) throw InputError("no predictions in " + predictions);
    report = eval::make_report(cm);
    extra["predictions"] = predictions;
  } else {
    const auto features = cfg.path("paths.features");
    const auto model_path = cfg.path("paths.model");
    const auto test_set = dsp::read_feature_file(features / "test.sftr");
    if (test_set.size() == 0) throw InputError(features.string() + "/test.sftr: empty test split");
    const auto [freq, frames] = feature_dims(cfg);
    const auto state = model::load<float>(model_path, model_config(cfg, freq, frames));
    check_dims(test_set, freq, frames, features / "test.sftr");
    report = eval::evaluate(state, test_set);
    extra["model"] = model_path.string();
    extra["model_seed"] = state.config.seed;
  }
  fs::create_directories(out);
  binio::write_text_atomic(out / "report.json", eval::report_json(report, extra.dump()) + "\n");
  eval::render_confusion(report.confusion, out / "confusion");
  std::cout << "overall_accuracy " << eval::format_percent(report.overall) << "%\n"
            << "macro_sensitivity " << eval::format_percent(report.macro_sensitivity) << "%\n"
            << "macro_specificity " << eval::format_percent(report.macro_specificity) << "%\n";
  return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const std::string& signal, std::string format) {
  const auto model_path = cfg.path("paths.model");
  const auto fcfg = feature_config(cfg);
  const auto [freq, frames] = feature_dims(cfg);
  const auto state = model::load<float>(model_path, model_config(cfg, freq, frames));
  if (format.empty()) format = fs::path(signal).extension() == ".txt" ? "txt" : "semg";
  const auto rec = load_recording(signal, format, cfg.real("ingest.txt_rate"));
  if (rec.samples.size() < kWindowLen) {
    throw InputError(signal + ": " + std::to_string(rec.samples.size()) + " samples is shorter than one window (" +
                     std::to_string(kWindowLen) + ")");
  }
  std::vector<Segment> segments;
  for (const auto& w : window_recording(rec)) segments.push_back(resample_window(w));
  const auto feats = dsp::featurize_batch(segments, fcfg);

  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < feats.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(feats.size(), start + kChunk); ++i) idx.push_back(i);
    const auto x = model::stack_features<float>(feats, idx);
    const auto res = model::forward_infer(state, x);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const int k = model::predict_row(res.probs, b);
      std::printf("%zu %.6f %.6f %.6f %s\n", idx[b], static_cast<double>(res.probs[b * 3]),
                  static_cast<double>(res.probs[b * 3 + 1]), static_cast<double>(res.probs[b * 3 + 2]),
                  std::string(label_name(label_from_index(k))).c_str());
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EMG spectrogram classifier: synthesize, featurize, train, evaluate, predict"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Flags f_synth, f_feat, f_train, f_eval, f_pred;
  auto* synth = app.add_subcommand("synth", "Write synthetic recordings and a manifest");
  add_setting_flags(synth, f_synth,
                    {{"run.seed", "--seed"}, {"synth.per_class", "--per-class"}, {"paths.out", "--out"}});
  auto* feat = app.add_subcommand("featurize", "Window, resample and featurize a manifest into train/val/test.sftr");
  add_setting_flags(feat, f_feat, {{"run.seed", "--seed"}, {"paths.manifest", "--manifest"}, {"paths.out", "--out"}});
  auto* tr = app.add_subcommand("train", "Train a model on featurized data");
  add_setting_flags(tr, f_train, {{"run.seed", "--seed"}, {"paths.features", "--features"}, {"paths.out", "--out"}});
  auto* ev = app.add_subcommand("evaluate", "Evaluate a model on the test split and write reports");
  std::string predictions;
  ev->add_option("--predictions", predictions, "CSV (true,pred) to evaluate instead of a model")
      ->check(CLI::ExistingFile);
  add_setting_flags(ev, f_eval, {{"paths.model", "--model"}, {"paths.features", "--features"}, {"paths.out", "--out"}});
  auto* pr = app.add_subcommand("predict", "Classify each window of one signal file");
  std::string signal, format;
  pr->add_option("--signal", signal, "signal file")->required();
  pr->add_option("--format", format, "semg | txt (default: from the file extension)")
      ->check(CLI::IsMember({"semg", "txt"}));
  add_setting_flags(pr, f_pred, {{"paths.model", "--model"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(resolve(f_synth));
    if (feat->parsed()) return cmd_featurize(resolve(f_feat));
    if (tr->parsed()) return cmd_train(resolve(f_train));
    if (ev->parsed()) return cmd_evaluate(resolve(f_eval), predictions);
    if (pr->parsed()) return cmd_predict(resolve(f_pred), signal, format);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kExitDataset;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ArtifactMismatch& e) {
    std::cerr << "artifact mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitUsage;
}
