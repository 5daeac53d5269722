#include "semg/train.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "semg/binio.hpp"
#include "semg/errors.hpp"
#include "semg/nn/fpenv.hpp"
#include "semg/nn/optim.hpp"

namespace semg::train {

void TrainConfig::validate() const {
  if (batch_size < 2) throw InputError("batch_size must be >= 2");
  if (patience < 1) throw InputError("patience must be >= 1");
  if (max_epochs < 1) throw InputError("max_epochs must be >= 1");
  if (!(lr >= 0)) throw InputError("lr must be non-negative");
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t epoch) {
  if (n == 0) throw DatasetError("cannot batch an empty dataset");
  if (batch_size == 0) throw InputError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(epoch), 0xba7cu};
  std::mt19937_64 rng(sq);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() < 2) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

std::vector<double> class_weights(const std::vector<Label>& labels) {
  std::array<double, kNumClasses> count{};
  for (auto l : labels) count[static_cast<std::size_t>(label_index(l))] += 1;
  std::array<double, kNumClasses> w{};
  const double n = static_cast<double>(labels.size());
  int present = 0;
  for (auto c : count) present += c > 0 ? 1 : 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) w[c] = count[c] > 0 ? n / (present * count[c]) : 0.0;
  return {w.begin(), w.end()};
}

Evaluation evaluate_set(const model::ModelState<float>& state, const dsp::FeatureSet& set, std::size_t chunk) {
  Evaluation ev;
  if (set.size() == 0) return ev;
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += chunk) {
    std::vector<std::size_t> idx;
    std::vector<int> labels;
    for (std::size_t i = start; i < std::min(set.size(), start + chunk); ++i) {
      idx.push_back(i);
      labels.push_back(label_index(set.labels[i]));
    }
    auto x = model::stack_features<float>(set.features, idx);
    auto out = model::forward_infer(state, x);
    auto sx = nn::softmax_xent(out.logits, std::span<const int>(labels));
    loss += sx.loss * static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const int p = model::predict_row(out.probs, b);
      ev.predictions.push_back(p);
      if (p == labels[b]) ++correct;
    }
  }
  ev.loss = loss / static_cast<double>(set.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return ev;
}

namespace {

std::string describe_nonfinite(const dsp::FeatureSet& set, const std::vector<std::size_t>& batch,
                               const std::vector<double>& per_sample) {
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ft = set.features[batch[b]];
    for (float v : ft.values) {
      if (!std::isfinite(v)) return "record " + std::to_string(batch[b]) + " has non-finite feature values";
    }
  }
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (!std::isfinite(per_sample[b])) return "record " + std::to_string(batch[b]) + " produced a non-finite loss";
  }
  return "no single record isolated";
}

}  // namespace

TrainResult train(model::ModelState<float> state, const dsp::FeatureSet& train_set, const dsp::FeatureSet& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw DatasetError("training set is empty");
  if (val_set.size() == 0) throw DatasetError("validation set is empty");
  if (train_set.size() < 2) throw DatasetError("training set needs at least 2 records for batch normalisation");
  std::array<bool, kNumClasses> present{};
  for (auto l : train_set.labels) present[static_cast<std::size_t>(label_index(l))] = true;
  for (int c = 0; c < kNumClasses; ++c) {
    if (!present[static_cast<std::size_t>(c)]) {
      throw DatasetError("training set has no records of class " + std::string(label_name(label_from_index(c))));
    }
  }

  // A corrupt record would otherwise poison the standardization and every loss.
  for (const auto* set : {&train_set, &val_set}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      for (float v : set->features[i].values) {
        if (!std::isfinite(v)) {
          throw NumericalError(std::string(set == &train_set ? "training" : "validation") + " record " +
                               std::to_string(i) + " has non-finite feature values");
        }
      }
    }
  }

  const nn::FlushDenormals ftz;
  const auto t0 = std::chrono::steady_clock::now();
  if (state.config.standardize) model::fit_standardization(state, train_set.features);

  const auto weights_by_class = class_weights(train_set.labels);
  nn::AdamState<float> adam;
  nn::SgdState<float> sgd;
  const nn::AdamConfig adam_cfg{cfg.lr};
  const nn::SgdConfig sgd_cfg{cfg.lr, cfg.momentum};

  TrainResult result{state, {}};
  result.history.initial_val_acc = evaluate_set(state, val_set).accuracy;
  double best_acc = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = make_batches(train_set.size(), cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      std::vector<int> labels;
      std::vector<double> weights;
      for (auto i : batch) {
        labels.push_back(label_index(train_set.labels[i]));
        if (cfg.class_weighting) weights.push_back(weights_by_class[static_cast<std::size_t>(labels.back())]);
      }
      auto x = model::stack_features<float>(train_set.features, batch);
      model::ForwardCache<float> cache;
      auto out = model::forward(state, x, nn::Mode::Train, &cache);
      auto sx = nn::softmax_xent(out.logits, std::span<const int>(labels), std::span<const double>(weights));
      if (!std::isfinite(sx.loss)) {
        throw NumericalError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                             ": " + describe_nonfinite(train_set, batch, sx.per_sample_loss));
      }
      loss_sum += sx.loss * static_cast<double>(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        if (model::predict_row(out.probs, b) == labels[b]) ++correct;
      }

      model::ModelGrads<float> grads;
      model::backward(state, cache, sx.grad_logits, grads);
      auto values = model::trainable_buffers(state);
      auto gviews = model::trainable_buffers(grads);
      std::vector<nn::ParamRef<float>> refs;
      refs.reserve(values.size());
      for (std::size_t k = 0; k < values.size(); ++k) refs.push_back({values[k].second, gviews[k].second});
      if (cfg.optimizer == Optimizer::Adam) {
        nn::adam_step<float>(refs, adam, adam_cfg);
      } else {
        nn::sgd_step<float>(refs, sgd, sgd_cfg);
      }
    }

    const auto val = evaluate_set(state, val_set);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()),
                    static_cast<double>(correct) / static_cast<double>(train_set.size()), val.loss, val.accuracy};
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_acc > best_acc) {
      best_acc = rec.val_acc;
      since_best = 0;
      if (rec.val_acc >= result.history.initial_val_acc) {
        result.best = state;
        result.history.best_epoch = epoch;
      }
    } else {
      ++since_best;
    }
    if (cfg.checkpoint_dir) checkpoint(state, result.history, *cfg.checkpoint_dir, epoch);
    if (since_best >= cfg.patience) break;
  }
  if (result.history.best_epoch == 0 && state.config.standardize) {
    // Initial state kept; it still carries the fitted standardization.
    result.best.standardization = state.standardization;
  }
  result.history.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const auto& r : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.train_loss, r.train_acc, r.val_loss,
                  r.val_acc);
    out << buf;
  }
  return out.str();
}

void checkpoint(const model::ModelState<float>& state, const TrainHistory& history, const std::filesystem::path& dir,
                std::size_t epoch) {
  try {
    std::filesystem::create_directories(dir);
    if (history.epochs.size() < epoch) {
      throw std::runtime_error("history holds " + std::to_string(history.epochs.size()) + " epochs, checkpoint asked for epoch " +
                               std::to_string(epoch));
    }
    TrainHistory upto = history;
    upto.epochs.resize(epoch);
    model::save(state, dir / "checkpoint.smdl");
    binio::write_text_atomic(dir / "history.csv", history_csv(upto));
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint to " + dir.string() + " failed: " + e.what());
  }
}

}  // namespace semg::train
