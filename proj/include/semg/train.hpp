#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semg/dsp.hpp"
#include "semg/model.hpp"

namespace semg::train {

enum class Optimizer : std::uint8_t { Adam, SgdMomentum };

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool class_weighting = false;
  Optimizer optimizer = Optimizer::Adam;
  double momentum = 0.9;  // SGD only
  /// When set, a checkpoint is written after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double train_acc = 0;
  double val_loss = 0;
  double val_acc = 0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// Epoch holding the best val accuracy (earliest on ties); 0 means the
  /// initial state was never beaten.
  std::size_t best_epoch = 0;
  double initial_val_acc = 0;
  double wall_time_s = 0;
};

struct TrainResult {
  model::ModelState<float> best;
  TrainHistory history;
};

/// Shuffled mini-batches; the permutation depends only on (seed, epoch).
/// A final batch of one sample is merged into the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t epoch);

/// Inverse-frequency class weights normalised so they average to 1 over the set.
std::vector<double> class_weights(const std::vector<Label>& labels);

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
  std::vector<int> predictions;
};

/// Infer-mode pass over a feature set in fixed-size chunks.
Evaluation evaluate_set(const model::ModelState<float>& state, const dsp::FeatureSet& set, std::size_t chunk = 64);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training with validation-accuracy early stopping. Fits the
/// input standardization on `train_set` when the model config asks for it.
/// Throws DatasetError (missing class, empty set) and NumericalError
/// (non-finite loss; the message names the batch and offending record).
TrainResult train(model::ModelState<float> state, const dsp::FeatureSet& train_set, const dsp::FeatureSet& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string history_csv(const TrainHistory& history);

/// Writes `checkpoint.smdl` and `history.csv` into `dir` atomically.
void checkpoint(const model::ModelState<float>& state, const TrainHistory& history, const std::filesystem::path& dir,
                std::size_t epoch);

}  // namespace semg::train
