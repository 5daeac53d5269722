#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "semg/binio.hpp"
#include "semg/errors.hpp"
#include "semg/train.hpp"
#include "support.hpp"

using namespace semg;
using namespace semg::train;

namespace {

// Small-shape features where each class lights up its own band of frequency rows.
dsp::FeatureSet banded_set(const model::ModelConfig& c, std::size_t per_class, std::uint64_t seed) {
  dsp::FeatureSet set;
  for (int cls = 0; cls < kNumClasses; ++cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      dsp::FeatureTensor ft;
      ft.freq = c.input_freq;
      ft.frames = c.input_frames;
      const auto noise = testkit::random_vector(ft.size(), seed * 1000 + static_cast<std::uint64_t>(cls) * 100 + i, 0.5);
      ft.values.resize(ft.size());
      const std::size_t row = ft.frames * 2;
      for (std::size_t k = 0; k < ft.size(); ++k) {
        const std::size_t f = k / row;
        const bool lit = f * kNumClasses / ft.freq == static_cast<std::size_t>(cls);
        ft.values[k] = static_cast<float>(noise[k] + (lit ? 3.0 : 0.0));
      }
      set.features.push_back(std::move(ft));
      set.labels.push_back(label_from_index(cls));
    }
  }
  return set;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 5;
  cfg.patience = 5;
  cfg.seed = 3;
  return cfg;
}

std::vector<std::size_t> sizes(const std::vector<std::vector<std::size_t>>& batches) {
  std::vector<std::size_t> s;
  for (const auto& b : batches) s.push_back(b.size());
  return s;
}

}  // namespace

TEST(MakeBatches, SizesFollowMergeRule) {
  EXPECT_EQ(sizes(make_batches(10, 4, 0, 1)), (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(sizes(make_batches(9, 8, 0, 1)), (std::vector<std::size_t>{9}));
  EXPECT_EQ(sizes(make_batches(9, 4, 0, 1)), (std::vector<std::size_t>{4, 5}));
  EXPECT_EQ(sizes(make_batches(1, 4, 0, 1)), (std::vector<std::size_t>{1}));
  EXPECT_THROW(make_batches(0, 4, 0, 1), DatasetError);
}

TEST(MakeBatches, PermutationDependsOnSeedAndEpoch) {
  EXPECT_EQ(make_batches(50, 8, 5, 2), make_batches(50, 8, 5, 2));
  EXPECT_NE(make_batches(50, 8, 5, 2), make_batches(50, 8, 5, 3));
  EXPECT_NE(make_batches(50, 8, 5, 2), make_batches(50, 8, 6, 2));
  for (std::size_t n : {2u, 7u, 33u, 64u}) {
    std::set<std::size_t> seen;
    for (const auto& b : make_batches(n, 8, 1, 1)) {
      EXPECT_GE(b.size(), 2u);
      seen.insert(b.begin(), b.end());
    }
    EXPECT_EQ(seen.size(), n);
    EXPECT_EQ(*seen.rbegin(), n - 1);
  }
}

TEST(TrainConfigCheck, RejectsInvalid) {
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), InputError);
  c = TrainConfig{};
  c.patience = 0;
  EXPECT_THROW(c.validate(), InputError);
  c = TrainConfig{};
  c.lr = -1;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(ClassWeights, InverseFrequencyAveragingToOne) {
  const std::vector<Label> labels{Label::Myopathy, Label::Myopathy, Label::Myopathy, Label::Normal, Label::ALS,
                                  Label::ALS};
  const auto w = class_weights(labels);
  EXPECT_NEAR(w[0], 6.0 / (3 * 3), 1e-15);
  EXPECT_NEAR(w[1], 6.0 / (3 * 1), 1e-15);
  EXPECT_NEAR(w[2], 6.0 / (3 * 2), 1e-15);
  double mean = 0;
  for (auto l : labels) mean += w[static_cast<std::size_t>(label_index(l))];
  EXPECT_NEAR(mean / 6.0, 1.0, 1e-15);
}

TEST(ClassWeights, WeightedBatchLossMatchesDirectSum) {
  const auto c = model::reduced_config();
  const auto set = banded_set(c, 3, 1);
  dsp::FeatureSet skew;
  for (std::size_t i : {0u, 1u, 2u, 3u, 6u}) {
    skew.features.push_back(set.features[i]);
    skew.labels.push_back(set.labels[i]);
  }
  const auto w = class_weights(skew.labels);
  const auto s = model::init<float>(c, 1);
  const auto out = model::forward_infer(s, model::stack_features<float>(skew.features));
  std::vector<int> y;
  std::vector<double> wt;
  for (auto l : skew.labels) {
    y.push_back(label_index(l));
    wt.push_back(w[static_cast<std::size_t>(y.back())]);
  }
  const auto sx = nn::softmax_xent(out.logits, std::span<const int>(y), std::span<const double>(wt));
  double num = 0, den = 0;
  for (std::size_t b = 0; b < y.size(); ++b) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < 3; ++k) m = std::max(m, static_cast<double>(out.logits[b * 3 + k]));
    double z = 0;
    for (std::size_t k = 0; k < 3; ++k) z += std::exp(out.logits[b * 3 + k] - m);
    num += wt[b] * (std::log(z) + m - out.logits[b * 3 + static_cast<std::size_t>(y[b])]);
    den += wt[b];
  }
  EXPECT_NEAR(sx.loss, num / den, 1e-6);
}

TEST(Train, FrozenOptimizerStopsAfterPatiencePlusOne) {
  const auto c = model::reduced_config();
  auto cfg = quick_config();
  cfg.lr = 0.0;
  cfg.patience = 1;
  cfg.max_epochs = 20;
  const auto set = banded_set(c, 4, 2);
  const auto r = train::train(model::init<float>(c, 4), set, banded_set(c, 3, 9), cfg);
  EXPECT_EQ(r.history.epochs.size(), 2u);
}

TEST(Train, DeterministicHistoryAndModel) {
  const auto c = model::reduced_config();
  const auto tr = banded_set(c, 5, 1), va = banded_set(c, 2, 2);
  const auto a = train::train(model::init<float>(c, 1), tr, va, quick_config());
  const auto b = train::train(model::init<float>(c, 1), tr, va, quick_config());
  EXPECT_EQ(a.history.epochs, b.history.epochs);
  EXPECT_EQ(a.history.best_epoch, b.history.best_epoch);
  EXPECT_EQ(model::serialize(a.best), model::serialize(b.best));
}

TEST(Train, HistoryInvariants) {
  const auto c = model::reduced_config();
  auto cfg = quick_config();
  cfg.max_epochs = 6;
  const auto r = train::train(model::init<float>(c, 5), banded_set(c, 4, 1), banded_set(c, 2, 2), cfg);
  ASSERT_LE(r.history.epochs.size(), 6u);
  double best = r.history.initial_val_acc;
  std::size_t best_epoch = 0;
  for (const auto& e : r.history.epochs) {
    if (e.val_acc > best) {
      best = e.val_acc;
      best_epoch = e.epoch;
    }
  }
  if (best_epoch != 0) EXPECT_EQ(r.history.best_epoch, best_epoch);
  EXPECT_GE(train::evaluate_set(r.best, banded_set(c, 2, 2)).accuracy, r.history.initial_val_acc);
  EXPECT_GT(r.history.wall_time_s, 0.0);
}

TEST(Train, OverfitsThreeSamples) {
  const auto c = model::reduced_config();
  const auto three = banded_set(c, 1, 4);
  auto cfg = quick_config();
  cfg.batch_size = 3;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  const auto r = train::train(model::init<float>(c, 2), three, three, cfg);
  ASSERT_EQ(r.history.epochs.size(), 50u);
  EXPECT_LT(r.history.epochs.back().train_loss, 0.1 * r.history.epochs.front().train_loss);
  EXPECT_EQ(train::evaluate_set(r.best, three).accuracy, 1.0);
}

TEST(Train, LearnsSeparableBands) {
  const auto c = model::reduced_config();
  auto cfg = quick_config();
  cfg.max_epochs = 30;
  cfg.patience = 30;
  const auto val = banded_set(c, 6, 2);
  const auto r = train::train(model::init<float>(c, 8), banded_set(c, 20, 1), val, cfg);
  // Selection keeps the earliest epoch at the top val accuracy.
  EXPECT_EQ(train::evaluate_set(r.best, val).accuracy, 1.0);
  EXPECT_EQ(r.history.epochs[r.history.best_epoch - 1].val_acc, 1.0);
  for (std::size_t e = 0; e + 1 < r.history.best_epoch; ++e) EXPECT_LT(r.history.epochs[e].val_acc, 1.0);
  EXPECT_GE(train::evaluate_set(r.best, banded_set(c, 6, 3)).accuracy, 0.9);
}

TEST(Train, SgdAndClassWeightingRun) {
  const auto c = model::reduced_config();
  auto cfg = quick_config();
  cfg.optimizer = Optimizer::SgdMomentum;
  cfg.class_weighting = true;
  cfg.lr = 0.01;
  const auto r = train::train(model::init<float>(c, 8), banded_set(c, 4, 1), banded_set(c, 2, 2), cfg);
  for (const auto& e : r.history.epochs) EXPECT_TRUE(std::isfinite(e.train_loss));
}

TEST(Train, MissingClassIsDatasetError) {
  const auto c = model::reduced_config();
  auto set = banded_set(c, 3, 1);
  set.features.resize(6);
  set.labels.resize(6);
  try {
    train::train(model::init<float>(c, 1), set, banded_set(c, 1, 2), quick_config());
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("als"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train::train(model::init<float>(c, 1), banded_set(c, 2, 1), dsp::FeatureSet{}, quick_config()),
               DatasetError);
}

TEST(Train, NonFiniteFeatureNamesRecord) {
  const auto c = model::reduced_config();
  auto set = banded_set(c, 3, 1);
  set.features[4].values[7] = std::numeric_limits<float>::quiet_NaN();
  try {
    train::train(model::init<float>(c, 1), set, banded_set(c, 1, 2), quick_config());
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("record 4"), std::string::npos) << e.what();
  }
}

TEST(Train, DivergenceNamesBatch) {
  const auto c = model::reduced_config();
  auto cfg = quick_config();
  cfg.lr = 1e30;
  try {
    train::train(model::init<float>(c, 1), banded_set(c, 4, 1), banded_set(c, 1, 2), cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("batch "), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripAndHistoryRows) {
  const auto c = model::reduced_config();
  const auto dir = testkit::scratch_dir("checkpoint");
  auto cfg = quick_config();
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.checkpoint_dir = dir;
  std::size_t calls = 0;
  const auto r = train::train(model::init<float>(c, 1), banded_set(c, 3, 1), banded_set(c, 1, 2), cfg,
                              [&](const EpochRecord&) { ++calls; });
  EXPECT_EQ(calls, r.history.epochs.size());
  const auto bytes = binio::read_file(dir / "history.csv");
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), r.history.epochs.size() + 1);
  EXPECT_EQ(text.rfind("epoch,train_loss,train_acc,val_loss,val_acc\n", 0), 0u);
  EXPECT_FALSE(std::filesystem::exists(dir / "checkpoint.smdl.tmp"));

  EXPECT_NO_THROW(model::load<float>(dir / "checkpoint.smdl", c));

  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.5, 0.5, 0.5});
  checkpoint(r.best, h, dir / "sub", 1);
  const auto loaded = model::load<float>(dir / "sub" / "checkpoint.smdl");
  const auto x = model::stack_features<float>(banded_set(c, 1, 5).features);
  EXPECT_EQ(model::forward_infer(loaded, x).probs.vec(), model::forward_infer(r.best, x).probs.vec());
  EXPECT_THROW(checkpoint(loaded, h, dir / "sub", 2), std::runtime_error);
}

TEST(HistoryCsv, SixSignificantDigits) {
  TrainHistory h;
  h.epochs.push_back({1, 1.0 / 3, 0.5, 2.0 / 3, 1.0});
  EXPECT_EQ(history_csv(h), "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.333333,0.5,0.666667,1\n");
}
