#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "hppo/errors.hpp"
#include "hppo/forecast/forecast.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace hppo;
using namespace hppo::forecast;
using grad::Tape;
using grad::Tensor;
using grad::Var;

namespace {

PredictorConfig small_config() {
  PredictorConfig c;
  c.embed_dim = 8;
  c.heads = 2;
  c.layers = 2;
  c.ffn_dim = 12;
  return c;
}

}  // namespace

TEST(Attention, SingleKeyReturnsItsValue) {
  Tape tape;
  const Var q = tape.constant(Tensor::matrix(1, 2, {0.3, -1.0}));
  const Var k = tape.constant(Tensor::matrix(1, 2, {2.0, 5.0}));
  const Var v = tape.constant(Tensor::matrix(1, 2, {7.0, -3.0}));
  const Tensor& out = tape.value(tape.attention(q, k, v, 1));
  EXPECT_EQ(out[0], 7.0);
  EXPECT_EQ(out[1], -3.0);
}

TEST(Attention, EqualScoresAverageValues) {
  Tape tape;
  const Var q = tape.constant(Tensor::matrix(1, 1, {0.0}));
  const Var k = tape.constant(Tensor::matrix(3, 1, {1.0, 2.0, 3.0}));
  const Var v = tape.constant(Tensor::matrix(3, 1, {3.0, 6.0, 12.0}));
  EXPECT_NEAR(tape.value(tape.attention(q, k, v, 1))[0], 7.0, 1e-12);
}

TEST(Attention, HandScalarCase) {
  // Scores 0 and ln 9 give weights 1/10 and 9/10.
  Tape tape;
  const Var q = tape.constant(Tensor::matrix(1, 1, {1.0}));
  const Var k = tape.constant(Tensor::matrix(2, 1, {0.0, std::log(9.0)}));
  const Var v = tape.constant(Tensor::matrix(2, 1, {0.0, 1.0}));
  EXPECT_NEAR(tape.value(tape.attention(q, k, v, 1))[0], 0.9, 1e-12);
}

TEST(Attention, OutputInsideConvexHullOfValues) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = 1 + uniform_index(rng, 6), heads = 1 + uniform_index(rng, 2), dk = 2;
    Tensor Q({t, heads * dk}), K({t, heads * dk}), V({t, heads * dk});
    for (Tensor* m : {&Q, &K, &V}) {
      for (double& x : m->data()) x = uniform(rng, -3, 3);
    }
    Tape tape;
    const Tensor out = tape.value(tape.attention(tape.constant(Q), tape.constant(K), tape.constant(V), heads));
    for (int c = 0; c < heads * dk; ++c) {
      double lo = 1e300, hi = -1e300;
      for (int r = 0; r < t; ++r) {
        lo = std::min(lo, V.at(r, c));
        hi = std::max(hi, V.at(r, c));
      }
      for (int r = 0; r < t; ++r) {
        EXPECT_GE(out.at(r, c), lo - 1e-9);
        EXPECT_LE(out.at(r, c), hi + 1e-9);
      }
    }
  }
}

TEST(MadFad, HandCases) {
  const std::vector<double> a{1, 2, 3, 4};
  const PredictionMetrics same = mad_fad(a, a);
  EXPECT_EQ(same.mad, 0.0);
  EXPECT_EQ(same.fad, 0.0);
  const PredictionMetrics shifted = mad_fad(std::vector<double>{2, 2, 4, 4}, a);
  EXPECT_EQ(shifted.mad, 1.0);
  EXPECT_EQ(shifted.fad, 1.0);
  const PredictionMetrics hand = mad_fad(std::vector<double>{3, 4, 0, 0}, std::vector<double>{0, 0, 0, 0});
  EXPECT_EQ(hand.mad, 2.5);
  EXPECT_EQ(hand.fad, 0.0);
  EXPECT_THROW(mad_fad(std::vector<double>{1, 2}, a), ShapeError);
}

TEST(MadFad, MatchesOracleAndZeroOnlyWhenIdentical) {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const int steps = 1 + uniform_index(rng, 20);
    std::vector<double> p(static_cast<std::size_t>(2 * steps)), q(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = uniform(rng, -10, 10);
      q[i] = uniform(rng, -10, 10);
    }
    const PredictionMetrics m = mad_fad(p, q);
    const oracle::Displacement o = oracle::displacement_oracle(p, q);
    EXPECT_NEAR(m.mad, o.mean, 1e-12);
    EXPECT_NEAR(m.fad, o.final, 1e-12);
    EXPECT_GT(m.mad, 0.0);
    EXPECT_EQ(mad_fad(p, p).mad, 0.0);
  }
}

TEST(Localize, TranslationInvariantExactly) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Track xy;
    StepMask mask;
    for (int t = 0; t < kSteps; ++t) {
      mask[static_cast<std::size_t>(t)] = uniform01(rng) < 0.8;
      xy[static_cast<std::size_t>(2 * t)] = std::round(uniform(rng, 0, 300) * 256) / 256;
      xy[static_cast<std::size_t>(2 * t + 1)] = std::round(uniform(rng, 0, 14) * 256) / 256;
    }
    Track moved = xy;
    const double dx = std::round(uniform(rng, -100, 100)) * 0.5, dy = 0.25 * uniform_index(rng, 8);
    for (int t = 0; t < kSteps; ++t) {
      moved[static_cast<std::size_t>(2 * t)] += dx;
      moved[static_cast<std::size_t>(2 * t + 1)] += dy;
    }
    localize(xy, mask);
    localize(moved, mask);
    EXPECT_EQ(xy, moved);
  }
}

TEST(Predictor, AllInvalidGivesZerosAndCallsAreBitIdentical) {
  Rng rng(1);
  const Predictor model(PredictorConfig{}, rng);
  std::vector<Track> hist(8, Track{});
  std::vector<StepMask> masks(8, StepMask{});
  for (const Track& t : model.predict_future(hist, masks)) {
    for (double v : t) EXPECT_EQ(v, 0.0);
  }
  for (int t = 0; t < kSteps; ++t) {
    hist[3][static_cast<std::size_t>(2 * t)] = 50.0 + t;
    hist[3][static_cast<std::size_t>(2 * t + 1)] = 5.25;
    masks[3][static_cast<std::size_t>(t)] = true;
  }
  const auto a = model.predict_future(hist, masks);
  EXPECT_EQ(a, model.predict_future(hist, masks));
  for (double v : a[0]) EXPECT_EQ(v, 0.0);
  EXPECT_NE(a[3][0], 0.0);
}

TEST(Predictor, WorldTranslationShiftsPredictions) {
  Rng rng(4);
  const Predictor model(PredictorConfig{}, rng);
  std::vector<Track> hist(1);
  std::vector<StepMask> masks(1);
  masks[0].fill(true);
  for (int t = 0; t < kSteps; ++t) {
    hist[0][static_cast<std::size_t>(2 * t)] = 10.0 + 0.75 * t;
    hist[0][static_cast<std::size_t>(2 * t + 1)] = 1.75;
  }
  std::vector<Track> moved = hist;
  for (int t = 0; t < kSteps; ++t) moved[0][static_cast<std::size_t>(2 * t)] += 128.0;
  const auto a = model.predict_future(hist, masks), b = model.predict_future(moved, masks);
  for (int t = 0; t < kSteps; ++t) {
    EXPECT_NEAR(b[0][static_cast<std::size_t>(2 * t)] - a[0][static_cast<std::size_t>(2 * t)], 128.0, 1e-9);
    EXPECT_NEAR(b[0][static_cast<std::size_t>(2 * t + 1)], a[0][static_cast<std::size_t>(2 * t + 1)], 1e-9);
  }
}

TEST(Predictor, FullStackGradientCheck) {
  Rng rng(33);
  Predictor model(small_config(), rng);
  const auto params = model.params();
  int compared = 0, skipped = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Track> hist(2);
    std::vector<StepMask> masks(2);
    for (int b = 0; b < 2; ++b) {
      for (int t = 0; t < kSteps; ++t) {
        masks[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] = t >= b * 3;
        hist[static_cast<std::size_t>(b)][static_cast<std::size_t>(2 * t)] = uniform(rng, -8, 0);
        hist[static_cast<std::size_t>(b)][static_cast<std::size_t>(2 * t + 1)] = uniform(rng, -1, 1);
      }
    }
    Tensor w({2, kFlat});
    for (double& x : w.data()) x = uniform(rng, -1, 1);
    const oracle::ModuleCheck c = oracle::module_gradient_check(
        params, [&](Tape& tape) { return tape.sum(tape.mul(model.forward(tape, hist, masks), tape.constant(w))); },
        rng);
    EXPECT_LT(c.error, 1e-4) << "trial " << trial;
    compared += c.compared;
    skipped += c.skipped;
  }
  EXPECT_GE(compared, 9 * skipped);
}

TEST(Collect, WindowArithmetic) {
  sim::ScenarioConfig sc;
  const auto one = collect_dataset(sc, 5, 1, 10.0, 20);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_THROW(collect_dataset(sc, 5, 1, 10.0, 19), ContractError);
  const auto many = collect_dataset(sc, 5, 20, 20.0, 2000);
  EXPECT_LE(many.size(), 20u * 1981u);
  EXPECT_EQ(many.size(), 20u * 1981u);  // no vehicle ever leaves the simulation
  for (const auto& s : one) {
    EXPECT_EQ(s.history[2 * kSteps - 2], 0.0);
    EXPECT_EQ(s.history[2 * kSteps - 1], 0.0);
  }
}

TEST(Collect, StationaryTrackGivesConstantWindows) {
  std::vector<double> track;
  for (int t = 0; t < 25; ++t) {
    track.push_back(42.0);
    track.push_back(5.25);
  }
  const auto windows = extract_windows(track, 7);
  ASSERT_EQ(windows.size(), 6u);
  for (const auto& s : windows) {
    for (double v : s.history) EXPECT_EQ(v, 0.0);
    for (double v : s.future) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(s.source_id, 7);
  }
}

TEST(Collect, DatasetRoundTripsThroughJsonLines) {
  Rng rng(3);
  const auto data = constant_velocity_dataset(5, rng);
  std::stringstream ss;
  write_dataset(ss, data);
  EXPECT_EQ(read_dataset(ss), data);
  std::stringstream bad("{\"history\": 3}\n");
  EXPECT_THROW(read_dataset(bad), IoError);
}

TEST(Train, EmptyDatasetIsContractError) {
  Rng rng(1);
  Predictor model(small_config(), rng);
  EXPECT_THROW(train_predictor(model, {}, {}), ContractError);
  PredictorHyper bad;
  bad.validation_fraction = 1.0;
  EXPECT_THROW(train_predictor(model, constant_velocity_dataset(4, rng), bad), ConfigError);
}

TEST(Train, ZeroTrajectoriesLearnedWithinThreeEpochs) {
  Rng rng(1);
  Predictor model(PredictorConfig{}, rng);
  std::vector<TrajectorySample> zeros(1500);
  for (auto& s : zeros) s.mask.fill(true);
  PredictorHyper h;
  h.epochs = 3;
  const TrainReport r = train_predictor(model, zeros, h);
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_LT(r.best.mad, 0.02);
}

TEST(Train, ConstantVelocityLossDecreasesAndExtrapolates) {
  Rng rng(7);
  Predictor model(PredictorConfig{}, rng);
  const auto data = constant_velocity_dataset(3000, rng);
  PredictorHyper h;
  h.epochs = 8;
  h.seed = 7;
  const TrainReport r = train_predictor(model, data, h);
  for (std::size_t e = 1; e < r.epochs.size(); ++e) {
    EXPECT_LE(r.epochs[e].train_loss, 1.05 * r.epochs[e - 1].train_loss) << "epoch " << e;
  }
  EXPECT_LE(r.best.mad, 0.1);
  // Velocity (1, 0) m per step: ten steps later sits 10 m ahead.
  Track hist;
  StepMask mask;
  mask.fill(true);
  for (int t = 0; t < kSteps; ++t) {
    hist[static_cast<std::size_t>(2 * t)] = 100.0 + t;
    hist[static_cast<std::size_t>(2 * t + 1)] = 3.0;
  }
  const auto pred = model.predict_future(std::vector<Track>{hist}, std::vector<StepMask>{mask});
  EXPECT_NEAR(pred[0][2 * kSteps - 2], 109.0 + 10.0, 0.1);
  EXPECT_NEAR(pred[0][2 * kSteps - 1], 3.0, 0.1);
}

TEST(Checkpoint, PredictorRoundTrip) {
  Rng rng(5);
  Predictor model(small_config(), rng);
  const auto path = std::filesystem::temp_directory_path() / "hppo_predictor_test.ckpt";
  save_predictor(path.string(), model);
  Predictor loaded = load_predictor(path.string());
  EXPECT_EQ(loaded.config(), model.config());
  const auto a = model.params(), b = loaded.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].tensor->size(); ++j) {
      EXPECT_EQ(static_cast<float>((*a[i].tensor)[j]), (*b[i].tensor)[j]);
    }
  }
  std::filesystem::remove(path);
}
