#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pdprog/csv.hpp"
#include "pdprog/error.hpp"
#include "pdprog/traineval.hpp"
#include "test_util.hpp"

using namespace pdprog;
using namespace pdprog::traineval;
using pdprog::testing::TempDir;

namespace {

// Straightforward references written independently of the library.
double ref_smape(const std::vector<double>& a, const std::vector<double>& p) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double num = std::fabs(static_cast<long double>(a[i]) - p[i]);
    const long double den = std::fabs(static_cast<long double>(a[i])) + std::fabs(static_cast<long double>(p[i]));
    s += den == 0.0L ? 0.0L : 2.0L * num / den;
  }
  return static_cast<double>(100.0L * s / a.size());
}

double ref_mse(const std::vector<double>& a, const std::vector<double>& p) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<long double>(a[i]) - p[i]) * (a[i] - p[i]);
  return static_cast<double>(s / a.size());
}

/// Rows follow a noisy linear rule of the inputs; every fifth target is unobserved.
SupervisedSet toy_set(int rows, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  SupervisedSet s;
  s.seq_len = 2;
  s.step_width = 3;
  s.inputs.resize(rows, 6);
  for (Eigen::Index i = 0; i < s.inputs.size(); ++i) s.inputs.data()[i] = nd(gen);
  s.sequences = s.inputs;
  s.targets.resize(rows, 4);
  s.target_mask = MaskMatrix::Constant(rows, 4, true);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < 4; ++j) {
      s.targets(r, j) = 10.0 * (j + 1) + 3.0 * s.inputs(r, j) - 2.0 * s.inputs(r, j + 2) + 0.3 * nd(gen);
      if ((r * 4 + j) % 5 == 3) {
        s.targets(r, j) = 0.0;
        s.target_mask(r, j) = false;
      }
    }
    s.provenance.push_back({r, 0, 6});
  }
  return s;
}

models::Model small_lstm(std::uint64_t seed) {
  models::LstmForecasterConfig c;
  c.input_width = 3;
  c.hidden = 6;
  c.attention_width = 12;
  c.head_widths = {8, 6, 5};
  return models::build_lstm_forecaster(c, seed);
}

models::Model small_kan(std::uint64_t seed) {
  models::KanForecasterConfig c;
  c.widths = {6, 5, 5};
  c.grid_size = 5;
  return models::build_kan_forecaster(c, seed);
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Smape, Examples) {
  EXPECT_DOUBLE_EQ(smape(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(smape(std::vector<double>{1}, std::vector<double>{3}), 100.0);
  EXPECT_DOUBLE_EQ(smape(std::vector<double>{0}, std::vector<double>{0}), 0.0);
  EXPECT_DOUBLE_EQ(smape(std::vector<double>{0, 1}, std::vector<double>{0, 3}), 50.0);
  EXPECT_DOUBLE_EQ(smape(std::vector<double>{0}, std::vector<double>{5}), 200.0);
}

TEST(MseRmse, Examples) {
  const std::vector<double> a{1, 2}, p{1, 4};
  EXPECT_DOUBLE_EQ(mse(a, p), 2.0);
  EXPECT_NEAR(rmse(a, p), 1.41421, 1e-5);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_EQ(rmse(a, a), 0.0);
}

TEST(Metrics, Errors) {
  const std::vector<double> one{1}, two{1, 2}, none;
  for (auto f : {&smape, &mse, &rmse}) {
    try {
      f(one, two);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "LengthMismatch");
    }
    try {
      f(none, none);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "Empty");
    }
  }
}

TEST(Metrics, RandomPairsMatchReference) {
  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> len(1, 40);
  std::normal_distribution<double> nd(0.0, 5.0);
  std::bernoulli_distribution zero(0.1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(gen);
    std::vector<double> a(n), p(n);
    for (int i = 0; i < n; ++i) {
      a[i] = zero(gen) ? 0.0 : nd(gen);
      p[i] = zero(gen) ? 0.0 : nd(gen);
    }
    const double s = smape(a, p);
    EXPECT_NEAR(s, ref_smape(a, p), 1e-12 * std::max(1.0, s));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 200.0);
    EXPECT_EQ(s, smape(p, a));
    const double m = mse(a, p);
    EXPECT_NEAR(m, ref_mse(a, p), 1e-12 * std::max(1.0, m));
    const double r = rmse(a, p);
    EXPECT_NEAR(r * r, m, 1e-12 * std::max(1.0, m));
  }
}

// ---------------------------------------------------------------------------

TEST(EarlyStoppingTest, ImprovingThenFlatTrace) {
  EarlyStopping es(50);
  int epoch = 0;
  while (!es.should_stop() && epoch < 500) {
    ++epoch;
    es.update(epoch <= 60 ? 100.0 - epoch : 40.0);
  }
  EXPECT_EQ(epoch, 110);
  EXPECT_EQ(es.best_epoch(), 60);
  EXPECT_EQ(es.best_loss(), 40.0);
}

TEST(EarlyStoppingTest, TiesDoNotImprove) {
  EarlyStopping es(2);
  EXPECT_TRUE(es.update(1.0));
  EXPECT_FALSE(es.update(1.0));
  EXPECT_FALSE(es.should_stop());
  EXPECT_FALSE(es.update(1.0));
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 1);
}

TEST(EarlyStoppingTest, ImprovementResetsCounter) {
  EarlyStopping es(3);
  es.update(5.0);
  es.update(6.0);
  es.update(6.0);
  EXPECT_TRUE(es.update(4.0));
  es.update(7.0);
  es.update(7.0);
  EXPECT_FALSE(es.should_stop());
  es.update(7.0);
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 4);
  EXPECT_THROW(EarlyStopping(0), Error);
}

// ---------------------------------------------------------------------------

TEST(TrainConfigTest, DefaultsAndValidation) {
  const auto l = default_train_config("lstm");
  EXPECT_EQ(l.lr, 1e-3);
  EXPECT_EQ(l.max_epochs, 500);
  EXPECT_EQ(l.patience, 50);
  EXPECT_EQ(l.batch_size, 32);
  EXPECT_EQ(l.weight_decay, 1e-5);
  const auto k = default_train_config("kan");
  EXPECT_EQ(k.lr, 5e-4);
  EXPECT_EQ(k.weight_decay, 1e-5);
  EXPECT_THROW(default_train_config("gru"), Error);
  auto bad = l;
  bad.lr = 0.0;
  EXPECT_THROW(validate(bad), Error);
  bad = l;
  bad.batch_size = 1;
  EXPECT_THROW(validate(bad), Error);
}

TEST(TargetScalerTest, RoundTripAndObservedOnly) {
  auto s = toy_set(40, 1);
  const auto sc = fit_target_scaler(s);
  for (int j = 0; j < 4; ++j) {
    double sum = 0.0;
    int n = 0;
    for (int r = 0; r < 40; ++r) {
      if (s.target_mask(r, j)) {
        sum += s.targets(r, j);
        ++n;
      }
    }
    EXPECT_NEAR(sc.mean[static_cast<std::size_t>(j)], sum / n, 1e-12);
  }
  const Eigen::MatrixXd back = destandardize(sc, standardize_targets(sc, s.targets));
  EXPECT_LT((back - s.targets).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Train, OneEpoch) {
  auto tr = toy_set(40, 1), va = toy_set(12, 2);
  auto m = small_kan(3);
  auto cfg = default_train_config("kan");
  cfg.max_epochs = 1;
  const auto res = train(m, tr, va, cfg);
  EXPECT_EQ(res.history.epochs.size(), 1u);
  EXPECT_FALSE(res.history.stopped_early);
  EXPECT_EQ(res.history.best_epoch, 1);
}

TEST(Train, DeterministicHistory) {
  auto tr = toy_set(50, 1), va = toy_set(12, 2);
  for (const std::string fam : {"lstm", "kan"}) {
    auto cfg = default_train_config(fam);
    cfg.max_epochs = 8;
    cfg.batch_size = 16;
    auto a = fam == "lstm" ? small_lstm(5) : small_kan(5);
    auto b = fam == "lstm" ? small_lstm(5) : small_kan(5);
    const auto ra = train(a, tr, va, cfg);
    const auto rb = train(b, tr, va, cfg);
    EXPECT_EQ(ra.history, rb.history) << fam;
    EXPECT_EQ(nn::state_of(*a.net), nn::state_of(*b.net)) << fam;
  }
}

TEST(Train, LossDecreasesOverFiftyEpochs) {
  auto tr = toy_set(64, 11), va = toy_set(16, 12);
  for (const std::string fam : {"lstm", "kan"}) {
    auto m = fam == "lstm" ? small_lstm(1) : small_kan(1);
    auto cfg = default_train_config(fam);
    cfg.max_epochs = 50;
    cfg.patience = 50;
    cfg.lr *= 5.0;
    const auto res = train(m, tr, va, cfg);
    ASSERT_EQ(res.history.epochs.size(), 50u) << fam;
    EXPECT_LT(res.history.epochs.back().train_loss, res.history.epochs.front().train_loss) << fam;
  }
}

TEST(Train, KeepsBestSnapshot) {
  auto tr = toy_set(48, 21), va = toy_set(14, 22);
  auto m = small_lstm(2);
  auto cfg = default_train_config("lstm");
  cfg.max_epochs = 30;
  cfg.patience = 5;
  cfg.lr = 0.02;  // noisy on purpose so later epochs can be worse
  const auto res = train(m, tr, va, cfg);
  const auto& h = res.history;
  ASSERT_GE(h.best_epoch, 1);
  double min_val = h.epochs.front().val_loss;
  for (const auto& e : h.epochs) min_val = std::min(min_val, e.val_loss);
  EXPECT_EQ(h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].val_loss, min_val);
  EXPECT_EQ(evaluate_loss(m, va, res.scaler), min_val);
  if (h.stopped_early) EXPECT_EQ(static_cast<int>(h.epochs.size()), h.best_epoch + cfg.patience);
}

TEST(Train, TrailingSingleRowBatchIsMerged) {
  auto tr = toy_set(33, 3), va = toy_set(6, 4);
  auto m = small_lstm(1);
  auto cfg = default_train_config("lstm");
  cfg.max_epochs = 2;
  EXPECT_NO_THROW(train(m, tr, va, cfg));
}

TEST(Train, Errors) {
  auto tr = toy_set(20, 3), va = toy_set(6, 4);
  auto cfg = default_train_config("kan");
  cfg.max_epochs = 2;
  auto m = small_kan(1);
  try {
    train(m, tr.select_rows({}), va, cfg);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "EmptyDataset");
  }
  auto poisoned = tr;
  poisoned.targets(0, 0) = std::nan("");
  try {
    train(m, poisoned, va, cfg);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NonFiniteLoss");
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
  }
  auto lstm = small_lstm(1);
  auto wrong = tr;
  wrong.step_width = 2;
  EXPECT_THROW(train(lstm, wrong, va, cfg), Error);
}

// ---------------------------------------------------------------------------

TEST(Evaluate, PerfectPredictionsScoreZero) {
  auto s = toy_set(20, 5);
  const auto rep = evaluate_predictions(s.targets, s.targets, s.target_mask);
  for (const auto& t : rep.per_target) {
    EXPECT_EQ(t.metrics.smape, 0.0);
    EXPECT_EQ(t.metrics.mse, 0.0);
    EXPECT_EQ(t.metrics.rmse, 0.0);
  }
  EXPECT_EQ(rep.average.smape, 0.0);
}

TEST(Evaluate, ObservedCellsOnlyAndAverages) {
  auto s = toy_set(25, 6);
  Eigen::MatrixXd pred = s.targets.array() + 1.5;
  const auto rep = evaluate_predictions(pred, s.targets, s.target_mask);
  double avg_mse = 0.0, avg_rmse = 0.0, avg_smape = 0.0;
  std::size_t n_pred = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto& t = rep.per_target[j];
    EXPECT_EQ(t.target, "updrs_" + std::to_string(j + 1));
    EXPECT_EQ(t.count, static_cast<std::size_t>(s.target_mask.col(static_cast<Eigen::Index>(j)).count()));
    EXPECT_NEAR(t.metrics.mse, 2.25, 1e-12);
    EXPECT_NEAR(t.metrics.rmse, std::sqrt(t.metrics.mse), 1e-12);
    avg_mse += t.metrics.mse;
    avg_rmse += t.metrics.rmse;
    avg_smape += t.metrics.smape;
    n_pred += t.count;
  }
  EXPECT_NEAR(rep.average.mse, avg_mse / 4, 1e-12);
  EXPECT_NEAR(rep.average.rmse, avg_rmse / 4, 1e-12);
  EXPECT_NEAR(rep.average.smape, avg_smape / 4, 1e-12);
  EXPECT_EQ(rep.predictions.size(), n_pred);
}

TEST(Evaluate, NoObservedTargetsNamesTarget) {
  auto s = toy_set(10, 7);
  s.target_mask.col(2).setConstant(false);
  try {
    evaluate_predictions(s.targets, s.targets, s.target_mask);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NoObservedTargets");
    EXPECT_NE(std::string(e.what()).find("updrs_3"), std::string::npos);
  }
}

TEST(Evaluate, MeanPredictorBounded) {
  auto s = toy_set(30, 8);
  const auto sc = fit_target_scaler(s);
  Eigen::MatrixXd pred(30, 4);
  for (int j = 0; j < 4; ++j) pred.col(j).setConstant(sc.mean[static_cast<std::size_t>(j)]);
  const auto rep = evaluate_predictions(pred, s.targets, s.target_mask);
  for (const auto& t : rep.per_target) {
    EXPECT_TRUE(std::isfinite(t.metrics.smape));
    EXPECT_LT(t.metrics.smape, 200.0);
  }
}

TEST(Evaluate, ModelRoundTripThroughScaler) {
  auto tr = toy_set(40, 9), va = toy_set(10, 10);
  auto m = small_kan(4);
  auto cfg = default_train_config("kan");
  cfg.max_epochs = 3;
  const auto res = train(m, tr, va, cfg);
  const auto rep = evaluate(m, va, res.scaler);
  const Eigen::MatrixXd pred = destandardize(res.scaler, m.predict(va.inputs));
  const auto direct = evaluate_predictions(pred, va.targets, va.target_mask);
  EXPECT_EQ(rep.average.mse, direct.average.mse);
  // Loss and metrics live on different scales.
  EXPECT_NE(rep.average.mse, evaluate_loss(m, va, res.scaler));
}

TEST(Reports, CsvShapes) {
  TempDir dir;
  auto s = toy_set(12, 11);
  const auto rep = evaluate_predictions(s.targets.array() + 1.0, s.targets, s.target_mask);
  write_report_csv(rep, dir.file("report.csv"));
  write_predictions_csv(rep, dir.file("pred.csv"));
  History h;
  h.epochs = {{1.0, 2.0}, {0.5, 1.5}};
  h.best_epoch = 2;
  write_history_csv(h, dir.file("hist.csv"));

  const auto r = csv::read_file(dir.file("report.csv"));
  EXPECT_EQ(r.header, (std::vector<std::string>{"target", "n", "smape", "mse", "rmse"}));
  ASSERT_EQ(r.rows.size(), 5u);
  EXPECT_EQ(r.rows[4][0], "Average");
  const auto p = csv::read_file(dir.file("pred.csv"));
  EXPECT_EQ(p.header, (std::vector<std::string>{"target", "actual", "predicted"}));
  EXPECT_EQ(p.rows.size(), rep.predictions.size());
  const auto hh = csv::read_file(dir.file("hist.csv"));
  EXPECT_EQ(hh.header, (std::vector<std::string>{"epoch", "train_loss", "val_loss"}));
  ASSERT_EQ(hh.rows.size(), 2u);
  EXPECT_EQ(hh.rows[1], (std::vector<std::string>{"2", "0.5", "1.5"}));
  const auto text = report_text(rep);
  EXPECT_NE(text.find("Average"), std::string::npos);
  EXPECT_NE(text.find("updrs_4"), std::string::npos);
}
