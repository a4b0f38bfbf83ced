#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdprog/features.hpp"
#include "pdprog/models.hpp"

namespace pdprog::traineval {

// ---------------------------------------------------------------------------
// Metrics. Each throws LengthMismatch and Empty.

/// Percentage in [0, 200]; a term with |y| + |yhat| = 0 contributes 0.
double smape(std::span<const double> actual, std::span<const double> predicted);
double mse(std::span<const double> actual, std::span<const double> predicted);
double rmse(std::span<const double> actual, std::span<const double> predicted);

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the best validation loss. An epoch improves only when strictly
/// below the best so far; training stops once `patience` epochs in a row fail.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records the loss of the next epoch (1-based). Returns true on improvement.
  bool update(double val_loss);
  bool should_stop() const { return since_best_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  int epochs_seen() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int since_best_ = 0;
  double best_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  int max_epochs = 500;
  int patience = 50;
  int batch_size = 32;
  std::uint64_t seed = 42;
  double dropout = 0.2;
  std::optional<double> clip_norm;
};

/// lr 0.001 for "lstm", 0.0005 for "kan"; weight decay 1e-5 for both.
TrainConfig default_train_config(const std::string& family);
/// Throws InvalidConfig.
void validate(const TrainConfig& c);

struct EpochRecord {
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based
  bool stopped_early = false;
  bool operator==(const History&) const = default;
};

/// Per-target affine map between raw scores and the scale the loss sees.
struct TargetScaler {
  std::array<double, 4> mean{};
  std::array<double, 4> sd{1.0, 1.0, 1.0, 1.0};
};

/// Mean and population sd over observed cells; sd falls back to 1 when it is
/// zero or a column has fewer than two observations.
TargetScaler fit_target_scaler(const SupervisedSet& set);
Eigen::MatrixXd standardize_targets(const TargetScaler& s, const Eigen::MatrixXd& raw);
Eigen::MatrixXd destandardize(const TargetScaler& s, const Eigen::MatrixXd& scaled);

struct TrainResult {
  History history;
  TargetScaler scaler;
};

/// Mini-batch Adam on the masked MSE of standardized targets. The shuffle is
/// reseeded every epoch from the run seed; a trailing batch of one row joins
/// the previous batch. After training the model holds the parameters of the
/// epoch with the lowest validation loss.
/// Throws EmptyDataset, ShapeMismatch, NonFiniteLoss.
TrainResult train(models::Model& model, const SupervisedSet& train_set, const SupervisedSet& val_set,
                  const TrainConfig& config);

/// Masked MSE of the model on `set` in eval mode, in the standardized scale.
double evaluate_loss(models::Model& model, const SupervisedSet& set, const TargetScaler& scaler);

// ---------------------------------------------------------------------------
// Evaluation

struct Metrics {
  double smape = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};

struct TargetMetrics {
  std::string target;
  std::size_t count = 0;
  Metrics metrics;
};

struct PredictionRecord {
  std::string target;
  double actual = 0.0;
  double predicted = 0.0;
};

struct EvalReport {
  std::array<TargetMetrics, 4> per_target;
  Metrics average;
  std::vector<PredictionRecord> predictions;  // target-major, rows in set order
};

/// Scores predictions against raw targets over observed cells only.
/// Throws NoObservedTargets naming the empty target.
EvalReport evaluate_predictions(const Eigen::MatrixXd& predicted_raw, const Eigen::MatrixXd& targets,
                                const MaskMatrix& mask);
/// Predicts in eval mode, de-standardizes, then scores.
EvalReport evaluate(models::Model& model, const SupervisedSet& set, const TargetScaler& scaler);

/// Writes `epoch,train_loss,val_loss`.
void write_history_csv(const History& h, const std::string& path);
/// Writes `target,n,smape,mse,rmse` with an Average row.
void write_report_csv(const EvalReport& r, const std::string& path);
/// Writes `target,actual,predicted`.
void write_predictions_csv(const EvalReport& r, const std::string& path);
std::string report_text(const EvalReport& r);

}  // namespace pdprog::traineval
