#include "pdprog/traineval.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pdprog/csv.hpp"
#include "pdprog/dataset.hpp"
#include "pdprog/error.hpp"

namespace pdprog::traineval {

namespace {

void check_pair(std::span<const double> a, std::span<const double> p) {
  if (a.size() != p.size()) {
    throw usage_error("LengthMismatch",
                      "actual has " + std::to_string(a.size()) + " values, predicted " + std::to_string(p.size()));
  }
  if (a.empty()) throw usage_error("Empty", "metrics need at least one value");
}

}  // namespace

double smape(std::span<const double> actual, std::span<const double> predicted) {
  check_pair(actual, predicted);
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double den = std::abs(actual[i]) + std::abs(predicted[i]);
    if (den > 0.0) sum += 2.0 * std::abs(actual[i] - predicted[i]) / den;
  }
  return 100.0 * sum / static_cast<double>(actual.size());
}

double mse(std::span<const double> actual, std::span<const double> predicted) {
  check_pair(actual, predicted);
  double sum = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = actual[i] - predicted[i];
    sum += d * d;
  }
  return sum / static_cast<double>(actual.size());
}

double rmse(std::span<const double> actual, std::span<const double> predicted) {
  return std::sqrt(mse(actual, predicted));
}

// ---------------------------------------------------------------------------

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw usage_error("InvalidConfig", "patience must be at least 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (best_epoch_ == 0 || val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

// ---------------------------------------------------------------------------

TrainConfig default_train_config(const std::string& family) {
  TrainConfig c;
  c.weight_decay = 1e-5;
  if (family == "kan") {
    c.lr = 5e-4;
  } else if (family != "lstm") {
    throw usage_error("InvalidConfig", "unknown model family '" + family + "'");
  }
  return c;
}

void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw usage_error("InvalidConfig", "lr must be positive");
  if (!(c.weight_decay >= 0.0)) throw usage_error("InvalidConfig", "weight decay must be non-negative");
  if (c.max_epochs < 1) throw usage_error("InvalidConfig", "max_epochs must be at least 1");
  if (c.patience < 1) throw usage_error("InvalidConfig", "patience must be at least 1");
  if (c.batch_size < 2) throw usage_error("InvalidConfig", "batch size must be at least 2");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw usage_error("InvalidConfig", "dropout must lie in [0, 1)");
  if (c.clip_norm && !(*c.clip_norm > 0.0)) throw usage_error("InvalidConfig", "clip norm must be positive");
}

TargetScaler fit_target_scaler(const SupervisedSet& set) {
  TargetScaler s;
  for (int j = 0; j < 4; ++j) {
    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (Eigen::Index r = 0; r < set.targets.rows(); ++r) {
      if (!set.target_mask(r, j)) continue;
      sum += set.targets(r, j);
      ++n;
    }
    if (n == 0) continue;
    const double mean = sum / n;
    for (Eigen::Index r = 0; r < set.targets.rows(); ++r) {
      if (set.target_mask(r, j)) sq += (set.targets(r, j) - mean) * (set.targets(r, j) - mean);
    }
    const double sd = std::sqrt(sq / n);
    s.mean[static_cast<std::size_t>(j)] = mean;
    s.sd[static_cast<std::size_t>(j)] = (n >= 2 && sd > 0.0) ? sd : 1.0;
  }
  return s;
}

Eigen::MatrixXd standardize_targets(const TargetScaler& s, const Eigen::MatrixXd& raw) {
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.col(j) = (raw.col(j).array() - s.mean[k]) / s.sd[k];
  }
  return out;
}

Eigen::MatrixXd destandardize(const TargetScaler& s, const Eigen::MatrixXd& scaled) {
  Eigen::MatrixXd out(scaled.rows(), scaled.cols());
  for (Eigen::Index j = 0; j < scaled.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    out.col(j) = scaled.col(j).array() * s.sd[k] + s.mean[k];
  }
  return out;
}

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const std::ptrdiff_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

MaskMatrix gather(const MaskMatrix& m, std::span<const std::ptrdiff_t> rows) {
  MaskMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

/// Batch boundaries over n rows; a final batch of one row is merged.
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += size) out.emplace_back(b, std::min(n, b + size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch));
}

}  // namespace

double evaluate_loss(models::Model& model, const SupervisedSet& set, const TargetScaler& scaler) {
  const Eigen::MatrixXd pred = model.predict(model.inputs_of(set));
  return nn::mse_loss(pred, standardize_targets(scaler, set.targets), set.target_mask).loss;
}

TrainResult train(models::Model& model, const SupervisedSet& train_set, const SupervisedSet& val_set,
                  const TrainConfig& config) {
  validate(config);
  if (train_set.rows() == 0) throw data_error("EmptyDataset", "training set is empty");
  if (val_set.rows() == 0) throw data_error("EmptyDataset", "validation set is empty");
  if (train_set.rows() < 2) throw data_error("EmptyDataset", "training set needs at least 2 rows");
  const Eigen::MatrixXd& x = model.inputs_of(train_set);
  model.inputs_of(val_set);

  TrainResult result;
  result.scaler = fit_target_scaler(train_set);
  const Eigen::MatrixXd y = standardize_targets(result.scaler, train_set.targets);

  nn::AdamConfig ac;
  ac.lr = config.lr;
  ac.weight_decay = config.weight_decay;
  ac.clip_norm = config.clip_norm;
  nn::Adam opt(ac);
  const auto params = model.net->parameters();

  EarlyStopping stop(config.patience);
  auto best_state = nn::state_of(*model.net);
  const auto n = static_cast<std::size_t>(train_set.rows());
  const auto spans = batches(n, static_cast<std::size_t>(config.batch_size));

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::ptrdiff_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    seeded_shuffle(order, epoch_seed(config.seed, epoch));

    model.net->set_training(true);
    double weighted = 0.0;
    double cells = 0.0;
    for (std::size_t b = 0; b < spans.size(); ++b) {
      const std::span<const std::ptrdiff_t> rows(order.data() + spans[b].first, spans[b].second - spans[b].first);
      const MaskMatrix mb = gather(train_set.target_mask, rows);
      model.net->zero_grad();
      const Eigen::MatrixXd pred = model.net->forward(gather(x, rows));
      const auto loss = nn::mse_loss(pred, gather(y, rows), mb);
      if (!std::isfinite(loss.loss)) {
        throw numerical_error("NonFiniteLoss", "training loss is not finite at epoch " + std::to_string(epoch) +
                                                   ", batch " + std::to_string(b + 1));
      }
      model.net->backward(loss.grad);
      opt.step(params);
      const double c = static_cast<double>(mb.cast<int>().sum());
      weighted += loss.loss * c;
      cells += c;
    }

    const double val = evaluate_loss(model, val_set, result.scaler);
    if (!std::isfinite(val)) {
      throw numerical_error("NonFiniteLoss", "validation loss is not finite at epoch " + std::to_string(epoch));
    }
    result.history.epochs.push_back({weighted / cells, val});
    if (stop.update(val)) best_state = nn::state_of(*model.net);
    if (stop.should_stop()) {
      result.history.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  result.history.best_epoch = stop.best_epoch();
  nn::load_state(*model.net, best_state);
  model.net->set_training(false);
  return result;
}

// ---------------------------------------------------------------------------

EvalReport evaluate_predictions(const Eigen::MatrixXd& predicted_raw, const Eigen::MatrixXd& targets,
                                const MaskMatrix& mask) {
  if (predicted_raw.rows() != targets.rows() || predicted_raw.cols() != 4 || targets.cols() != 4 ||
      mask.rows() != targets.rows() || mask.cols() != 4) {
    throw usage_error("ShapeMismatch", "predictions, targets and mask must all be N x 4");
  }
  EvalReport rep;
  for (int j = 0; j < 4; ++j) {
    std::vector<double> a, p;
    for (Eigen::Index r = 0; r < targets.rows(); ++r) {
      if (!mask(r, j)) continue;
      a.push_back(targets(r, j));
      p.push_back(predicted_raw(r, j));
    }
    const auto& name = kUpdrsNames[static_cast<std::size_t>(j)];
    if (a.empty()) throw data_error("NoObservedTargets", name + " has no observed values");
    auto& t = rep.per_target[static_cast<std::size_t>(j)];
    t.target = name;
    t.count = a.size();
    t.metrics.smape = smape(a, p);
    t.metrics.mse = mse(a, p);
    t.metrics.rmse = std::sqrt(t.metrics.mse);
    for (std::size_t i = 0; i < a.size(); ++i) rep.predictions.push_back({name, a[i], p[i]});
  }
  for (const auto& t : rep.per_target) {
    rep.average.smape += t.metrics.smape / 4.0;
    rep.average.mse += t.metrics.mse / 4.0;
    rep.average.rmse += t.metrics.rmse / 4.0;
  }
  return rep;
}

EvalReport evaluate(models::Model& model, const SupervisedSet& set, const TargetScaler& scaler) {
  const Eigen::MatrixXd pred = destandardize(scaler, model.predict(model.inputs_of(set)));
  return evaluate_predictions(pred, set.targets, set.target_mask);
}

void write_history_csv(const History& h, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    rows.push_back({std::to_string(e + 1), csv::format_double(h.epochs[e].train_loss),
                    csv::format_double(h.epochs[e].val_loss)});
  }
  csv::write_file(path, {"epoch", "train_loss", "val_loss"}, rows);
}

void write_report_csv(const EvalReport& r, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& t : r.per_target) {
    rows.push_back({t.target, std::to_string(t.count), csv::format_double(t.metrics.smape),
                    csv::format_double(t.metrics.mse), csv::format_double(t.metrics.rmse)});
  }
  rows.push_back({"Average", "", csv::format_double(r.average.smape), csv::format_double(r.average.mse),
                  csv::format_double(r.average.rmse)});
  csv::write_file(path, {"target", "n", "smape", "mse", "rmse"}, rows);
}

void write_predictions_csv(const EvalReport& r, const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(r.predictions.size());
  for (const auto& p : r.predictions) {
    rows.push_back({p.target, csv::format_double(p.actual), csv::format_double(p.predicted)});
  }
  csv::write_file(path, {"target", "actual", "predicted"}, rows);
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "target" << std::right << std::setw(7) << "n" << std::setw(12) << "SMAPE"
     << std::setw(12) << "MSE" << std::setw(12) << "RMSE" << '\n'
     << std::fixed << std::setprecision(4);
  for (const auto& t : r.per_target) {
    os << std::left << std::setw(10) << t.target << std::right << std::setw(7) << t.count << std::setw(12)
       << t.metrics.smape << std::setw(12) << t.metrics.mse << std::setw(12) << t.metrics.rmse << '\n';
  }
  os << std::left << std::setw(10) << "Average" << std::right << std::setw(7) << "" << std::setw(12)
     << r.average.smape << std::setw(12) << r.average.mse << std::setw(12) << r.average.rmse << '\n';
  return os.str();
}

}  // namespace pdprog::traineval
