#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pdprog/dataset.hpp"
#include "pdprog/features.hpp"
#include "pdprog/models.hpp"
#include "pdprog/preprocess.hpp"
#include "pdprog/traineval.hpp"

namespace pdprog::pipeline {

/// Everything a command needs. Unset training fields take the model family's
/// defaults (see traineval::default_train_config).
struct RunConfig {
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::string model = "kan";  // "lstm" or "kan"
  std::uint64_t seed = 42;

  SynthConfig synth;
  LagConfig lag;
  PreprocessOptions preprocess;
  double validation_fraction = 0.2;
  bool include_supplemental = false;

  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<int> max_epochs;
  std::optional<int> patience;
  std::optional<int> batch_size;
  double dropout = 0.2;

  // Architecture; input widths are derived from the data.
  int lstm_hidden = 64;
  bool lstm_bidirectional = true;
  std::vector<int> lstm_head{64, 32, 16};
  std::vector<int> kan_hidden{45, 91, 183};
  int kan_grid_size = 10;
  int kan_spline_order = 3;

  /// Peptides drawn for the analysis KDE curves.
  int kde_peptides = 5;
};

/// Full config as a JSON object (the echo written next to every output).
std::string to_json(const RunConfig& c);
/// Overlays the keys present in `json` onto `base`. Throws InvalidConfig on
/// unknown keys or wrong types.
RunConfig overlay_json(const RunConfig& base, const std::string& json);
RunConfig load_config(const std::string& path, const RunConfig& base = {});
/// Throws InvalidConfig.
void validate(const RunConfig& c);

traineval::TrainConfig train_config_for(const RunConfig& c, const std::string& family);

// ---------------------------------------------------------------------------

/// Patient-level split with preprocessing fitted on the training patients only.
struct PreparedData {
  std::set<int> validation_patients;
  FittedPreprocessor preprocessor;
  std::vector<std::string> presence_peptides;
  SupervisedSet train;
  SupervisedSet validation;
};

PreparedData prepare(const Cohort& cohort, const RunConfig& c);

models::Model build_model(const RunConfig& c, const std::string& family, const PreparedData& data);

/// Predicts each target's training mean.
traineval::EvalReport mean_baseline(const PreparedData& data);

struct TrainOutcome {
  std::string family;
  models::Model model;
  traineval::TrainResult result;
  traineval::EvalReport report;
  traineval::EvalReport baseline;
  models::Summary summary;
  double train_seconds = 0.0;
};

/// Builds and trains one model on prepared data.
TrainOutcome train_one(const RunConfig& c, const std::string& family, const PreparedData& data);

/// Writes config.json, preprocessor.json, checkpoint.bin, checkpoint.json,
/// target_scaler.json, summary.csv, history.csv, report.csv, predictions.csv
/// and baseline.csv into `dir`.
void write_outcome(const RunConfig& c, const TrainOutcome& o, const PreparedData& data, const std::string& dir);

/// Loads a directory written by write_outcome and scores it on `cohort`'s
/// validation patients.
traineval::EvalReport evaluate_saved(const Cohort& cohort, const std::string& dir);

struct BenchmarkRow {
  std::string model;
  traineval::EvalReport report;
  traineval::History history;
  double train_seconds = 0.0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;  // lstm then kan
  traineval::EvalReport baseline;
};

/// Trains both families on the same split and seed. When `out_dir` is
/// non-empty, each model's outputs go to out_dir/<model>/ and the comparison to
/// benchmark.csv and benchmark.txt.
BenchmarkResult run_benchmark(const Cohort& cohort, const RunConfig& c, const std::string& out_dir);
/// `model,avg_smape,avg_mse,avg_rmse,train_seconds`
std::string benchmark_csv(const BenchmarkResult& r);
std::string benchmark_text(const BenchmarkResult& r);

// ---------------------------------------------------------------------------

struct GradCheckRow {
  std::string family;
  int seeds = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// Families covered by run_gradcheck, in report order.
std::vector<std::string> gradcheck_families();

struct GradCheckInstance {
  std::unique_ptr<nn::Module> net;
  nn::Matrix input;
  nn::Matrix target;  // output plus N(0, 0.005^2) noise
};

/// Deterministic random instance for `family`, sized for a stencil of step
/// `eps`. Draws that leave a ReLU input within max(1e-3, 50 eps) of zero or a
/// BatchNorm feature with batch std below max(0.1, 150 eps) are redrawn.
/// Throws InvalidConfig for unknown families.
GradCheckInstance gradcheck_instance(const std::string& family, std::uint64_t seed, double eps = 1e-5);

/// Random small instances of every layer family and both forecasters, one per
/// seed, checked against central differences.
std::vector<GradCheckRow> run_gradcheck(int n_seeds = 20, double eps = 1e-5, double tolerance = 1e-4,
                                        std::uint64_t base_seed = 1);
std::string gradcheck_text(const std::vector<GradCheckRow>& rows);

// ---------------------------------------------------------------------------

struct AnalysisResult {
  std::vector<std::string> columns;  // visit_month, updrs_1..4
  Eigen::MatrixXd correlation;
  struct Curve {
    std::string peptide;
    std::string group;  // "present" or "absent"
    std::size_t samples = 0;
    DensityEstimate density;
  };
  std::vector<Curve> curves;
};

/// Correlations over visit_month and the four scores; total-score KDE curves
/// split by presence of each of the top peptides. Groups with fewer than two
/// visits are skipped.
AnalysisResult analyze(const Cohort& cohort, int n_peptides, std::size_t grid_points = 200);
void write_analysis(const AnalysisResult& a, const std::string& out_dir);

}  // namespace pdprog::pipeline
