#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdprog/dataset.hpp"
#include "pdprog/feature_matrix.hpp"
#include "pdprog/stats.hpp"

namespace pdprog {

using stats::skewness;

// ---------------------------------------------------------------------------
// Skewness removal

enum class TransformKind { None, Log, BoxCox, Sqrt };

std::string to_string(TransformKind k);
TransformKind parse_transform_kind(const std::string& s);

struct TransformSpec {
  TransformKind kind = TransformKind::None;
  std::optional<double> lambda;  // set iff kind == BoxCox
  double shift = 0.0;            // added before transforming, >= 0
  bool operator==(const TransformSpec&) const = default;
};

/// Offset used to push a column's minimum strictly above zero.
inline constexpr double kDomainEpsilon = 1e-6;

/// (x^lambda - 1) / lambda, or ln x at lambda == 0. Throws NonPositiveInput.
double boxcox(double x, double lambda);

/// Profile log-likelihood of the Box-Cox model at `lambda`:
/// (lambda - 1) * sum(ln x) - n/2 * ln(population variance of the transformed values).
double boxcox_log_likelihood(std::span<const double> x, double lambda);

/// Maximizes boxcox_log_likelihood by golden-section search over [-5, 5].
double boxcox_mle(std::span<const double> x, double tol = 1e-4);

/// Transformed value; inputs falling outside the fitted domain are clamped to it.
double apply_transform(const TransformSpec& spec, double x);

/// Candidate in {None, Log, BoxCox, Sqrt} with the smallest |skewness| after
/// transformation. None wins ties. The Box-Cox candidate (at its MLE lambda) is
/// dropped when a likelihood-ratio test cannot tell lambda apart from 0, 1/2 or
/// 1, since Log, Sqrt and None are then the same transform up to an affine map.
/// Throws TooFewValues.
TransformSpec select_transform(std::span<const double> column);

// ---------------------------------------------------------------------------
// Standardization

struct Standardizer {
  std::vector<double> means;
  std::vector<double> stds;  // population std; 0 marks a constant column
};

/// Per-column moments over observed entries only.
Standardizer fit_standardizer(const FeatureMatrix& m);
/// Observed entries become (x - mean) / std; constant columns map to 0.
FeatureMatrix standardize(const FeatureMatrix& m, const Standardizer& s);

// ---------------------------------------------------------------------------
// Missing values

enum class Missingness { MCAR, MAR, MNAR };

std::string to_string(Missingness m);
Missingness parse_missingness(const std::string& s);

/// Largest |point-biserial r| between a column's missing indicator and any
/// other observed column that still counts as MCAR.
inline constexpr double kMcarCorrelationLimit = 0.2;

/// MCAR/MAR label for every column with at least one missing cell. MNAR is
/// never produced: no test separates it from MAR, and both take the same route.
std::map<std::string, Missingness> classify_missingness(const FeatureMatrix& m,
                                                        double limit = kMcarCorrelationLimit);

/// Fills listed columns with their observed mean. Throws AllMissingColumn.
FeatureMatrix mean_impute(const FeatureMatrix& m, const std::vector<std::ptrdiff_t>& columns);

struct ImputeConfig {
  double sv_threshold = 0.0;  // singular-value shrinkage
  int max_iter = 200;
  double tol = 1e-6;
  /// Keep at most this many singular values after shrinkage.
  std::optional<int> max_rank;
};

struct SoftImputeResult {
  FeatureMatrix matrix;  // fully observed
  bool converged = false;
  int iterations = 0;
  double last_change = 0.0;  // relative Frobenius change of the final iteration
};

/// Iterative SVD soft-thresholding. Observed entries are copied through bit-exactly.
/// Throws NoObservedEntries when some row or column is entirely missing.
SoftImputeResult soft_impute(const FeatureMatrix& m, const ImputeConfig& config);

/// Largest singular value of the column-mean-filled matrix divided by 50;
/// used when the configured threshold is not positive.
double default_sv_threshold(const FeatureMatrix& m);

// ---------------------------------------------------------------------------
// Medication encoding

inline const std::array<std::string, 3> kMedicationColumns = {"med_on", "med_off", "med_missing"};

/// On -> [1,0,0], Off -> [0,1,0], Missing -> [0,0,1].
std::array<double, 3> one_hot_medication(Medication m);

// ---------------------------------------------------------------------------
// Composite preprocessor: transform -> impute -> standardize -> one-hot

struct PreprocessOptions {
  bool transform_skewed = true;
  double skew_threshold = kSkewThreshold;
  ImputeConfig impute;
};

struct FittedPreprocessor {
  static constexpr int kVersion = 1;

  std::vector<std::string> columns;
  std::vector<TransformSpec> transforms;
  std::map<std::string, Missingness> missingness;
  std::vector<double> impute_center;  // observed mean after transform
  std::vector<double> impute_scale;   // observed std after transform (1 if constant)
  ImputeConfig impute;                // sv_threshold resolved at fit time
  Standardizer standardizer;          // fitted on the imputed training matrix
  std::array<std::string, 3> medication_columns = kMedicationColumns;

  bool operator==(const FittedPreprocessor&) const;
};

/// Fits on training rows only.
FittedPreprocessor fit_preprocessor(const FeatureMatrix& train, const PreprocessOptions& options = {});

/// Replays the fitted steps. Columns are matched by name. When `medication` is
/// non-empty (one entry per row) the three one-hot columns are appended.
FeatureMatrix apply(const FittedPreprocessor& pre, const FeatureMatrix& m,
                    std::span<const Medication> medication = {});

std::string to_json(const FittedPreprocessor& pre);
FittedPreprocessor preprocessor_from_json(const std::string& text);
void save_preprocessor(const FittedPreprocessor& pre, const std::string& path);
FittedPreprocessor load_preprocessor(const std::string& path);

}  // namespace pdprog
