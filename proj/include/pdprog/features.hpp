#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pdprog/dataset.hpp"
#include "pdprog/preprocess.hpp"

namespace pdprog {

// ---------------------------------------------------------------------------
// Analysis artifacts

/// Pairwise-complete Pearson correlations. Symmetric with an exact unit diagonal.
/// Throws InsufficientOverlap when a column pair shares fewer than 2 observed rows.
Eigen::MatrixXd correlation_matrix(const FeatureMatrix& m, const std::vector<std::ptrdiff_t>& columns);

struct DensityEstimate {
  std::vector<double> grid;
  std::vector<double> density;
  double bandwidth = 0.0;
};

/// 0.9 * min(sd, IQR / 1.34) * n^(-1/5); falls back to sd, then 1, when the
/// spread measures vanish.
double silverman_bandwidth(std::span<const double> samples);

/// Gaussian kernel density on `grid`. Throws TooFewSamples (< 2) and
/// InvalidBandwidth (non-positive).
DensityEstimate kde(std::span<const double> samples, std::optional<double> bandwidth,
                    std::span<const double> grid);

/// Evenly spaced points from lo to hi inclusive.
std::vector<double> linspace(double lo, double hi, std::size_t n);

// ---------------------------------------------------------------------------
// Peptide presence

/// Peptides ordered by how many visits carry a record for them (descending),
/// ties broken by sequence. Returns the first top_k.
std::vector<std::string> top_peptides(const Cohort& cohort, std::size_t top_k);

/// One 0/1 column per selected peptide, one row per clinical visit in the
/// row order of merged_feature_table(cohort, false).
/// Throws InvalidTopK when top_k exceeds the distinct peptide count.
FeatureMatrix peptide_presence(const Cohort& cohort, std::size_t top_k);
FeatureMatrix peptide_presence(const Cohort& cohort, const std::vector<std::string>& peptides);

// ---------------------------------------------------------------------------
// Supervised pairs

struct LagConfig {
  int horizon_months = 6;
  int lag_depth = 2;
  bool include_visit_month = true;
  bool include_medication = true;
  /// Width of the presence block; with lag_depth > 1 its first lag_depth - 1
  /// slots hold the was-observed flags of the older lags.
  int n_presence_peptides = 15;
};

/// Input width produced by build_supervised for the flat layout.
std::size_t flat_input_width(const LagConfig& lag);
/// Per-step width of the sequence layout: 4 scores, an observed flag, then the
/// static block (visit_month, medication, peptide presence).
std::size_t sequence_step_width(const LagConfig& lag);
/// Number of peptides in the presence block.
std::size_t presence_peptide_count(const LagConfig& lag);

struct Provenance {
  int patient_id = 0;
  int input_month = 0;
  int target_month = 0;
  bool operator==(const Provenance&) const = default;
};

struct SupervisedSet {
  /// Flat layout: [lag 0 scores, lag 1 scores, ..., visit_month, medication,
  /// was-observed flags, presence].
  Eigen::MatrixXd inputs;
  /// Sequence layout, oldest lag first: row holds seq_len blocks of step_width.
  Eigen::MatrixXd sequences;
  int seq_len = 1;
  int step_width = 0;
  Eigen::MatrixXd targets;  // raw scores, unobserved cells are 0
  MaskMatrix target_mask;
  std::vector<Provenance> provenance;
  std::vector<std::string> feature_names;

  std::ptrdiff_t rows() const { return inputs.rows(); }
  std::set<int> patients() const;
  SupervisedSet select_rows(const std::vector<std::ptrdiff_t>& rows) const;
};

/// Emits one row per (patient, m, m + horizon) where both visits exist and at
/// least one target score is observed. Lagged scores come from the
/// preprocessed table (imputed, standardized); missing lag visits are zero with
/// a 0 flag. `presence_peptides` overrides the top-K selection when non-empty.
/// Throws NoPairsProduced.
SupervisedSet build_supervised(const Cohort& cohort, const FittedPreprocessor& pre, const LagConfig& lag,
                               const std::vector<std::string>& presence_peptides = {});

/// floor(fraction * n) validation patients (at least 1), drawn by a seeded shuffle.
/// Throws InvalidFraction and TooFewPatients (< 2).
std::set<int> choose_validation_patients(const std::set<int>& patients, double fraction, std::uint64_t seed);

/// Patient-level split. Throws InvalidFraction, TooFewPatients.
std::pair<SupervisedSet, SupervisedSet> split(const SupervisedSet& set, double validation_fraction,
                                              std::uint64_t seed);
std::pair<SupervisedSet, SupervisedSet> split_by_patients(const SupervisedSet& set,
                                                          const std::set<int>& validation_patients);

/// Restricts all tables to the given patients.
Cohort filter_cohort(const Cohort& cohort, const std::set<int>& patients);
std::set<int> cohort_patients(const Cohort& cohort);

/// inputs.csv (feature_names header) and targets.csv (updrs_1..4, blank = missing).
void export_supervised(const SupervisedSet& set, const std::string& inputs_path, const std::string& targets_path);

/// In-place Fisher-Yates driven by mt19937_64; identical across standard libraries.
void seeded_shuffle(std::vector<std::ptrdiff_t>& items, std::uint64_t seed);

}  // namespace pdprog
