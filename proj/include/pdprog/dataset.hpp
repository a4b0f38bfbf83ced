#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pdprog/feature_matrix.hpp"

namespace pdprog {

enum class Medication { On, Off, Missing };

std::string to_string(Medication m);
/// "On", "Off", or empty. Anything else throws std::invalid_argument.
Medication parse_medication(const std::string& s);

struct PeptideRecord {
  std::string visit_id;
  int visit_month = 0;
  int patient_id = 0;
  std::string uniprot_id;
  std::string peptide_sequence;
  std::optional<double> peptide_abundance;
  bool operator==(const PeptideRecord&) const = default;
};

struct ProteinRecord {
  std::string visit_id;
  int visit_month = 0;
  int patient_id = 0;
  std::string uniprot_id;
  std::optional<double> npx;
  bool operator==(const ProteinRecord&) const = default;
};

struct ClinicalRecord {
  std::string visit_id;
  int patient_id = 0;
  int visit_month = 0;
  std::array<std::optional<double>, 4> updrs;  // parts 1..4
  Medication medication = Medication::Missing;
  bool operator==(const ClinicalRecord&) const = default;
};

struct Cohort {
  std::vector<PeptideRecord> peptides;
  std::vector<ProteinRecord> proteins;
  std::vector<ClinicalRecord> clinical;
  std::vector<ClinicalRecord> supplemental;
  bool operator==(const Cohort&) const = default;
};

inline constexpr double kMaxUpdrsTotal = 272.0;
inline constexpr std::array<double, 4> kMaxUpdrsPart = {52.0, 52.0, 132.0, 24.0};
inline const std::array<std::string, 4> kUpdrsNames = {"updrs_1", "updrs_2", "updrs_3", "updrs_4"};

std::string make_visit_id(int patient_id, int visit_month);

// ---------------------------------------------------------------------------
// CSV ingestion

struct CohortPaths {
  std::string peptides;
  std::string proteins;
  std::string clinical;
  std::string supplemental;

  /// Conventional file names inside one directory.
  static CohortPaths in_directory(const std::string& dir);
};

/// Parses the four CSV tables. Empty cells become missing values.
/// Errors: MissingColumn, RowParseError, EmptyFile.
Cohort load_cohort(const CohortPaths& paths);
void write_cohort(const Cohort& cohort, const CohortPaths& paths);

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct SynthConfig {
  int n_patients = 248;
  std::vector<int> visit_months = {0, 6, 12, 24};
  int n_peptides = 50;
  int n_proteins = 20;
  double target_pct_skewed = 20.58;
  double target_pct_missing = 8.9;
  /// Correlation between the part 1 and part 2 scores across visits.
  double updrs12_correlation = 0.66;
  /// Extra patients with clinical scores only (written to the supplemental table).
  int n_supplemental_patients = 0;
  std::uint64_t seed = 42;
};

/// Deterministic for a fixed config. Throws usage_error("InvalidConfig").
Cohort generate_synthetic(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Profiling and validation

/// |Fisher-Pearson skewness| above this marks a column as skewed.
inline constexpr double kSkewThreshold = 0.5;

struct DataProfile {
  std::size_t n_patients = 0;
  std::set<int> visit_months;
  double pct_skewed_columns = 0.0;
  double pct_missing_cells = 0.0;
  std::map<std::string, double> per_column_missing;
  std::vector<std::string> skewed_columns;
};

/// Column-name prefixes for pivoted peptide and protein columns.
inline const std::string kPeptidePrefix = "pep:";
inline const std::string kProteinPrefix = "npx:";

/// Pivots the cohort into one row per clinical visit: visit_month, updrs_1..4,
/// one column per peptide abundance and one per protein NPX. Rows are sorted by
/// (patient_id, visit_month) and columns by name within each block.
FeatureMatrix merged_feature_table(const Cohort& cohort, bool include_supplemental);

/// Medication status per row of merged_feature_table(cohort, false).
std::vector<Medication> medication_column(const Cohort& cohort);

/// Throws data_error("EmptyCohort").
DataProfile profile(const Cohort& cohort);
std::string format_profile(const DataProfile& p);

struct Violation {
  std::string kind;  // "orphaned visit", "negative abundance", ...
  std::string visit_id;
  std::string detail;
};

/// Reports data problems without mutating or rejecting the cohort.
std::vector<Violation> validate_cohort(const Cohort& cohort);

}  // namespace pdprog
