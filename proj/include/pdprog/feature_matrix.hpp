#pragma once

#include <Eigen/Dense>
#include <compare>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

namespace pdprog {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RowKey {
  int patient_id = 0;
  int visit_month = 0;
  auto operator<=>(const RowKey&) const = default;
};

/// Unobserved cells hold this value. Code must test the mask, never the sentinel.
inline constexpr double kMissingSentinel = std::numeric_limits<double>::quiet_NaN();

/// Dense visit-by-feature table with an explicit observedness mask.
struct FeatureMatrix {
  RowMatrix values;
  MaskMatrix mask;  // true = observed
  std::vector<std::string> col_names;
  std::vector<RowKey> row_keys;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::vector<std::string> names);

  std::ptrdiff_t rows() const { return values.rows(); }
  std::ptrdiff_t cols() const { return values.cols(); }

  bool observed(std::ptrdiff_t r, std::ptrdiff_t c) const { return mask(r, c); }
  void set(std::ptrdiff_t r, std::ptrdiff_t c, double v) {
    values(r, c) = v;
    mask(r, c) = true;
  }
  void clear(std::ptrdiff_t r, std::ptrdiff_t c) {
    values(r, c) = kMissingSentinel;
    mask(r, c) = false;
  }

  /// Index of a named column; throws data_error("UnknownColumn") when absent.
  std::ptrdiff_t column_index(const std::string& name) const;
  /// Observed values of a column, in row order.
  std::vector<double> observed_column(std::ptrdiff_t c) const;
  std::size_t missing_count() const;
  std::size_t missing_count(std::ptrdiff_t c) const;

  /// Selects a subset of rows (in the given order).
  FeatureMatrix select_rows(const std::vector<std::ptrdiff_t>& rows) const;
  FeatureMatrix select_columns(const std::vector<std::ptrdiff_t>& cols) const;
};

}  // namespace pdprog
