#include "pdprog/feature_matrix.hpp"

#include <algorithm>

#include "pdprog/error.hpp"

namespace pdprog {

FeatureMatrix::FeatureMatrix(std::size_t rows, std::vector<std::string> names)
    : values(RowMatrix::Constant(static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(names.size()), kMissingSentinel)),
      mask(MaskMatrix::Constant(static_cast<Eigen::Index>(rows),
                                static_cast<Eigen::Index>(names.size()), false)),
      col_names(std::move(names)),
      row_keys(rows) {}

std::ptrdiff_t FeatureMatrix::column_index(const std::string& name) const {
  auto it = std::find(col_names.begin(), col_names.end(), name);
  if (it == col_names.end()) throw data_error("UnknownColumn", name);
  return it - col_names.begin();
}

std::vector<double> FeatureMatrix::observed_column(std::ptrdiff_t c) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows()));
  for (std::ptrdiff_t r = 0; r < rows(); ++r) {
    if (mask(r, c)) out.push_back(values(r, c));
  }
  return out;
}

std::size_t FeatureMatrix::missing_count() const {
  return static_cast<std::size_t>((!mask).count());
}

std::size_t FeatureMatrix::missing_count(std::ptrdiff_t c) const {
  return static_cast<std::size_t>((!mask.col(c)).count());
}

FeatureMatrix FeatureMatrix::select_rows(const std::vector<std::ptrdiff_t>& rows_idx) const {
  FeatureMatrix out(rows_idx.size(), col_names);
  for (std::size_t i = 0; i < rows_idx.size(); ++i) {
    const auto r = rows_idx[i];
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(r);
    out.mask.row(static_cast<Eigen::Index>(i)) = mask.row(r);
    out.row_keys[i] = row_keys[static_cast<std::size_t>(r)];
  }
  return out;
}

FeatureMatrix FeatureMatrix::select_columns(const std::vector<std::ptrdiff_t>& cols_idx) const {
  std::vector<std::string> names;
  names.reserve(cols_idx.size());
  for (auto c : cols_idx) names.push_back(col_names[static_cast<std::size_t>(c)]);
  FeatureMatrix out(static_cast<std::size_t>(rows()), std::move(names));
  for (std::size_t j = 0; j < cols_idx.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(cols_idx[j]);
    out.mask.col(static_cast<Eigen::Index>(j)) = mask.col(cols_idx[j]);
  }
  out.row_keys = row_keys;
  return out;
}

}  // namespace pdprog
