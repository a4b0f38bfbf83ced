#include "pdprog/preprocess.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "pdprog/error.hpp"

namespace pdprog {

std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::None:
      return "none";
    case TransformKind::Log:
      return "log";
    case TransformKind::BoxCox:
      return "boxcox";
    case TransformKind::Sqrt:
      return "sqrt";
  }
  return "none";
}

TransformKind parse_transform_kind(const std::string& s) {
  if (s == "none") return TransformKind::None;
  if (s == "log") return TransformKind::Log;
  if (s == "boxcox") return TransformKind::BoxCox;
  if (s == "sqrt") return TransformKind::Sqrt;
  throw data_error("BadPreprocessorState", "unknown transform kind '" + s + "'");
}

std::string to_string(Missingness m) {
  switch (m) {
    case Missingness::MCAR:
      return "MCAR";
    case Missingness::MAR:
      return "MAR";
    case Missingness::MNAR:
      return "MNAR";
  }
  return "MAR";
}

Missingness parse_missingness(const std::string& s) {
  if (s == "MCAR") return Missingness::MCAR;
  if (s == "MAR") return Missingness::MAR;
  if (s == "MNAR") return Missingness::MNAR;
  throw data_error("BadPreprocessorState", "unknown missingness class '" + s + "'");
}

// ---------------------------------------------------------------------------
// Box-Cox and friends

double boxcox(double x, double lambda) {
  if (!(x > 0.0)) throw data_error("NonPositiveInput", "boxcox requires x > 0");
  if (lambda == 0.0) return std::log(x);
  return std::expm1(lambda * std::log(x)) / lambda;
}

double boxcox_log_likelihood(std::span<const double> x, double lambda) {
  std::vector<double> y(x.size());
  double sum_log = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = boxcox(x[i], lambda);
    sum_log += std::log(x[i]);
  }
  const double var = stats::variance(y);
  if (!(var > 0.0)) return -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(x.size());
  return (lambda - 1.0) * sum_log - 0.5 * n * std::log(var);
}

double boxcox_mle(std::span<const double> x, double tol) {
  if (x.size() < 2) throw data_error("TooFewValues", "boxcox_mle needs at least 2 values");
  for (double v : x) {
    if (!(v > 0.0)) throw data_error("NonPositiveInput", "boxcox_mle requires a positive column");
  }
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -5.0, b = 5.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = boxcox_log_likelihood(x, c);
  double fd = boxcox_log_likelihood(x, d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = boxcox_log_likelihood(x, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = boxcox_log_likelihood(x, d);
    }
  }
  return 0.5 * (a + b);
}

double apply_transform(const TransformSpec& spec, double x) {
  const double v = x + spec.shift;
  switch (spec.kind) {
    case TransformKind::None:
      return x;
    case TransformKind::Log:
      return std::log(std::max(v, kDomainEpsilon));
    case TransformKind::BoxCox:
      return boxcox(std::max(v, kDomainEpsilon), spec.lambda.value_or(1.0));
    case TransformKind::Sqrt:
      return std::sqrt(std::max(v, 0.0));
  }
  return x;
}

namespace {
constexpr double kChiSquare1At95 = 3.841458820694124;
}  // namespace

TransformSpec select_transform(std::span<const double> column) {
  if (column.size() < 3) throw data_error("TooFewValues", "select_transform needs at least 3 values");
  TransformSpec best;
  double best_skew = 0.0;
  try {
    best_skew = std::abs(skewness(column));
  } catch (const Error& e) {
    if (e.code() == "ZeroVariance") return best;
    throw;
  }
  const double min = *std::min_element(column.begin(), column.end());
  const double shift = std::max(0.0, kDomainEpsilon - min);

  std::vector<TransformSpec> candidates = {{TransformKind::Log, std::nullopt, shift},
                                           {TransformKind::Sqrt, std::nullopt, shift}};
  {
    std::vector<double> shifted(column.begin(), column.end());
    for (double& v : shifted) v += shift;
    const double lambda = boxcox_mle(shifted);
    // Box-Cox only competes when its lambda is distinguishable (likelihood-ratio
    // test, 95%) from the log, sqrt and identity members of the family.
    const double ll_hat = boxcox_log_likelihood(shifted, lambda);
    bool distinct = true;
    for (double special : {0.0, 0.5, 1.0}) {
      if (2.0 * (ll_hat - boxcox_log_likelihood(shifted, special)) < kChiSquare1At95) distinct = false;
    }
    if (distinct) candidates.insert(candidates.begin() + 1, {TransformKind::BoxCox, lambda, shift});
  }
  std::vector<double> y(column.size());
  for (const auto& cand : candidates) {
    for (std::size_t i = 0; i < column.size(); ++i) y[i] = apply_transform(cand, column[i]);
    double s = 0.0;
    try {
      s = std::abs(skewness(y));
    } catch (const Error&) {
      continue;  // transform collapsed the column
    }
    if (std::isfinite(s) && s < best_skew) {
      best_skew = s;
      best = cand;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Standardization

Standardizer fit_standardizer(const FeatureMatrix& m) {
  Standardizer s;
  s.means.resize(static_cast<std::size_t>(m.cols()), 0.0);
  s.stds.resize(static_cast<std::size_t>(m.cols()), 0.0);
  for (std::ptrdiff_t c = 0; c < m.cols(); ++c) {
    const auto obs = m.observed_column(c);
    if (obs.empty()) continue;
    const double mu = stats::mean(obs);
    const double sd = std::sqrt(stats::variance(obs));
    double scale = 0.0;
    for (double v : obs) scale = std::max(scale, std::abs(v));
    s.means[static_cast<std::size_t>(c)] = mu;
    s.stds[static_cast<std::size_t>(c)] = sd > 1e-12 * scale ? sd : 0.0;
  }
  return s;
}

FeatureMatrix standardize(const FeatureMatrix& m, const Standardizer& s) {
  if (s.means.size() != static_cast<std::size_t>(m.cols())) {
    throw data_error("ShapeMismatch", "standardizer fitted on a different column count");
  }
  FeatureMatrix out = m;
  for (std::ptrdiff_t c = 0; c < m.cols(); ++c) {
    const double mu = s.means[static_cast<std::size_t>(c)];
    const double sd = s.stds[static_cast<std::size_t>(c)];
    for (std::ptrdiff_t r = 0; r < m.rows(); ++r) {
      if (!m.mask(r, c)) continue;
      out.values(r, c) = sd > 0.0 ? (m.values(r, c) - mu) / sd : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Missing values

std::map<std::string, Missingness> classify_missingness(const FeatureMatrix& m, double limit) {
  std::map<std::string, Missingness> out;
  std::vector<double> ind, val;
  for (std::ptrdiff_t c = 0; c < m.cols(); ++c) {
    if (m.missing_count(c) == 0) continue;
    double max_r = 0.0;
    for (std::ptrdiff_t j = 0; j < m.cols(); ++j) {
      if (j == c) continue;
      ind.clear();
      val.clear();
      for (std::ptrdiff_t r = 0; r < m.rows(); ++r) {
        if (!m.mask(r, j)) continue;
        ind.push_back(m.mask(r, c) ? 0.0 : 1.0);
        val.push_back(m.values(r, j));
      }
      if (ind.size() < 3) continue;
      max_r = std::max(max_r, std::abs(stats::pearson(ind, val)));
    }
    out[m.col_names[static_cast<std::size_t>(c)]] = max_r <= limit ? Missingness::MCAR : Missingness::MAR;
  }
  return out;
}

FeatureMatrix mean_impute(const FeatureMatrix& m, const std::vector<std::ptrdiff_t>& columns) {
  FeatureMatrix out = m;
  for (auto c : columns) {
    const auto obs = m.observed_column(c);
    if (obs.empty()) throw data_error("AllMissingColumn", m.col_names[static_cast<std::size_t>(c)]);
    const double mu = stats::mean(obs);
    for (std::ptrdiff_t r = 0; r < m.rows(); ++r) {
      if (!m.mask(r, c)) out.set(r, c, mu);
    }
  }
  return out;
}

namespace {

void require_observed_lines(const FeatureMatrix& m) {
  for (std::ptrdiff_t r = 0; r < m.rows(); ++r) {
    if (!m.mask.row(r).any()) throw data_error("NoObservedEntries", "row " + std::to_string(r) + " is empty");
  }
  for (std::ptrdiff_t c = 0; c < m.cols(); ++c) {
    if (!m.mask.col(c).any()) {
      throw data_error("NoObservedEntries", "column " + m.col_names[static_cast<std::size_t>(c)] + " is empty");
    }
  }
}

Eigen::MatrixXd mean_filled(const FeatureMatrix& m) {
  Eigen::MatrixXd x(m.rows(), m.cols());
  for (std::ptrdiff_t c = 0; c < m.cols(); ++c) {
    const auto obs = m.observed_column(c);
    const double mu = obs.empty() ? 0.0 : stats::mean(obs);
    for (std::ptrdiff_t r = 0; r < m.rows(); ++r) x(r, c) = m.mask(r, c) ? m.values(r, c) : mu;
  }
  return x;
}

}  // namespace

double default_sv_threshold(const FeatureMatrix& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(mean_filled(m));
  return svd.singularValues()(0) / 50.0;
}

SoftImputeResult soft_impute(const FeatureMatrix& m, const ImputeConfig& config) {
  if (config.sv_threshold < 0.0) throw usage_error("InvalidConfig", "sv_threshold must be >= 0");
  if (!(config.tol > 0.0)) throw usage_error("InvalidConfig", "tol must be > 0");
  SoftImputeResult res;
  res.matrix = m;
  if (m.missing_count() == 0) {
    res.converged = true;
    return res;
  }
  require_observed_lines(m);

  Eigen::MatrixXd x = mean_filled(m);
  const Eigen::Index keep_max = std::min(x.rows(), x.cols());
  const Eigen::Index rank_cap = config.max_rank ? std::clamp<Eigen::Index>(*config.max_rank, 0, keep_max) : keep_max;
  for (int it = 1; it <= config.max_iter; ++it) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::VectorXd s = (svd.singularValues().array() - config.sv_threshold).max(0.0).matrix();
    if (rank_cap < s.size()) s.tail(s.size() - rank_cap).setZero();
    Eigen::MatrixXd recon = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (m.mask(r, c)) recon(r, c) = m.values(r, c);
      }
    }
    const double old_norm = x.norm();
    const double delta = (recon - x).norm();
    x = std::move(recon);
    res.iterations = it;
    res.last_change = old_norm > 0.0 ? delta / old_norm : delta;
    if (res.last_change < config.tol) {
      res.converged = true;
      break;
    }
  }
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (!m.mask(r, c)) res.matrix.set(r, c, x(r, c));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Medication

std::array<double, 3> one_hot_medication(Medication m) {
  switch (m) {
    case Medication::On:
      return {1.0, 0.0, 0.0};
    case Medication::Off:
      return {0.0, 1.0, 0.0};
    case Medication::Missing:
      return {0.0, 0.0, 1.0};
  }
  return {0.0, 0.0, 1.0};
}

// ---------------------------------------------------------------------------
// Composite preprocessor

bool FittedPreprocessor::operator==(const FittedPreprocessor& o) const {
  return columns == o.columns && transforms == o.transforms && missingness == o.missingness &&
         impute_center == o.impute_center && impute_scale == o.impute_scale &&
         impute.sv_threshold == o.impute.sv_threshold && impute.max_iter == o.impute.max_iter &&
         impute.tol == o.impute.tol && impute.max_rank == o.impute.max_rank &&
         standardizer.means == o.standardizer.means && standardizer.stds == o.standardizer.stds &&
         medication_columns == o.medication_columns;
}

namespace {

FeatureMatrix transform_all(const FittedPreprocessor& pre, const FeatureMatrix& m) {
  FeatureMatrix out = m;
  for (std::ptrdiff_t c = 0; c < m.cols(); ++c) {
    const auto& spec = pre.transforms[static_cast<std::size_t>(c)];
    if (spec.kind == TransformKind::None) continue;
    for (std::ptrdiff_t r = 0; r < m.rows(); ++r) {
      if (m.mask(r, c)) out.values(r, c) = apply_transform(spec, m.values(r, c));
    }
  }
  return out;
}

/// MCAR columns get the fitted mean; the rest go through soft-impute on a
/// copy scaled by the fitted center/scale.
FeatureMatrix impute_all(const FittedPreprocessor& pre, const FeatureMatrix& t) {
  FeatureMatrix out = t;
  std::vector<std::ptrdiff_t> soft_cols;
  for (std::ptrdiff_t c = 0; c < t.cols(); ++c) {
    if (t.missing_count(c) == 0) continue;
    const auto& name = pre.columns[static_cast<std::size_t>(c)];
    auto it = pre.missingness.find(name);
    const bool mcar = it == pre.missingness.end() || it->second == Missingness::MCAR;
    if (mcar) {
      for (std::ptrdiff_t r = 0; r < t.rows(); ++r) {
        if (!t.mask(r, c)) out.set(r, c, pre.impute_center[static_cast<std::size_t>(c)]);
      }
    } else {
      soft_cols.push_back(c);
    }
  }
  if (soft_cols.empty()) return out;

  FeatureMatrix z = out;
  for (std::ptrdiff_t c = 0; c < z.cols(); ++c) {
    const double mu = pre.impute_center[static_cast<std::size_t>(c)];
    const double sd = pre.impute_scale[static_cast<std::size_t>(c)];
    const bool empty = !z.mask.col(c).any();
    for (std::ptrdiff_t r = 0; r < z.rows(); ++r) {
      if (z.mask(r, c)) {
        z.values(r, c) = (z.values(r, c) - mu) / sd;
      } else if (empty) {
        z.set(r, c, 0.0);  // nothing to learn from; anchor at the fitted center
      }
    }
  }
  const auto res = soft_impute(z, pre.impute);
  for (auto c : soft_cols) {
    const double mu = pre.impute_center[static_cast<std::size_t>(c)];
    const double sd = pre.impute_scale[static_cast<std::size_t>(c)];
    for (std::ptrdiff_t r = 0; r < t.rows(); ++r) {
      if (!t.mask(r, c)) out.set(r, c, mu + sd * res.matrix.values(r, c));
    }
  }
  return out;
}

FeatureMatrix align_columns(const FittedPreprocessor& pre, const FeatureMatrix& m) {
  if (m.col_names == pre.columns) return m;
  std::vector<std::ptrdiff_t> idx;
  idx.reserve(pre.columns.size());
  for (const auto& name : pre.columns) idx.push_back(m.column_index(name));
  return m.select_columns(idx);
}

}  // namespace

FittedPreprocessor fit_preprocessor(const FeatureMatrix& train, const PreprocessOptions& options) {
  if (train.rows() == 0) throw data_error("EmptyDataset", "cannot fit a preprocessor on zero rows");
  FittedPreprocessor pre;
  pre.columns = train.col_names;
  pre.transforms.resize(static_cast<std::size_t>(train.cols()));
  for (std::ptrdiff_t c = 0; c < train.cols(); ++c) {
    const auto obs = train.observed_column(c);
    if (obs.empty()) throw data_error("AllMissingColumn", train.col_names[static_cast<std::size_t>(c)]);
    if (options.transform_skewed && stats::is_skewed(obs, options.skew_threshold)) {
      pre.transforms[static_cast<std::size_t>(c)] = select_transform(obs);
    }
  }
  const FeatureMatrix t = transform_all(pre, train);
  pre.missingness = classify_missingness(t);

  pre.impute_center.resize(static_cast<std::size_t>(t.cols()));
  pre.impute_scale.resize(static_cast<std::size_t>(t.cols()));
  const auto moments = fit_standardizer(t);
  for (std::size_t c = 0; c < pre.impute_center.size(); ++c) {
    pre.impute_center[c] = moments.means[c];
    pre.impute_scale[c] = moments.stds[c] > 0.0 ? moments.stds[c] : 1.0;
  }
  pre.impute = options.impute;
  if (!(pre.impute.sv_threshold > 0.0)) {
    FeatureMatrix z = standardize(t, moments);
    pre.impute.sv_threshold = default_sv_threshold(z);
  }
  const FeatureMatrix imputed = impute_all(pre, t);
  pre.standardizer = fit_standardizer(imputed);
  return pre;
}

FeatureMatrix apply(const FittedPreprocessor& pre, const FeatureMatrix& m, std::span<const Medication> medication) {
  if (!medication.empty() && static_cast<std::ptrdiff_t>(medication.size()) != m.rows()) {
    throw data_error("ShapeMismatch", "medication vector length differs from row count");
  }
  const FeatureMatrix aligned = align_columns(pre, m);
  FeatureMatrix out = standardize(impute_all(pre, transform_all(pre, aligned)), pre.standardizer);
  if (medication.empty()) return out;

  auto names = out.col_names;
  for (const auto& n : pre.medication_columns) names.push_back(n);
  FeatureMatrix withmed(static_cast<std::size_t>(out.rows()), names);
  withmed.row_keys = out.row_keys;
  withmed.values.leftCols(out.cols()) = out.values;
  withmed.mask.leftCols(out.cols()) = out.mask;
  for (std::ptrdiff_t r = 0; r < out.rows(); ++r) {
    const auto oh = one_hot_medication(medication[static_cast<std::size_t>(r)]);
    for (std::ptrdiff_t k = 0; k < 3; ++k) withmed.set(r, out.cols() + k, oh[static_cast<std::size_t>(k)]);
  }
  return withmed;
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_json(const FittedPreprocessor& pre) {
  using nlohmann::json;
  json doc;
  doc["format"] = "pdprog-preprocessor";
  doc["version"] = FittedPreprocessor::kVersion;
  json cols = json::array();
  for (std::size_t c = 0; c < pre.columns.size(); ++c) {
    const auto& spec = pre.transforms[c];
    json col;
    col["name"] = pre.columns[c];
    col["transform"] = to_string(spec.kind);
    col["lambda"] = spec.lambda ? json(*spec.lambda) : json(nullptr);
    col["shift"] = spec.shift;
    auto it = pre.missingness.find(pre.columns[c]);
    col["missingness"] = it == pre.missingness.end() ? json(nullptr) : json(to_string(it->second));
    col["impute_center"] = pre.impute_center[c];
    col["impute_scale"] = pre.impute_scale[c];
    col["mean"] = pre.standardizer.means[c];
    col["std"] = pre.standardizer.stds[c];
    cols.push_back(std::move(col));
  }
  doc["columns"] = std::move(cols);
  doc["impute"] = {{"sv_threshold", pre.impute.sv_threshold},
                   {"max_iter", pre.impute.max_iter},
                   {"tol", pre.impute.tol},
                   {"max_rank", pre.impute.max_rank ? json(*pre.impute.max_rank) : json(nullptr)}};
  doc["medication_columns"] = pre.medication_columns;
  return doc.dump(2);
}

FittedPreprocessor preprocessor_from_json(const std::string& text) {
  using nlohmann::json;
  FittedPreprocessor pre;
  try {
    const json doc = json::parse(text);
    if (doc.at("format") != "pdprog-preprocessor") throw data_error("BadPreprocessorState", "wrong format tag");
    if (doc.at("version").get<int>() != FittedPreprocessor::kVersion) {
      throw data_error("BadPreprocessorState", "unsupported version");
    }
    for (const auto& col : doc.at("columns")) {
      const auto name = col.at("name").get<std::string>();
      pre.columns.push_back(name);
      TransformSpec spec;
      spec.kind = parse_transform_kind(col.at("transform").get<std::string>());
      if (!col.at("lambda").is_null()) spec.lambda = col.at("lambda").get<double>();
      spec.shift = col.at("shift").get<double>();
      pre.transforms.push_back(spec);
      if (!col.at("missingness").is_null()) {
        pre.missingness[name] = parse_missingness(col.at("missingness").get<std::string>());
      }
      pre.impute_center.push_back(col.at("impute_center").get<double>());
      pre.impute_scale.push_back(col.at("impute_scale").get<double>());
      pre.standardizer.means.push_back(col.at("mean").get<double>());
      pre.standardizer.stds.push_back(col.at("std").get<double>());
    }
    const auto& imp = doc.at("impute");
    pre.impute.sv_threshold = imp.at("sv_threshold").get<double>();
    pre.impute.max_iter = imp.at("max_iter").get<int>();
    pre.impute.tol = imp.at("tol").get<double>();
    if (!imp.at("max_rank").is_null()) pre.impute.max_rank = imp.at("max_rank").get<int>();
    pre.medication_columns = doc.at("medication_columns").get<std::array<std::string, 3>>();
  } catch (const json::exception& e) {
    throw data_error("BadPreprocessorState", e.what());
  }
  return pre;
}

void save_preprocessor(const FittedPreprocessor& pre, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << to_json(pre) << '\n';
}

FittedPreprocessor load_preprocessor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return preprocessor_from_json(ss.str());
}

}  // namespace pdprog
