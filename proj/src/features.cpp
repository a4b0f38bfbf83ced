#include "pdprog/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "pdprog/csv.hpp"
#include "pdprog/error.hpp"
#include "pdprog/stats.hpp"

namespace pdprog {

Eigen::MatrixXd correlation_matrix(const FeatureMatrix& m, const std::vector<std::ptrdiff_t>& columns) {
  const auto k = static_cast<std::ptrdiff_t>(columns.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(k, k);
  for (std::ptrdiff_t a = 0; a < k; ++a) {
    for (std::ptrdiff_t b = a + 1; b < k; ++b) {
      std::vector<double> x, y;
      for (std::ptrdiff_t r = 0; r < m.rows(); ++r) {
        if (m.mask(r, columns[a]) && m.mask(r, columns[b])) {
          x.push_back(m.values(r, columns[a]));
          y.push_back(m.values(r, columns[b]));
        }
      }
      if (x.size() < 2) {
        throw data_error("InsufficientOverlap",
                         m.col_names[columns[a]] + " and " + m.col_names[columns[b]] + " share fewer than 2 rows");
      }
      out(a, b) = out(b, a) = stats::pearson(x, y);
    }
  }
  return out;
}

double silverman_bandwidth(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  const double sd = std::sqrt(stats::variance(samples));
  std::vector<double> v(samples.begin(), samples.end());
  const double iqr = stats::quantile(v, 0.75) - stats::quantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;
  if (!(spread > 0.0)) return 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

DensityEstimate kde(std::span<const double> samples, std::optional<double> bandwidth,
                    std::span<const double> grid) {
  if (samples.size() < 2) throw data_error("TooFewSamples", "kde needs at least 2 samples");
  if (bandwidth && !(*bandwidth > 0.0)) throw usage_error("InvalidBandwidth", "bandwidth must be positive");
  DensityEstimate out;
  out.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(samples);
  out.grid.assign(grid.begin(), grid.end());
  const double h = out.bandwidth;
  const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  for (double g : grid) {
    double acc = 0.0;
    for (double s : samples) {
      const double u = (g - s) / h;
      acc += std::exp(-0.5 * u * u);
    }
    out.density.push_back(acc * norm);
  }
  return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  out.back() = hi;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using VisitPeptides = std::map<RowKey, std::set<std::string>>;

VisitPeptides peptides_by_visit(const Cohort& cohort) {
  VisitPeptides out;
  for (const auto& p : cohort.peptides) out[{p.patient_id, p.visit_month}].insert(p.peptide_sequence);
  return out;
}

}  // namespace

std::vector<std::string> top_peptides(const Cohort& cohort, std::size_t top_k) {
  std::map<std::string, std::size_t> freq;
  for (const auto& [key, peps] : peptides_by_visit(cohort)) {
    for (const auto& p : peps) ++freq[p];
  }
  if (top_k > freq.size()) {
    throw usage_error("InvalidTopK",
                      "requested " + std::to_string(top_k) + " peptides, cohort has " + std::to_string(freq.size()));
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < top_k; ++i) out.push_back(ranked[i].first);
  return out;
}

FeatureMatrix peptide_presence(const Cohort& cohort, std::size_t top_k) {
  return peptide_presence(cohort, top_peptides(cohort, top_k));
}

FeatureMatrix peptide_presence(const Cohort& cohort, const std::vector<std::string>& peptides) {
  const auto merged = merged_feature_table(cohort, false);
  const auto by_visit = peptides_by_visit(cohort);
  std::vector<std::string> names;
  for (const auto& p : peptides) names.push_back("present:" + p);
  FeatureMatrix out(static_cast<std::size_t>(merged.rows()), names);
  out.row_keys = merged.row_keys;
  for (std::ptrdiff_t r = 0; r < out.rows(); ++r) {
    const auto it = by_visit.find(merged.row_keys[r]);
    for (std::size_t c = 0; c < peptides.size(); ++c) {
      const bool present = it != by_visit.end() && it->second.count(peptides[c]) > 0;
      out.set(r, static_cast<std::ptrdiff_t>(c), present ? 1.0 : 0.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_lag(const LagConfig& lag) {
  if (lag.horizon_months <= 0) throw usage_error("InvalidConfig", "horizon_months must be positive");
  if (lag.lag_depth < 1) throw usage_error("InvalidConfig", "lag_depth must be at least 1");
  if (lag.n_presence_peptides < lag.lag_depth - 1) {
    throw usage_error("InvalidConfig", "presence block too narrow for the was-observed flags");
  }
}

std::size_t static_width(const LagConfig& lag) {
  return (lag.include_visit_month ? 1u : 0u) + (lag.include_medication ? 3u : 0u);
}

}  // namespace

std::size_t presence_peptide_count(const LagConfig& lag) {
  check_lag(lag);
  return static_cast<std::size_t>(lag.n_presence_peptides - (lag.lag_depth - 1));
}

std::size_t flat_input_width(const LagConfig& lag) {
  check_lag(lag);
  return 4u * static_cast<std::size_t>(lag.lag_depth) + static_width(lag) +
         static_cast<std::size_t>(lag.n_presence_peptides);
}

std::size_t sequence_step_width(const LagConfig& lag) { return 5u + static_width(lag) + presence_peptide_count(lag); }

std::set<int> SupervisedSet::patients() const {
  std::set<int> out;
  for (const auto& p : provenance) out.insert(p.patient_id);
  return out;
}

SupervisedSet SupervisedSet::select_rows(const std::vector<std::ptrdiff_t>& rows) const {
  SupervisedSet out;
  const auto n = static_cast<std::ptrdiff_t>(rows.size());
  out.inputs.resize(n, inputs.cols());
  out.sequences.resize(n, sequences.cols());
  out.targets.resize(n, targets.cols());
  out.target_mask.resize(n, target_mask.cols());
  out.seq_len = seq_len;
  out.step_width = step_width;
  out.feature_names = feature_names;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out.inputs.row(i) = inputs.row(rows[i]);
    out.sequences.row(i) = sequences.row(rows[i]);
    out.targets.row(i) = targets.row(rows[i]);
    out.target_mask.row(i) = target_mask.row(rows[i]);
    out.provenance.push_back(provenance[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

SupervisedSet build_supervised(const Cohort& cohort, const FittedPreprocessor& pre, const LagConfig& lag,
                               const std::vector<std::string>& presence_peptides) {
  check_lag(lag);
  const std::size_t n_pep = presence_peptide_count(lag);
  const auto peptides = presence_peptides.empty() ? top_peptides(cohort, n_pep) : presence_peptides;
  if (peptides.size() != n_pep) {
    throw usage_error("InvalidConfig", "expected " + std::to_string(n_pep) + " presence peptides, got " +
                                           std::to_string(peptides.size()));
  }

  const auto raw = merged_feature_table(cohort, false);
  if (raw.rows() == 0) throw data_error("NoPairsProduced", "cohort has no clinical visits");
  const auto processed = apply(pre, raw);
  const auto meds = medication_column(cohort);
  const auto presence = peptide_presence(cohort, peptides);

  std::array<std::ptrdiff_t, 4> raw_updrs{}, pro_updrs{};
  for (int j = 0; j < 4; ++j) {
    raw_updrs[j] = raw.column_index(kUpdrsNames[j]);
    pro_updrs[j] = processed.column_index(kUpdrsNames[j]);
  }
  const auto pro_month = processed.column_index("visit_month");

  std::map<RowKey, std::ptrdiff_t> row_of;
  for (std::ptrdiff_t r = 0; r < raw.rows(); ++r) row_of[raw.row_keys[r]] = r;

  const int depth = lag.lag_depth;
  const int gap = lag.horizon_months;
  const auto n_static = static_cast<std::ptrdiff_t>(static_width(lag));

  SupervisedSet out;
  out.seq_len = depth;
  out.step_width = static_cast<int>(sequence_step_width(lag));
  for (int d = 0; d < depth; ++d) {
    for (int j = 0; j < 4; ++j) out.feature_names.push_back(kUpdrsNames[j] + "_lag" + std::to_string(d));
  }
  if (lag.include_visit_month) out.feature_names.push_back("visit_month");
  if (lag.include_medication) {
    for (const auto& c : pre.medication_columns) out.feature_names.push_back(c);
  }
  for (int d = 1; d < depth; ++d) out.feature_names.push_back("observed_lag" + std::to_string(d));
  for (const auto& p : peptides) out.feature_names.push_back("present:" + p);

  std::vector<Eigen::VectorXd> flat_rows, seq_rows, target_rows;
  std::vector<std::array<bool, 4>> mask_rows;

  for (std::ptrdiff_t r = 0; r < raw.rows(); ++r) {
    const RowKey key = raw.row_keys[r];
    const auto target_it = row_of.find({key.patient_id, key.visit_month + gap});
    if (target_it == row_of.end()) continue;
    const auto t = target_it->second;
    std::array<bool, 4> tmask{};
    Eigen::VectorXd target(4);
    for (int j = 0; j < 4; ++j) {
      tmask[j] = raw.mask(t, raw_updrs[j]);
      target(j) = tmask[j] ? raw.values(t, raw_updrs[j]) : 0.0;
    }
    if (std::none_of(tmask.begin(), tmask.end(), [](bool b) { return b; })) continue;

    // Static block shared by both layouts.
    Eigen::VectorXd stat(n_static);
    std::ptrdiff_t s = 0;
    if (lag.include_visit_month) stat(s++) = processed.values(r, pro_month);
    if (lag.include_medication) {
      const auto oh = one_hot_medication(meds[static_cast<std::size_t>(r)]);
      for (double v : oh) stat(s++) = v;
    }

    Eigen::VectorXd flat = Eigen::VectorXd::Zero(static_cast<std::ptrdiff_t>(out.feature_names.size()));
    Eigen::VectorXd seq = Eigen::VectorXd::Zero(depth * out.step_width);
    std::vector<double> flags;
    for (int d = 0; d < depth; ++d) {
      const auto lag_it = row_of.find({key.patient_id, key.visit_month - d * gap});
      const bool seen = lag_it != row_of.end();
      if (d > 0) flags.push_back(seen ? 1.0 : 0.0);
      // Oldest lag occupies the first time step.
      const std::ptrdiff_t step = (depth - 1 - d) * out.step_width;
      if (seen) {
        for (int j = 0; j < 4; ++j) {
          const double v = processed.values(lag_it->second, pro_updrs[j]);
          flat(4 * d + j) = v;
          seq(step + j) = v;
        }
      }
      seq(step + 4) = seen ? 1.0 : 0.0;
      seq.segment(step + 5, n_static) = stat;
      for (std::size_t p = 0; p < n_pep; ++p) {
        seq(step + 5 + n_static + static_cast<std::ptrdiff_t>(p)) = presence.values(r, static_cast<std::ptrdiff_t>(p));
      }
    }
    std::ptrdiff_t c = 4 * depth;
    flat.segment(c, n_static) = stat;
    c += n_static;
    for (double f : flags) flat(c++) = f;
    for (std::size_t p = 0; p < n_pep; ++p) flat(c++) = presence.values(r, static_cast<std::ptrdiff_t>(p));

    flat_rows.push_back(std::move(flat));
    seq_rows.push_back(std::move(seq));
    target_rows.push_back(std::move(target));
    mask_rows.push_back(tmask);
    out.provenance.push_back({key.patient_id, key.visit_month, key.visit_month + gap});
  }

  if (flat_rows.empty()) {
    throw data_error("NoPairsProduced", "no visit pairs " + std::to_string(gap) + " months apart");
  }
  const auto n = static_cast<std::ptrdiff_t>(flat_rows.size());
  out.inputs.resize(n, static_cast<std::ptrdiff_t>(out.feature_names.size()));
  out.sequences.resize(n, depth * out.step_width);
  out.targets.resize(n, 4);
  out.target_mask.resize(n, 4);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out.inputs.row(i) = flat_rows[i].transpose();
    out.sequences.row(i) = seq_rows[i].transpose();
    out.targets.row(i) = target_rows[i].transpose();
    for (int j = 0; j < 4; ++j) out.target_mask(i, j) = mask_rows[i][j];
  }
  return out;
}

// ---------------------------------------------------------------------------

void seeded_shuffle(std::vector<std::ptrdiff_t>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

std::set<int> choose_validation_patients(const std::set<int>& patients, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw usage_error("InvalidFraction", "validation fraction must be in (0, 1)");
  if (patients.size() < 2) throw data_error("TooFewPatients", "need at least 2 patients to split");
  std::vector<int> ids(patients.begin(), patients.end());
  std::vector<std::ptrdiff_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::ptrdiff_t>(i);
  seeded_shuffle(order, seed);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ids.size()))));
  std::set<int> out;
  for (std::size_t i = 0; i < n_val; ++i) out.insert(ids[static_cast<std::size_t>(order[i])]);
  return out;
}

std::pair<SupervisedSet, SupervisedSet> split_by_patients(const SupervisedSet& set,
                                                          const std::set<int>& validation_patients) {
  std::vector<std::ptrdiff_t> train_rows, val_rows;
  for (std::ptrdiff_t r = 0; r < set.rows(); ++r) {
    (validation_patients.count(set.provenance[static_cast<std::size_t>(r)].patient_id) ? val_rows : train_rows)
        .push_back(r);
  }
  return {set.select_rows(train_rows), set.select_rows(val_rows)};
}

std::pair<SupervisedSet, SupervisedSet> split(const SupervisedSet& set, double validation_fraction,
                                              std::uint64_t seed) {
  return split_by_patients(set, choose_validation_patients(set.patients(), validation_fraction, seed));
}

std::set<int> cohort_patients(const Cohort& cohort) {
  std::set<int> out;
  for (const auto& c : cohort.clinical) out.insert(c.patient_id);
  return out;
}

Cohort filter_cohort(const Cohort& cohort, const std::set<int>& patients) {
  Cohort out;
  auto keep = [&](const auto& rec) { return patients.count(rec.patient_id) > 0; };
  std::copy_if(cohort.peptides.begin(), cohort.peptides.end(), std::back_inserter(out.peptides), keep);
  std::copy_if(cohort.proteins.begin(), cohort.proteins.end(), std::back_inserter(out.proteins), keep);
  std::copy_if(cohort.clinical.begin(), cohort.clinical.end(), std::back_inserter(out.clinical), keep);
  std::copy_if(cohort.supplemental.begin(), cohort.supplemental.end(), std::back_inserter(out.supplemental), keep);
  return out;
}

void export_supervised(const SupervisedSet& set, const std::string& inputs_path, const std::string& targets_path) {
  std::vector<std::vector<std::string>> in_rows, tg_rows;
  for (std::ptrdiff_t r = 0; r < set.rows(); ++r) {
    std::vector<std::string> row;
    for (std::ptrdiff_t c = 0; c < set.inputs.cols(); ++c) row.push_back(csv::format_double(set.inputs(r, c)));
    in_rows.push_back(std::move(row));
    std::vector<std::string> t;
    for (int j = 0; j < 4; ++j) t.push_back(set.target_mask(r, j) ? csv::format_double(set.targets(r, j)) : "");
    tg_rows.push_back(std::move(t));
  }
  csv::write_file(inputs_path, set.feature_names, in_rows);
  csv::write_file(targets_path, {kUpdrsNames.begin(), kUpdrsNames.end()}, tg_rows);
}

}  // namespace pdprog
