#include "pdprog/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "pdprog/csv.hpp"
#include "pdprog/error.hpp"
#include "pdprog/stats.hpp"

namespace pdprog {

std::string to_string(Medication m) {
  switch (m) {
    case Medication::On:
      return "On";
    case Medication::Off:
      return "Off";
    case Medication::Missing:
      return "";
  }
  return "";
}

Medication parse_medication(const std::string& s) {
  if (s.empty()) return Medication::Missing;
  if (s == "On") return Medication::On;
  if (s == "Off") return Medication::Off;
  throw std::invalid_argument("unknown medication state '" + s + "'");
}

std::string make_visit_id(int patient_id, int visit_month) {
  return std::to_string(patient_id) + "_" + std::to_string(visit_month);
}

CohortPaths CohortPaths::in_directory(const std::string& dir) {
  const std::string d = dir.empty() || dir.back() == '/' ? dir : dir + "/";
  return {d + "train_peptides.csv", d + "train_proteins.csv", d + "train_clinical_data.csv",
          d + "supplemental_clinical_data.csv"};
}

// ---------------------------------------------------------------------------
// CSV ingestion

namespace {

const std::vector<std::string> kPeptideHeader = {"visit_id", "visit_month", "patient_id",
                                                 "UniProt",  "Peptide",     "PeptideAbundance"};
const std::vector<std::string> kProteinHeader = {"visit_id", "visit_month", "patient_id", "UniProt",
                                                 "NPX"};
const std::vector<std::string> kClinicalHeader = {
    "visit_id", "patient_id", "visit_month", "updrs_1", "updrs_2", "updrs_3", "updrs_4",
    "upd23b_clinical_state_on_medication"};

/// Maps schema columns to their positions in the file header.
std::vector<std::size_t> resolve_columns(const csv::Table& t, const std::vector<std::string>& schema,
                                         const std::string& path) {
  std::vector<std::size_t> idx;
  for (const auto& name : schema) {
    auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw data_error("MissingColumn", name + " in " + path);
    idx.push_back(static_cast<std::size_t>(it - t.header.begin()));
  }
  return idx;
}

template <class Fn>
void for_each_row(const csv::Table& t, const std::vector<std::string>& schema, const std::string& path,
                  Fn&& fn) {
  const auto idx = resolve_columns(t, schema, path);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.header.size()) {
      throw data_error("RowParseError", path + ":" + std::to_string(t.line_numbers[r]) + ": expected " +
                                            std::to_string(t.header.size()) + " fields, got " +
                                            std::to_string(row.size()));
    }
    std::vector<std::string_view> fields;
    fields.reserve(idx.size());
    for (auto i : idx) fields.emplace_back(row[i]);
    try {
      fn(fields);
    } catch (const std::invalid_argument& e) {
      throw data_error("RowParseError", path + ":" + std::to_string(t.line_numbers[r]) + ": " + e.what());
    }
  }
}

int to_int(std::string_view s) { return static_cast<int>(csv::parse_integer(s)); }

std::vector<ClinicalRecord> read_clinical(const std::string& path) {
  const auto t = csv::read_file(path);
  std::vector<ClinicalRecord> out;
  for_each_row(t, kClinicalHeader, path, [&](const std::vector<std::string_view>& f) {
    ClinicalRecord rec;
    rec.visit_id = std::string(f[0]);
    rec.patient_id = to_int(f[1]);
    rec.visit_month = to_int(f[2]);
    for (int k = 0; k < 4; ++k) rec.updrs[static_cast<std::size_t>(k)] = csv::parse_optional_double(f[3 + k]);
    rec.medication = parse_medication(std::string(f[7]));
    out.push_back(std::move(rec));
  });
  return out;
}

void write_clinical(const std::string& path, const std::vector<ClinicalRecord>& recs) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(recs.size());
  for (const auto& r : recs) {
    rows.push_back({r.visit_id, std::to_string(r.patient_id), std::to_string(r.visit_month),
                    csv::format_optional(r.updrs[0]), csv::format_optional(r.updrs[1]),
                    csv::format_optional(r.updrs[2]), csv::format_optional(r.updrs[3]),
                    to_string(r.medication)});
  }
  csv::write_file(path, kClinicalHeader, rows);
}

}  // namespace

Cohort load_cohort(const CohortPaths& paths) {
  Cohort c;
  {
    const auto t = csv::read_file(paths.peptides);
    for_each_row(t, kPeptideHeader, paths.peptides, [&](const std::vector<std::string_view>& f) {
      PeptideRecord rec;
      rec.visit_id = std::string(f[0]);
      rec.visit_month = to_int(f[1]);
      rec.patient_id = to_int(f[2]);
      rec.uniprot_id = std::string(f[3]);
      rec.peptide_sequence = std::string(f[4]);
      rec.peptide_abundance = csv::parse_optional_double(f[5]);
      c.peptides.push_back(std::move(rec));
    });
  }
  {
    const auto t = csv::read_file(paths.proteins);
    for_each_row(t, kProteinHeader, paths.proteins, [&](const std::vector<std::string_view>& f) {
      ProteinRecord rec;
      rec.visit_id = std::string(f[0]);
      rec.visit_month = to_int(f[1]);
      rec.patient_id = to_int(f[2]);
      rec.uniprot_id = std::string(f[3]);
      rec.npx = csv::parse_optional_double(f[4]);
      c.proteins.push_back(std::move(rec));
    });
  }
  c.clinical = read_clinical(paths.clinical);
  c.supplemental = read_clinical(paths.supplemental);
  return c;
}

void write_cohort(const Cohort& cohort, const CohortPaths& paths) {
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(cohort.peptides.size());
    for (const auto& r : cohort.peptides) {
      rows.push_back({r.visit_id, std::to_string(r.visit_month), std::to_string(r.patient_id), r.uniprot_id,
                      r.peptide_sequence, csv::format_optional(r.peptide_abundance)});
    }
    csv::write_file(paths.peptides, kPeptideHeader, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(cohort.proteins.size());
    for (const auto& r : cohort.proteins) {
      rows.push_back({r.visit_id, std::to_string(r.visit_month), std::to_string(r.patient_id), r.uniprot_id,
                      csv::format_optional(r.npx)});
    }
    csv::write_file(paths.proteins, kProteinHeader, rows);
  }
  write_clinical(paths.clinical, cohort.clinical);
  write_clinical(paths.supplemental, cohort.supplemental);
}

// ---------------------------------------------------------------------------
// Synthetic cohorts

namespace {

struct SynthVisit {
  int patient_id;
  int month;
  double severity;  // standardized latent severity
  std::array<double, 4> updrs;
  Medication medication;
};

// Per-part score distribution before clamping: mean, sd, share of variance
// explained by the latent severity.
struct PartModel {
  double mean;
  double sd;
  double loading;
};

std::vector<SynthVisit> simulate_visits(const SynthConfig& cfg, int first_id, int n_patients,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SynthVisit> visits;
  std::vector<int> months = cfg.visit_months;
  std::sort(months.begin(), months.end());
  for (int p = 0; p < n_patients; ++p) {
    const double baseline = normal(rng);
    const double rate = 0.5 + 0.25 * normal(rng);  // latent sd units per year
    for (int m : months) {
      SynthVisit v{};
      v.patient_id = first_id + p;
      v.month = m;
      v.severity = baseline + rate * (static_cast<double>(m) / 12.0);
      visits.push_back(v);
    }
  }
  if (visits.empty()) return visits;
  // Standardize the latent severity across all visits.
  std::vector<double> sev;
  for (const auto& v : visits) sev.push_back(v.severity);
  const double mu = stats::mean(sev);
  const double sd = std::sqrt(stats::variance(sev));
  // Clamping at zero and integer rounding attenuate the correlation by ~2%.
  const double rho12 = std::clamp(1.02 * cfg.updrs12_correlation, 0.0, 1.0);
  const std::array<PartModel, 4> parts = {PartModel{8.0, 4.5, rho12}, PartModel{8.0, 5.5, rho12},
                                          PartModel{24.0, 11.0, 0.75}, PartModel{0.5, 2.8, 0.5}};
  for (auto& v : visits) {
    v.severity = sd > 0 ? (v.severity - mu) / sd : 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& pm = parts[k];
      const double z = std::sqrt(pm.loading) * v.severity + std::sqrt(1.0 - pm.loading) * normal(rng);
      const double raw = std::round(pm.mean + pm.sd * z);
      v.updrs[k] = std::clamp(raw, 0.0, kMaxUpdrsPart[k]);
    }
    const double p_on = 1.0 / (1.0 + std::exp(-v.severity));
    const double u = unif(rng);
    if (u < p_on) {
      v.medication = Medication::On;
    } else {
      v.medication = unif(rng) < 0.6 ? Medication::Missing : Medication::Off;
    }
  }
  return visits;
}

std::string random_peptide(std::mt19937_64& rng) {
  static constexpr char kAmino[] = "ACDEFGHIKLMNPQRSTVWY";
  std::uniform_int_distribution<int> len(8, 16);
  std::uniform_int_distribution<int> aa(0, 19);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) s.push_back(kAmino[aa(rng)]);
  return s;
}

/// Picks `count` row indices without replacement, weight-proportional
/// (Efraimidis-Spirakis keys). Returned indices are sorted.
std::vector<std::size_t> weighted_pick(const std::vector<double>& weights, std::size_t count,
                                       std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double u = std::max(unif(rng), 1e-300);
    keys.emplace_back(std::log(u) / weights[i], i);
  }
  count = std::min(count, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count), keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(keys[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

/// Missing-rate multiplier s such that sum_c min(cap, s * w_c) * rows = cells.
double solve_rate_scale(const std::vector<double>& w, double rows, double cells, double cap) {
  double lo = 0.0, hi = 1.0;
  auto total = [&](double s) {
    double t = 0.0;
    for (double wc : w) t += std::min(cap, s * wc) * rows;
    return t;
  };
  while (total(hi) < cells && hi < 1e6) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total(mid) < cells ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

Cohort generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_patients < 1) throw usage_error("InvalidConfig", "n_patients must be >= 1");
  if (cfg.visit_months.empty()) throw usage_error("InvalidConfig", "visit_months must be non-empty");
  for (int m : cfg.visit_months) {
    if (m < 0) throw usage_error("InvalidConfig", "visit months must be >= 0");
  }
  {
    std::set<int> uniq(cfg.visit_months.begin(), cfg.visit_months.end());
    if (uniq.size() != cfg.visit_months.size()) throw usage_error("InvalidConfig", "duplicate visit months");
  }
  if (cfg.n_peptides < 1 || cfg.n_proteins < 1) {
    throw usage_error("InvalidConfig", "n_peptides and n_proteins must be >= 1");
  }
  if (cfg.n_supplemental_patients < 0) throw usage_error("InvalidConfig", "n_supplemental_patients < 0");
  auto pct_ok = [](double p) { return p >= 0.0 && p <= 100.0; };
  if (!pct_ok(cfg.target_pct_skewed) || !pct_ok(cfg.target_pct_missing)) {
    throw usage_error("InvalidConfig", "percentages must lie in [0, 100]");
  }
  if (cfg.updrs12_correlation < 0.0 || cfg.updrs12_correlation > 1.0) {
    throw usage_error("InvalidConfig", "updrs12_correlation must lie in [0, 1]");
  }

  // Independent streams per concern so that changing one knob does not reshuffle the rest.
  std::mt19937_64 clinical_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::mt19937_64 naming_rng(cfg.seed ^ 0xC2B2AE3D27D4EB4FULL);
  std::mt19937_64 missing_rng(cfg.seed ^ 0x165667B19E3779F9ULL);
  std::mt19937_64 value_rng(cfg.seed ^ 0x27D4EB2F165667C5ULL);

  const int first_id = 1001;
  auto visits = simulate_visits(cfg, first_id, cfg.n_patients, clinical_rng);
  auto supp_visits = simulate_visits(cfg, first_id + cfg.n_patients, cfg.n_supplemental_patients, clinical_rng);

  // Peptide and protein identities.
  std::vector<std::string> proteins;
  for (int i = 0; i < cfg.n_proteins; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "P%05d", 10000 + 37 * i);
    proteins.emplace_back(buf);
  }
  std::vector<std::string> peptides;
  {
    std::set<std::string> seen;
    while (static_cast<int>(peptides.size()) < cfg.n_peptides) {
      auto s = random_peptide(naming_rng);
      if (seen.insert(s).second) peptides.push_back(std::move(s));
    }
  }
  const auto n_pep = static_cast<std::size_t>(cfg.n_peptides);
  const auto n_prot = static_cast<std::size_t>(cfg.n_proteins);
  const std::size_t n_rows = visits.size();
  const std::size_t n_supp_rows = supp_visits.size();

  // Missingness weights per column: visit_month, updrs_1..4, peptides, proteins.
  // updrs_4 carries the largest weight so it ends up the most incomplete column.
  std::vector<double> w = {0.0, 0.3, 0.3, 0.15, 5.0};
  std::vector<double> pep_weight(n_pep);
  for (std::size_t j = 0; j < n_pep; ++j) {
    pep_weight[j] = 0.5 + static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(n_pep - 1, 1));
    w.push_back(pep_weight[j]);
  }
  for (std::size_t j = 0; j < n_prot; ++j) w.push_back(1.0);

  const double n_cols = static_cast<double>(w.size());
  const double all_rows = static_cast<double>(n_rows + n_supp_rows);
  const double target_cells = cfg.target_pct_missing / 100.0 * all_rows * n_cols;
  const double structural = static_cast<double>(n_supp_rows) * static_cast<double>(n_pep + n_prot);
  // Supplemental rows share the clinical missing rates, so fold them into the row count.
  const double scale = solve_rate_scale(w, all_rows, std::max(0.0, target_cells - structural), 0.9);
  // Sum of per-column rates applied to clinical columns over all rows; peptide and
  // protein cells only exist on main rows, rescale their rate accordingly.
  auto rate_for = [&](std::size_t c) {
    const double r = std::min(0.9, scale * w[c]);
    if (c < 5 || n_rows == 0) return r;
    return std::min(0.95, r * all_rows / static_cast<double>(n_rows));
  };

  // Missing masks: true = dropped.
  auto pick_missing = [&](std::size_t rows, double rate, const std::vector<double>& weights) {
    std::vector<char> miss(rows, 0);
    const auto count = static_cast<std::size_t>(std::llround(rate * static_cast<double>(rows)));
    for (auto i : weighted_pick(weights, count, missing_rng)) miss[i] = 1;
    return miss;
  };
  const std::vector<double> flat(n_rows, 1.0);
  const std::vector<double> flat_supp(n_supp_rows, 1.0);

  std::array<std::vector<char>, 4> updrs_miss;
  std::array<std::vector<char>, 4> supp_updrs_miss;
  for (std::size_t k = 0; k < 4; ++k) {
    updrs_miss[k] = pick_missing(n_rows, rate_for(1 + k), flat);
    supp_updrs_miss[k] = pick_missing(n_supp_rows, rate_for(1 + k), flat_supp);
  }

  // The ten most complete peptides go missing preferentially at severe visits,
  // which makes their presence informative about the scores.
  std::vector<double> severe(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) severe[r] = std::exp(1.2 * visits[r].severity);
  std::vector<std::vector<char>> pep_miss(n_pep);
  for (std::size_t j = 0; j < n_pep; ++j) {
    const bool informative = j < 10;
    pep_miss[j] = pick_missing(n_rows, rate_for(5 + j), informative ? severe : flat);
  }
  std::vector<std::vector<char>> prot_miss(n_prot);
  for (std::size_t j = 0; j < n_prot; ++j) prot_miss[j] = pick_missing(n_rows, rate_for(5 + n_pep + j), flat);

  // Skew calibration: count fixed columns that are skewed on their observed
  // values, then make enough peptides log-normal to hit the target share.
  std::size_t fixed_skewed = 0;
  {
    std::vector<double> months;
    for (const auto& v : visits) months.push_back(v.month);
    for (const auto& v : supp_visits) months.push_back(v.month);
    fixed_skewed += stats::is_skewed(months, kSkewThreshold) ? 1 : 0;
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> obs;
      for (std::size_t r = 0; r < n_rows; ++r) {
        if (!updrs_miss[k][r]) obs.push_back(visits[r].updrs[k]);
      }
      for (std::size_t r = 0; r < n_supp_rows; ++r) {
        if (!supp_updrs_miss[k][r]) obs.push_back(supp_visits[r].updrs[k]);
      }
      fixed_skewed += stats::is_skewed(obs, kSkewThreshold) ? 1 : 0;
    }
  }
  const auto wanted = static_cast<long>(std::llround(cfg.target_pct_skewed / 100.0 * n_cols));
  const auto n_lognormal = static_cast<std::size_t>(
      std::clamp<long>(wanted - static_cast<long>(fixed_skewed), 0, static_cast<long>(n_pep)));
  std::vector<std::size_t> order(n_pep);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), value_rng);
  std::vector<char> lognormal(n_pep, 0);
  for (std::size_t i = 0; i < n_lognormal; ++i) lognormal[order[i]] = 1;

  Cohort c;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> level(9.0, 12.0);
  std::vector<double> pep_level(n_pep);
  for (auto& l : pep_level) l = level(value_rng);
  std::vector<double> prot_level(n_prot);
  for (auto& l : prot_level) l = level(value_rng) - 1.0;

  auto emit_clinical = [](const SynthVisit& v, const std::array<std::vector<char>, 4>& miss, std::size_t r) {
    ClinicalRecord rec;
    rec.visit_id = make_visit_id(v.patient_id, v.month);
    rec.patient_id = v.patient_id;
    rec.visit_month = v.month;
    for (std::size_t k = 0; k < 4; ++k) {
      if (!miss[k][r]) rec.updrs[k] = v.updrs[k];
    }
    rec.medication = v.medication;
    return rec;
  };

  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& v = visits[r];
    c.clinical.push_back(emit_clinical(v, updrs_miss, r));
    const std::string vid = make_visit_id(v.patient_id, v.month);
    for (std::size_t j = 0; j < n_pep; ++j) {
      // Draw even for dropped cells so values do not depend on the missing pattern.
      const double z = normal(value_rng);
      if (pep_miss[j][r]) continue;
      double a = 0.0;
      if (lognormal[j]) {
        a = std::exp(pep_level[j] + 1.0 * z);
      } else {
        const double m = std::exp(pep_level[j]);
        a = std::max(0.0, m * (1.0 + 0.12 * z));
      }
      c.peptides.push_back({vid, v.month, v.patient_id, proteins[j % n_prot], peptides[j], std::round(a * 100.0) / 100.0});
    }
    for (std::size_t j = 0; j < n_prot; ++j) {
      const double z = normal(value_rng);
      if (prot_miss[j][r]) continue;
      const double m = std::exp(prot_level[j]);
      c.proteins.push_back({vid, v.month, v.patient_id, proteins[j], std::round(m * (1.0 + 0.1 * z) * 10.0) / 10.0});
    }
  }
  for (std::size_t r = 0; r < n_supp_rows; ++r) c.supplemental.push_back(emit_clinical(supp_visits[r], supp_updrs_miss, r));
  return c;
}

// ---------------------------------------------------------------------------
// Merged table, profile, validation

FeatureMatrix merged_feature_table(const Cohort& cohort, bool include_supplemental) {
  std::vector<const ClinicalRecord*> recs;
  for (const auto& r : cohort.clinical) recs.push_back(&r);
  if (include_supplemental) {
    for (const auto& r : cohort.supplemental) recs.push_back(&r);
  }
  std::stable_sort(recs.begin(), recs.end(), [](const ClinicalRecord* a, const ClinicalRecord* b) {
    return RowKey{a->patient_id, a->visit_month} < RowKey{b->patient_id, b->visit_month};
  });
  // Duplicate (patient, month) rows collapse onto the first occurrence.
  recs.erase(std::unique(recs.begin(), recs.end(),
                         [](const ClinicalRecord* a, const ClinicalRecord* b) {
                           return a->patient_id == b->patient_id && a->visit_month == b->visit_month;
                         }),
             recs.end());

  std::set<std::string> pep_names;
  for (const auto& p : cohort.peptides) pep_names.insert(p.peptide_sequence);
  std::set<std::string> prot_names;
  for (const auto& p : cohort.proteins) prot_names.insert(p.uniprot_id);

  std::vector<std::string> cols = {"visit_month"};
  for (const auto& n : kUpdrsNames) cols.push_back(n);
  std::unordered_map<std::string, std::ptrdiff_t> col_of;
  for (const auto& n : pep_names) {
    col_of[kPeptidePrefix + n] = static_cast<std::ptrdiff_t>(cols.size());
    cols.push_back(kPeptidePrefix + n);
  }
  for (const auto& n : prot_names) {
    col_of[kProteinPrefix + n] = static_cast<std::ptrdiff_t>(cols.size());
    cols.push_back(kProteinPrefix + n);
  }

  FeatureMatrix fm(recs.size(), cols);
  std::map<RowKey, std::ptrdiff_t> row_of;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto r = static_cast<std::ptrdiff_t>(i);
    const auto& rec = *recs[i];
    fm.row_keys[i] = {rec.patient_id, rec.visit_month};
    row_of[fm.row_keys[i]] = r;
    fm.set(r, 0, rec.visit_month);
    for (std::ptrdiff_t k = 0; k < 4; ++k) {
      if (rec.updrs[static_cast<std::size_t>(k)]) fm.set(r, 1 + k, *rec.updrs[static_cast<std::size_t>(k)]);
    }
  }

  // Average duplicate measurements; sums are order-dependent only at rounding level.
  std::map<std::pair<std::ptrdiff_t, std::ptrdiff_t>, std::pair<double, int>> acc;
  auto add = [&](int pid, int month, const std::string& col, const std::optional<double>& v) {
    if (!v) return;
    auto row = row_of.find({pid, month});
    if (row == row_of.end()) return;  // orphaned visit
    auto& a = acc[{row->second, col_of.at(col)}];
    a.first += *v;
    a.second += 1;
  };
  for (const auto& p : cohort.peptides) add(p.patient_id, p.visit_month, kPeptidePrefix + p.peptide_sequence, p.peptide_abundance);
  for (const auto& p : cohort.proteins) add(p.patient_id, p.visit_month, kProteinPrefix + p.uniprot_id, p.npx);
  for (const auto& [cell, a] : acc) fm.set(cell.first, cell.second, a.first / a.second);
  return fm;
}

std::vector<Medication> medication_column(const Cohort& cohort) {
  std::map<RowKey, Medication> med;
  for (const auto& r : cohort.clinical) med.emplace(RowKey{r.patient_id, r.visit_month}, r.medication);
  std::vector<Medication> out;
  out.reserve(med.size());
  for (const auto& [k, m] : med) out.push_back(m);
  return out;
}

DataProfile profile(const Cohort& cohort) {
  if (cohort.clinical.empty()) throw data_error("EmptyCohort", "cohort has no clinical records");
  const auto fm = merged_feature_table(cohort, true);
  DataProfile p;
  std::set<int> pats;
  for (const auto& r : cohort.clinical) pats.insert(r.patient_id);
  p.n_patients = pats.size();
  for (const auto& k : fm.row_keys) p.visit_months.insert(k.visit_month);

  std::size_t skewed = 0;
  for (std::ptrdiff_t c = 0; c < fm.cols(); ++c) {
    const auto obs = fm.observed_column(c);
    if (stats::is_skewed(obs, kSkewThreshold)) {
      ++skewed;
      p.skewed_columns.push_back(fm.col_names[static_cast<std::size_t>(c)]);
    }
    p.per_column_missing[fm.col_names[static_cast<std::size_t>(c)]] =
        100.0 * static_cast<double>(fm.missing_count(c)) / static_cast<double>(fm.rows());
  }
  const double cells = static_cast<double>(fm.rows()) * static_cast<double>(fm.cols());
  p.pct_skewed_columns = 100.0 * static_cast<double>(skewed) / static_cast<double>(fm.cols());
  p.pct_missing_cells = cells > 0 ? 100.0 * static_cast<double>(fm.missing_count()) / cells : 0.0;
  return p;
}

std::string format_profile(const DataProfile& p) {
  std::ostringstream os;
  os << "patients:            " << p.n_patients << '\n';
  os << "visit months:        ";
  bool first = true;
  for (int m : p.visit_months) {
    os << (first ? "" : ",") << m;
    first = false;
  }
  os << '\n';
  os << "skewed columns (%):  " << csv::format_double(std::round(p.pct_skewed_columns * 100.0) / 100.0) << '\n';
  os << "missing cells (%):   " << csv::format_double(std::round(p.pct_missing_cells * 100.0) / 100.0) << '\n';
  std::string worst;
  double worst_pct = -1.0;
  for (const auto& [name, pct] : p.per_column_missing) {
    if (pct > worst_pct) {
      worst_pct = pct;
      worst = name;
    }
  }
  os << "most missing column: " << worst << " (" << csv::format_double(std::round(worst_pct * 100.0) / 100.0)
     << "%)\n";
  return os.str();
}

std::vector<Violation> validate_cohort(const Cohort& cohort) {
  std::vector<Violation> out;
  std::map<std::string, RowKey> clinical_visits;
  auto check_clinical = [&](const ClinicalRecord& r) {
    if (r.visit_month < 0) out.push_back({"negative visit month", r.visit_id, std::to_string(r.visit_month)});
    double sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      if (!r.updrs[k]) continue;
      if (*r.updrs[k] < 0.0) out.push_back({"negative updrs", r.visit_id, kUpdrsNames[k]});
      sum += *r.updrs[k];
    }
    if (sum > kMaxUpdrsTotal) out.push_back({"updrs sum exceeds 272", r.visit_id, csv::format_double(sum)});
    const RowKey key{r.patient_id, r.visit_month};
    auto [it, inserted] = clinical_visits.emplace(r.visit_id, key);
    if (!inserted && it->second != key) {
      out.push_back({"inconsistent visit id", r.visit_id, "maps to more than one (patient, month)"});
    }
  };
  for (const auto& r : cohort.clinical) check_clinical(r);
  for (const auto& r : cohort.supplemental) check_clinical(r);

  std::set<std::string> reported;
  auto check_link = [&](const std::string& visit_id, int patient, int month) {
    auto it = clinical_visits.find(visit_id);
    if (it == clinical_visits.end()) {
      if (reported.insert(visit_id).second) out.push_back({"orphaned visit", visit_id, "no clinical record"});
    } else if (it->second != RowKey{patient, month}) {
      out.push_back({"inconsistent visit id", visit_id, "patient/month differ from clinical record"});
    }
  };
  for (const auto& p : cohort.peptides) {
    check_link(p.visit_id, p.patient_id, p.visit_month);
    if (p.peptide_abundance && *p.peptide_abundance < 0.0) {
      out.push_back({"negative abundance", p.visit_id, p.peptide_sequence});
    }
  }
  for (const auto& p : cohort.proteins) check_link(p.visit_id, p.patient_id, p.visit_month);
  if (cohort.clinical.empty()) out.push_back({"empty cohort", "", "no clinical records"});
  return out;
}

}  // namespace pdprog
