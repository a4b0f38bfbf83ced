#include "pdprog/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "pdprog/csv.hpp"
#include "pdprog/error.hpp"
#include "pdprog/kan.hpp"

namespace pdprog::pipeline {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << text;
  if (!out) throw io_error("failed writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

template <class T>
void put_optional(ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) {
    j[key] = *v;
  } else {
    j[key] = nullptr;
  }
}

template <class T>
void read_optional(const ordered_json& j, const char* key, std::optional<T>& v) {
  if (!j.contains(key)) return;
  if (j[key].is_null()) {
    v.reset();
  } else {
    v = j[key].get<T>();
  }
}

template <class T>
void read(const ordered_json& j, const char* key, T& v) {
  if (j.contains(key)) v = j[key].get<T>();
}

void reject_unknown(const ordered_json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw usage_error("InvalidConfig", "unknown key '" + it.key() + "' in " + where);
  }
}

}  // namespace

std::string to_json(const RunConfig& c) {
  ordered_json j;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["model"] = c.model;
  j["seed"] = c.seed;
  j["synth"] = {{"n_patients", c.synth.n_patients},
                {"visit_months", c.synth.visit_months},
                {"n_peptides", c.synth.n_peptides},
                {"n_proteins", c.synth.n_proteins},
                {"target_pct_skewed", c.synth.target_pct_skewed},
                {"target_pct_missing", c.synth.target_pct_missing},
                {"updrs12_correlation", c.synth.updrs12_correlation},
                {"n_supplemental_patients", c.synth.n_supplemental_patients},
                {"seed", c.synth.seed}};
  j["lag"] = {{"horizon_months", c.lag.horizon_months},
              {"lag_depth", c.lag.lag_depth},
              {"include_visit_month", c.lag.include_visit_month},
              {"include_medication", c.lag.include_medication},
              {"n_presence_peptides", c.lag.n_presence_peptides}};
  ordered_json impute = {{"sv_threshold", c.preprocess.impute.sv_threshold},
                         {"max_iter", c.preprocess.impute.max_iter},
                         {"tol", c.preprocess.impute.tol}};
  put_optional(impute, "max_rank", c.preprocess.impute.max_rank);
  j["preprocess"] = {{"transform_skewed", c.preprocess.transform_skewed},
                     {"skew_threshold", c.preprocess.skew_threshold},
                     {"impute", impute}};
  j["validation_fraction"] = c.validation_fraction;
  j["include_supplemental"] = c.include_supplemental;
  ordered_json t;
  put_optional(t, "lr", c.lr);
  put_optional(t, "weight_decay", c.weight_decay);
  put_optional(t, "max_epochs", c.max_epochs);
  put_optional(t, "patience", c.patience);
  put_optional(t, "batch_size", c.batch_size);
  t["dropout"] = c.dropout;
  j["train"] = t;
  j["lstm"] = {{"hidden", c.lstm_hidden}, {"bidirectional", c.lstm_bidirectional}, {"head_widths", c.lstm_head}};
  j["kan"] = {{"hidden_widths", c.kan_hidden},
              {"grid_size", c.kan_grid_size},
              {"spline_order", c.kan_spline_order}};
  j["kde_peptides"] = c.kde_peptides;
  return j.dump(2) + "\n";
}

RunConfig overlay_json(const RunConfig& base, const std::string& text) {
  RunConfig c = base;
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw usage_error("InvalidConfig", std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw usage_error("InvalidConfig", "config must be a JSON object");
  try {
    reject_unknown(j,
                   {"data_dir", "out_dir", "model", "seed", "synth", "lag", "preprocess", "validation_fraction",
                    "include_supplemental", "train", "lstm", "kan", "kde_peptides"},
                   "config");
    read(j, "data_dir", c.data_dir);
    read(j, "out_dir", c.out_dir);
    read(j, "model", c.model);
    read(j, "seed", c.seed);
    read(j, "validation_fraction", c.validation_fraction);
    read(j, "include_supplemental", c.include_supplemental);
    read(j, "kde_peptides", c.kde_peptides);
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      reject_unknown(s,
                     {"n_patients", "visit_months", "n_peptides", "n_proteins", "target_pct_skewed",
                      "target_pct_missing", "updrs12_correlation", "n_supplemental_patients", "seed"},
                     "synth");
      read(s, "n_patients", c.synth.n_patients);
      read(s, "visit_months", c.synth.visit_months);
      read(s, "n_peptides", c.synth.n_peptides);
      read(s, "n_proteins", c.synth.n_proteins);
      read(s, "target_pct_skewed", c.synth.target_pct_skewed);
      read(s, "target_pct_missing", c.synth.target_pct_missing);
      read(s, "updrs12_correlation", c.synth.updrs12_correlation);
      read(s, "n_supplemental_patients", c.synth.n_supplemental_patients);
      read(s, "seed", c.synth.seed);
    }
    if (j.contains("lag")) {
      const auto& l = j["lag"];
      reject_unknown(l,
                     {"horizon_months", "lag_depth", "include_visit_month", "include_medication",
                      "n_presence_peptides"},
                     "lag");
      read(l, "horizon_months", c.lag.horizon_months);
      read(l, "lag_depth", c.lag.lag_depth);
      read(l, "include_visit_month", c.lag.include_visit_month);
      read(l, "include_medication", c.lag.include_medication);
      read(l, "n_presence_peptides", c.lag.n_presence_peptides);
    }
    if (j.contains("preprocess")) {
      const auto& p = j["preprocess"];
      reject_unknown(p, {"transform_skewed", "skew_threshold", "impute"}, "preprocess");
      read(p, "transform_skewed", c.preprocess.transform_skewed);
      read(p, "skew_threshold", c.preprocess.skew_threshold);
      if (p.contains("impute")) {
        const auto& im = p["impute"];
        reject_unknown(im, {"sv_threshold", "max_iter", "tol", "max_rank"}, "preprocess.impute");
        read(im, "sv_threshold", c.preprocess.impute.sv_threshold);
        read(im, "max_iter", c.preprocess.impute.max_iter);
        read(im, "tol", c.preprocess.impute.tol);
        read_optional(im, "max_rank", c.preprocess.impute.max_rank);
      }
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      reject_unknown(t, {"lr", "weight_decay", "max_epochs", "patience", "batch_size", "dropout"}, "train");
      read_optional(t, "lr", c.lr);
      read_optional(t, "weight_decay", c.weight_decay);
      read_optional(t, "max_epochs", c.max_epochs);
      read_optional(t, "patience", c.patience);
      read_optional(t, "batch_size", c.batch_size);
      read(t, "dropout", c.dropout);
    }
    if (j.contains("lstm")) {
      const auto& l = j["lstm"];
      reject_unknown(l, {"hidden", "bidirectional", "head_widths"}, "lstm");
      read(l, "hidden", c.lstm_hidden);
      read(l, "bidirectional", c.lstm_bidirectional);
      read(l, "head_widths", c.lstm_head);
    }
    if (j.contains("kan")) {
      const auto& k = j["kan"];
      reject_unknown(k, {"hidden_widths", "grid_size", "spline_order"}, "kan");
      read(k, "hidden_widths", c.kan_hidden);
      read(k, "grid_size", c.kan_grid_size);
      read(k, "spline_order", c.kan_spline_order);
    }
  } catch (const nlohmann::json::exception& e) {
    throw usage_error("InvalidConfig", std::string("config value has the wrong type: ") + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  return overlay_json(base, read_text_file(path));
}

void validate(const RunConfig& c) {
  if (c.model != "lstm" && c.model != "kan") {
    throw usage_error("InvalidConfig", "model must be 'lstm' or 'kan', got '" + c.model + "'");
  }
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0)) {
    throw usage_error("InvalidConfig", "validation fraction must lie in (0, 1)");
  }
  if (c.lag.horizon_months < 1) throw usage_error("InvalidConfig", "horizon must be at least 1 month");
  if (c.lag.lag_depth < 1) throw usage_error("InvalidConfig", "lag depth must be at least 1");
  if (c.lag.n_presence_peptides < c.lag.lag_depth - 1) {
    throw usage_error("InvalidConfig", "presence block must hold the lag_depth - 1 observed flags");
  }
  if (c.kde_peptides < 1) throw usage_error("InvalidConfig", "kde_peptides must be at least 1");
  traineval::validate(train_config_for(c, "lstm"));
  traineval::validate(train_config_for(c, "kan"));
}

traineval::TrainConfig train_config_for(const RunConfig& c, const std::string& family) {
  auto t = traineval::default_train_config(family);
  if (c.lr) t.lr = *c.lr;
  if (c.weight_decay) t.weight_decay = *c.weight_decay;
  if (c.max_epochs) t.max_epochs = *c.max_epochs;
  if (c.patience) t.patience = *c.patience;
  if (c.batch_size) t.batch_size = *c.batch_size;
  t.dropout = c.dropout;
  t.seed = c.seed;
  return t;
}

// ---------------------------------------------------------------------------

PreparedData prepare(const Cohort& cohort, const RunConfig& c) {
  PreparedData d;
  const auto patients = cohort_patients(cohort);
  d.validation_patients = choose_validation_patients(patients, c.validation_fraction, c.seed);
  std::set<int> train_patients;
  for (int p : patients) {
    if (!d.validation_patients.count(p)) train_patients.insert(p);
  }
  const Cohort train_cohort = filter_cohort(cohort, train_patients);
  const Cohort val_cohort = filter_cohort(cohort, d.validation_patients);
  d.preprocessor = fit_preprocessor(merged_feature_table(train_cohort, c.include_supplemental), c.preprocess);
  d.presence_peptides = top_peptides(train_cohort, presence_peptide_count(c.lag));
  d.train = build_supervised(train_cohort, d.preprocessor, c.lag, d.presence_peptides);
  d.validation = build_supervised(val_cohort, d.preprocessor, c.lag, d.presence_peptides);
  return d;
}

models::Model build_model(const RunConfig& c, const std::string& family, const PreparedData& data) {
  if (family == "lstm") {
    models::LstmForecasterConfig m;
    m.input_width = data.train.step_width;
    m.hidden = c.lstm_hidden;
    m.bidirectional = c.lstm_bidirectional;
    m.attention_width = c.lstm_hidden * (c.lstm_bidirectional ? 2 : 1);
    m.head_widths = c.lstm_head;
    m.dropout = c.dropout;
    return models::build_lstm_forecaster(m, c.seed);
  }
  if (family == "kan") {
    models::KanForecasterConfig m;
    m.widths = {static_cast<int>(data.train.inputs.cols())};
    m.widths.insert(m.widths.end(), c.kan_hidden.begin(), c.kan_hidden.end());
    m.grid_size = c.kan_grid_size;
    m.spline_order = c.kan_spline_order;
    m.dropout = c.dropout;
    return models::build_kan_forecaster(m, c.seed);
  }
  throw usage_error("InvalidConfig", "unknown model family '" + family + "'");
}

traineval::EvalReport mean_baseline(const PreparedData& data) {
  const auto scaler = traineval::fit_target_scaler(data.train);
  Eigen::MatrixXd pred(data.validation.rows(), 4);
  for (int j = 0; j < 4; ++j) pred.col(j).setConstant(scaler.mean[static_cast<std::size_t>(j)]);
  return traineval::evaluate_predictions(pred, data.validation.targets, data.validation.target_mask);
}

TrainOutcome train_one(const RunConfig& c, const std::string& family, const PreparedData& data) {
  TrainOutcome o{family, build_model(c, family, data), {}, {}, {}, {}, 0.0};
  o.summary = models::summarize(o.model);
  const auto start = std::chrono::steady_clock::now();
  o.result = traineval::train(o.model, data.train, data.validation, train_config_for(c, family));
  o.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.report = traineval::evaluate(o.model, data.validation, o.result.scaler);
  o.baseline = mean_baseline(data);
  return o;
}

namespace {

std::string scaler_json(const traineval::TargetScaler& s) {
  ordered_json j;
  j["mean"] = s.mean;
  j["sd"] = s.sd;
  return j.dump(2) + "\n";
}

traineval::TargetScaler scaler_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    traineval::TargetScaler s;
    s.mean = j.at("mean").get<std::array<double, 4>>();
    s.sd = j.at("sd").get<std::array<double, 4>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("BadScaler", e.what());
  }
}

}  // namespace

void write_outcome(const RunConfig& c, const TrainOutcome& o, const PreparedData& data, const std::string& dir) {
  ensure_dir(dir);
  RunConfig echo = c;
  echo.model = o.family;
  write_text_file(join(dir, "config.json"), to_json(echo));
  save_preprocessor(data.preprocessor, join(dir, "preprocessor.json"));
  const auto state = nn::state_of(*o.model.net);
  nn::save_checkpoint(join(dir, "checkpoint.bin"), state);
  write_text_file(join(dir, "checkpoint.json"), nn::checkpoint_manifest(state, o.model.config_json) + "\n");
  write_text_file(join(dir, "target_scaler.json"), scaler_json(o.result.scaler));
  write_text_file(join(dir, "summary.csv"), models::summary_csv(o.summary));
  traineval::write_history_csv(o.result.history, join(dir, "history.csv"));
  traineval::write_report_csv(o.report, join(dir, "report.csv"));
  traineval::write_predictions_csv(o.report, join(dir, "predictions.csv"));
  traineval::write_report_csv(o.baseline, join(dir, "baseline.csv"));
}

traineval::EvalReport evaluate_saved(const Cohort& cohort, const std::string& dir) {
  const RunConfig c = load_config(join(dir, "config.json"));
  validate(c);
  PreparedData data = prepare(cohort, c);
  const auto saved = load_preprocessor(join(dir, "preprocessor.json"));
  if (!(saved == data.preprocessor)) {
    throw data_error("PreprocessorMismatch", "data in this directory does not reproduce the saved preprocessor");
  }
  auto model = build_model(c, c.model, data);
  nn::load_state(*model.net, nn::load_checkpoint(join(dir, "checkpoint.bin")));
  const auto scaler = scaler_from_json(read_text_file(join(dir, "target_scaler.json")));
  return traineval::evaluate(model, data.validation, scaler);
}

BenchmarkResult run_benchmark(const Cohort& cohort, const RunConfig& c, const std::string& out_dir) {
  const PreparedData data = prepare(cohort, c);
  BenchmarkResult r;
  r.baseline = mean_baseline(data);
  for (const std::string family : {"lstm", "kan"}) {
    auto o = train_one(c, family, data);
    if (!out_dir.empty()) write_outcome(c, o, data, join(out_dir, family));
    r.rows.push_back({family, o.report, o.result.history, o.train_seconds});
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text_file(join(out_dir, "benchmark.csv"), benchmark_csv(r));
    write_text_file(join(out_dir, "benchmark.txt"), benchmark_text(r));
    traineval::write_report_csv(r.baseline, join(out_dir, "baseline.csv"));
  }
  return r;
}

std::string benchmark_csv(const BenchmarkResult& r) {
  std::ostringstream os;
  os << "model,avg_smape,avg_mse,avg_rmse,train_seconds\n";
  for (const auto& row : r.rows) {
    os << row.model << ',' << csv::format_double(row.report.average.smape) << ','
       << csv::format_double(row.report.average.mse) << ',' << csv::format_double(row.report.average.rmse) << ','
       << csv::format_double(std::round(row.train_seconds * 1000.0) / 1000.0) << '\n';
  }
  return os.str();
}

std::string benchmark_text(const BenchmarkResult& r) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "model" << std::right << std::setw(12) << "SMAPE" << std::setw(12) << "MSE"
     << std::setw(12) << "RMSE" << std::setw(12) << "epochs" << std::setw(14) << "train (s)" << '\n'
     << std::fixed;
  for (const auto& row : r.rows) {
    os << std::left << std::setw(10) << row.model << std::right << std::setprecision(4) << std::setw(12)
       << row.report.average.smape << std::setw(12) << row.report.average.mse << std::setw(12)
       << row.report.average.rmse << std::setw(12) << row.history.epochs.size() << std::setprecision(2)
       << std::setw(14) << row.train_seconds << '\n';
  }
  os << std::left << std::setw(10) << "mean" << std::right << std::setprecision(4) << std::setw(12)
     << r.baseline.average.smape << std::setw(12) << r.baseline.average.mse << std::setw(12)
     << r.baseline.average.rmse << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

nn::Matrix normal_matrix(Eigen::Index r, Eigen::Index c, nn::Rng& rng) {
  nn::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

struct Instance {
  std::unique_ptr<nn::Module> net;
  nn::Matrix x;
};

Instance make_instance(const std::string& family, std::uint64_t seed) {
  nn::Rng rng(seed);
  const Eigen::Index batch = 5;
  Instance in;
  if (family == "linear") {
    in.net = std::make_unique<nn::Linear>(4, 3, rng);
    in.x = normal_matrix(batch, 4, rng);
  } else if (family == "batchnorm") {
    auto s = std::make_unique<nn::Sequential>();
    s->add("fc", std::make_unique<nn::Linear>(4, 3, rng));
    s->add("bn", std::make_unique<nn::BatchNorm>(3));
    auto& bn = dynamic_cast<nn::BatchNorm&>(*s->stages().back().module);
    for (Eigen::Index i = 0; i < 3; ++i) {
      bn.gamma().value(i, 0) = rng.uniform(0.5, 1.5);
      bn.beta().value(i, 0) = rng.uniform(-0.5, 0.5);
    }
    in.net = std::move(s);
    in.x = normal_matrix(batch, 4, rng);
  } else if (family == "dropout_off") {
    auto s = std::make_unique<nn::Sequential>();
    s->add("fc1", std::make_unique<nn::Linear>(4, 5, rng));
    s->add("drop", std::make_unique<nn::Dropout>(0.5, rng.next()));
    s->add("fc2", std::make_unique<nn::Linear>(5, 3, rng));
    s->set_training(false);
    in.net = std::move(s);
    in.x = normal_matrix(batch, 4, rng);
  } else if (family == "lstm") {
    in.net = std::make_unique<nn::Lstm>(3, 4, true, rng);
    in.x = normal_matrix(batch, 3 * 3, rng);
  } else if (family == "attention") {
    in.net = std::make_unique<nn::Attention>(4, rng);
    in.x = normal_matrix(batch, 3 * 4, rng);
  } else if (family == "kan") {
    in.net = std::make_unique<kan::KanLayer>(3, 2, kan::BSplineConfig{5, 3, -3.0, 3.0}, rng);
    in.x = normal_matrix(batch, 3, rng);
  } else if (family == "lstm_forecaster") {
    models::LstmForecasterConfig c;
    c.input_width = 3;
    c.hidden = 3;
    c.attention_width = 6;
    c.head_widths = {5, 4, 3};
    c.dropout = 0.0;
    auto m = models::build_lstm_forecaster(c, seed);
    // Unit-scale hidden weights keep BatchNorm inputs from collapsing.
    for (auto* p : m.net->parameters()) {
      if (p->name.rfind("fc", 0) == 0) p->value = normal_matrix(p->value.rows(), p->value.cols(), rng);
    }
    in.net = std::move(m.net);
    in.x = normal_matrix(12, 3 * 2, rng);
  } else if (family == "kan_forecaster") {
    models::KanForecasterConfig c;
    c.widths = {4, 3, 3};
    c.grid_size = 4;
    c.dropout = 0.0;
    auto m = models::build_kan_forecaster(c, seed);
    in.net = std::move(m.net);
    in.x = normal_matrix(batch, 4, rng);
  } else {
    throw usage_error("InvalidConfig", "unknown gradient-check family '" + family + "'");
  }
  return in;
}

/// Finite differences are only meaningful where the loss is smooth across the
/// stencil: every ReLU input must sit clear of the kink, and BatchNorm must not
/// divide by a near-zero batch spread (which turns tiny steps into kink crossings).
bool well_conditioned(nn::Module& m, double margin, double min_std) {
  if (auto* s = dynamic_cast<nn::Sequential*>(&m)) {
    for (const auto& st : s->stages()) {
      if (!well_conditioned(*st.module, margin, min_std)) return false;
    }
    return true;
  }
  if (auto* r = dynamic_cast<nn::ReLU*>(&m)) return r->last_input().cwiseAbs().minCoeff() >= margin;
  if (auto* b = dynamic_cast<nn::BatchNorm*>(&m)) {
    return b->last_inv_std().size() == 0 || b->last_inv_std().maxCoeff() <= 1.0 / min_std;
  }
  return true;
}

}  // namespace

GradCheckInstance gradcheck_instance(const std::string& family, std::uint64_t seed, double eps) {
  // Both bounds grow with the step so a coarse stencil stays on one smooth piece.
  const double margin = std::max(1e-3, 50.0 * eps);
  const double min_std = std::max(0.1, 150.0 * eps);
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    const std::uint64_t s = seed + attempt * 1000003ULL;
    auto in = make_instance(family, s);
    const nn::Matrix y = in.net->forward(in.x);
    if (!well_conditioned(*in.net, margin, min_std)) continue;
    nn::Rng noise(s ^ 0xA5A5A5A5ULL);
    // Targets near the output keep finite-difference roundoff small where a
    // gradient is structurally zero (a bias feeding BatchNorm).
    nn::Matrix target = y + 0.005 * normal_matrix(y.rows(), y.cols(), noise);
    return {std::move(in.net), std::move(in.x), std::move(target)};
  }
  throw numerical_error("IllConditioned", "no well-conditioned instance for " + family);
}

std::vector<std::string> gradcheck_families() {
  return {"linear", "batchnorm", "dropout_off", "lstm", "attention", "kan", "lstm_forecaster", "kan_forecaster"};
}

std::vector<GradCheckRow> run_gradcheck(int n_seeds, double eps, double tolerance, std::uint64_t base_seed) {
  if (n_seeds < 1) throw usage_error("InvalidConfig", "need at least one seed");
  if (!(eps > 0.0) || !(tolerance > 0.0)) throw usage_error("InvalidConfig", "eps and tolerance must be positive");
  std::vector<GradCheckRow> rows;
  for (const auto& family : gradcheck_families()) {
    GradCheckRow row{family, n_seeds, 0.0, true};
    for (int s = 0; s < n_seeds; ++s) {
      const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s) * 7919u;
      auto in = gradcheck_instance(family, seed, eps);
      const MaskMatrix mask = MaskMatrix::Constant(in.target.rows(), in.target.cols(), true);
      const auto rep = nn::grad_check(*in.net, in.input, in.target, mask, eps, tolerance);
      for (const auto& [name, err] : rep.max_rel_error) row.max_rel_error = std::max(row.max_rel_error, err);
      row.pass = row.pass && rep.pass;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string gradcheck_text(const std::vector<GradCheckRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "family" << std::right << std::setw(7) << "seeds" << std::setw(16)
     << "max rel error" << "  result\n";
  for (const auto& r : rows) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    os << std::left << std::setw(18) << r.family << std::right << std::setw(7) << r.seeds << std::setw(16)
       << err.str() << "  " << (r.pass ? "pass" : "FAIL") << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

AnalysisResult analyze(const Cohort& cohort, int n_peptides, std::size_t grid_points) {
  if (n_peptides < 1) throw usage_error("InvalidConfig", "need at least one peptide");
  AnalysisResult a;
  const FeatureMatrix merged = merged_feature_table(cohort, false);
  a.columns = {"visit_month"};
  a.columns.insert(a.columns.end(), kUpdrsNames.begin(), kUpdrsNames.end());
  std::vector<std::ptrdiff_t> cols;
  for (const auto& n : a.columns) cols.push_back(merged.column_index(n));
  a.correlation = correlation_matrix(merged, cols);

  // Total score per visit: sum of the observed parts, skipped when none is.
  std::vector<double> total(static_cast<std::size_t>(merged.rows()), 0.0);
  std::vector<bool> has_total(total.size(), false);
  for (std::ptrdiff_t r = 0; r < merged.rows(); ++r) {
    for (std::size_t j = 1; j < cols.size(); ++j) {
      if (merged.observed(r, cols[j])) {
        total[static_cast<std::size_t>(r)] += merged.values(r, cols[j]);
        has_total[static_cast<std::size_t>(r)] = true;
      }
    }
  }
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t r = 0; r < total.size(); ++r) {
    if (!has_total[r]) continue;
    lo = any ? std::min(lo, total[r]) : total[r];
    hi = any ? std::max(hi, total[r]) : total[r];
    any = true;
  }
  if (!any) throw data_error("NoObservedTargets", "no visit has an observed score");
  const double pad = std::max(1.0, 0.1 * (hi - lo));
  const auto grid = linspace(lo - pad, hi + pad, grid_points);

  const auto peptides = top_peptides(cohort, static_cast<std::size_t>(n_peptides));
  const FeatureMatrix presence = peptide_presence(cohort, peptides);
  for (std::size_t p = 0; p < peptides.size(); ++p) {
    for (const bool present : {true, false}) {
      std::vector<double> samples;
      for (std::ptrdiff_t r = 0; r < presence.rows(); ++r) {
        const bool is_present = presence.values(r, static_cast<std::ptrdiff_t>(p)) > 0.5;
        if (is_present == present && has_total[static_cast<std::size_t>(r)]) {
          samples.push_back(total[static_cast<std::size_t>(r)]);
        }
      }
      if (samples.size() < 2) continue;
      a.curves.push_back({peptides[p], present ? "present" : "absent", samples.size(), kde(samples, std::nullopt, grid)});
    }
  }
  return a;
}

void write_analysis(const AnalysisResult& a, const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::string> header{""};
  header.insert(header.end(), a.columns.begin(), a.columns.end());
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < a.columns.size(); ++i) {
    std::vector<std::string> row{a.columns[i]};
    for (std::size_t j = 0; j < a.columns.size(); ++j) {
      row.push_back(csv::format_double(a.correlation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
    rows.push_back(std::move(row));
  }
  csv::write_file(join(out_dir, "correlation.csv"), header, rows);

  rows.clear();
  for (const auto& c : a.curves) {
    for (std::size_t g = 0; g < c.density.grid.size(); ++g) {
      rows.push_back({c.peptide, c.group, std::to_string(c.samples), csv::format_double(c.density.grid[g]),
                      csv::format_double(c.density.density[g])});
    }
  }
  csv::write_file(join(out_dir, "kde_curves.csv"), {"peptide", "group", "n", "total_updrs", "density"}, rows);
}

}  // namespace pdprog::pipeline
