#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pdprog/dataset.hpp"
#include "pdprog/error.hpp"
#include "pdprog/pipeline.hpp"

using namespace pdprog;
namespace fs = std::filesystem;

namespace {

/// Flag values; only the ones given on the command line override the config.
struct Flags {
  std::string config_path;
  std::string data_dir, out_dir, model;
  std::uint64_t seed = 0;
  double lr = 0, weight_decay = 0;
  int max_epochs = 0, patience = 0, batch_size = 0, horizon = 0, lag_depth = 0;
  int patients = 0;
  double eps = 1e-5, tol = 1e-4;
  int seeds = 20;
};

struct Opts {
  CLI::Option* data_dir = nullptr;
  CLI::Option* out_dir = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* model = nullptr;
  CLI::Option* lr = nullptr;
  CLI::Option* weight_decay = nullptr;
  CLI::Option* max_epochs = nullptr;
  CLI::Option* patience = nullptr;
  CLI::Option* batch_size = nullptr;
  CLI::Option* horizon = nullptr;
  CLI::Option* lag_depth = nullptr;
  CLI::Option* patients = nullptr;
};

void add_common(CLI::App* cmd, Flags& f, Opts& o) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
  o.data_dir = cmd->add_option("--data-dir", f.data_dir, "Directory holding the cohort CSVs");
  o.out_dir = cmd->add_option("--out-dir", f.out_dir, "Directory for outputs");
  o.seed = cmd->add_option("--seed", f.seed, "Random seed");
}

void add_model_flags(CLI::App* cmd, Flags& f, Opts& o, bool with_model) {
  if (with_model) {
    o.model = cmd->add_option("--model", f.model, "Model family")->check(CLI::IsMember({"lstm", "kan"}));
  }
  o.lr = cmd->add_option("--lr", f.lr, "Learning rate");
  o.weight_decay = cmd->add_option("--weight-decay", f.weight_decay, "Decoupled weight decay");
  o.max_epochs = cmd->add_option("--max-epochs", f.max_epochs, "Epoch limit");
  o.patience = cmd->add_option("--patience", f.patience, "Early-stopping patience");
  o.batch_size = cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
  o.horizon = cmd->add_option("--horizon", f.horizon, "Months between input and target visit");
  o.lag_depth = cmd->add_option("--lag-depth", f.lag_depth, "Number of past visits per input");
}

bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

pipeline::RunConfig resolve(const Flags& f, const Opts& o, bool seed_is_synth) {
  pipeline::RunConfig c;
  if (!f.config_path.empty()) c = pipeline::load_config(f.config_path, c);
  if (given(o.data_dir)) c.data_dir = f.data_dir;
  if (given(o.out_dir)) c.out_dir = f.out_dir;
  if (given(o.seed)) (seed_is_synth ? c.synth.seed : c.seed) = f.seed;
  if (given(o.model)) c.model = f.model;
  if (given(o.lr)) c.lr = f.lr;
  if (given(o.weight_decay)) c.weight_decay = f.weight_decay;
  if (given(o.max_epochs)) c.max_epochs = f.max_epochs;
  if (given(o.patience)) c.patience = f.patience;
  if (given(o.batch_size)) c.batch_size = f.batch_size;
  if (given(o.horizon)) c.lag.horizon_months = f.horizon;
  if (given(o.lag_depth)) c.lag.lag_depth = f.lag_depth;
  if (given(o.patients)) c.synth.n_patients = f.patients;
  pipeline::validate(c);
  return c;
}

void echo_config(const pipeline::RunConfig& c, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config.json", std::ios::binary);
  if (!out) throw io_error("cannot write config echo in " + dir);
  out << pipeline::to_json(c);
}

Cohort load(const pipeline::RunConfig& c) { return load_cohort(CohortPaths::in_directory(c.data_dir)); }

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage:
      return 1;
    case ErrorKind::kData:
    case ErrorKind::kIo:
      return 2;
    case ErrorKind::kNumerical:
      return 3;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disease progression forecasting: synthetic cohorts, preprocessing, LSTM and KAN models"};
  app.require_subcommand(1);
  Flags f;

  Opts gen_o, prof_o, an_o, tr_o, ev_o, bm_o;
  auto* gen = app.add_subcommand("generate", "Write a synthetic cohort (4 CSVs) and print its profile");
  add_common(gen, f, gen_o);
  gen_o.patients = gen->add_option("--patients", f.patients, "Number of patients");

  auto* prof = app.add_subcommand("profile", "Print the profile of a cohort on disk");
  add_common(prof, f, prof_o);

  auto* an = app.add_subcommand("analyze", "Correlation matrix and peptide-presence KDE curves");
  add_common(an, f, an_o);

  auto* tr = app.add_subcommand("train", "Train one model and write checkpoint, history and report");
  add_common(tr, f, tr_o);
  add_model_flags(tr, f, tr_o, true);

  auto* ev = app.add_subcommand("evaluate", "Score a trained run directory (--out-dir) on the validation split");
  add_common(ev, f, ev_o);

  auto* bm = app.add_subcommand("benchmark", "Train both models on the same split and compare");
  add_common(bm, f, bm_o);
  add_model_flags(bm, f, bm_o, false);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks for every layer family");
  gc->add_option("--eps", f.eps, "Central-difference step");
  gc->add_option("--tol", f.tol, "Relative error tolerance");
  gc->add_option("--seeds", f.seeds, "Random instances per family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const auto c = resolve(f, gen_o, true);
      const Cohort cohort = generate_synthetic(c.synth);
      fs::create_directories(c.data_dir);
      write_cohort(cohort, CohortPaths::in_directory(c.data_dir));
      std::cout << format_profile(profile(cohort));
    } else if (prof->parsed()) {
      const auto c = resolve(f, prof_o, false);
      const Cohort cohort = load(c);
      std::cout << format_profile(profile(cohort));
      const auto issues = validate_cohort(cohort);
      std::cout << "violations:          " << issues.size() << '\n';
      for (std::size_t i = 0; i < std::min<std::size_t>(issues.size(), 20); ++i) {
        std::cout << "  " << issues[i].kind << ' ' << issues[i].visit_id << ' ' << issues[i].detail << '\n';
      }
    } else if (an->parsed()) {
      const auto c = resolve(f, an_o, false);
      const auto a = pipeline::analyze(load(c), c.kde_peptides);
      pipeline::write_analysis(a, c.out_dir);
      echo_config(c, c.out_dir);
      std::cout << "correlation (visit_month, updrs_1..4):\n" << a.correlation << '\n'
                << "kde curves: " << a.curves.size() << " written to " << c.out_dir << '\n';
    } else if (tr->parsed()) {
      const auto c = resolve(f, tr_o, false);
      const auto data = pipeline::prepare(load(c), c);
      auto o = pipeline::train_one(c, c.model, data);
      pipeline::write_outcome(c, o, data, c.out_dir);
      std::cout << models::summary_text(o.summary) << '\n'
                << "epochs: " << o.result.history.epochs.size() << " (best " << o.result.history.best_epoch
                << (o.result.history.stopped_early ? ", stopped early" : "") << ")\n"
                << "train seconds: " << o.train_seconds << "\n\n"
                << traineval::report_text(o.report) << "\nmean baseline:\n"
                << traineval::report_text(o.baseline);
    } else if (ev->parsed()) {
      const auto c = resolve(f, ev_o, false);
      const auto rep = pipeline::evaluate_saved(load(c), c.out_dir);
      traineval::write_report_csv(rep, (fs::path(c.out_dir) / "eval_report.csv").string());
      std::cout << traineval::report_text(rep);
    } else if (bm->parsed()) {
      const auto c = resolve(f, bm_o, false);
      const auto start = std::chrono::steady_clock::now();
      const auto r = pipeline::run_benchmark(load(c), c, c.out_dir);
      echo_config(c, c.out_dir);
      std::cout << pipeline::benchmark_text(r) << "total seconds: "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << '\n';
    } else if (gc->parsed()) {
      const auto rows = pipeline::run_gradcheck(f.seeds, f.eps, f.tol);
      std::cout << pipeline::gradcheck_text(rows);
      for (const auto& r : rows) {
        if (!r.pass) return 3;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
