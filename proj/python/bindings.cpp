#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <filesystem>
#include <optional>

#include "pdprog/dataset.hpp"
#include "pdprog/error.hpp"
#include "pdprog/kan.hpp"
#include "pdprog/models.hpp"
#include "pdprog/pipeline.hpp"
#include "pdprog/preprocess.hpp"
#include "pdprog/traineval.hpp"

namespace py = pybind11;
using namespace pdprog;

namespace {

std::string kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage:
      return "usage";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kNumerical:
      return "numerical";
    case ErrorKind::kIo:
      return "io";
  }
  return "unknown";
}

pipeline::RunConfig config_from(const std::string& json) {
  auto c = json.empty() ? pipeline::RunConfig{} : pipeline::overlay_json(pipeline::RunConfig{}, json);
  pipeline::validate(c);
  return c;
}

py::dict profile_dict(const DataProfile& p) {
  py::dict d;
  d["n_patients"] = p.n_patients;
  d["visit_months"] = std::vector<int>(p.visit_months.begin(), p.visit_months.end());
  d["pct_skewed_columns"] = p.pct_skewed_columns;
  d["pct_missing_cells"] = p.pct_missing_cells;
  d["skewed_columns"] = p.skewed_columns;
  d["per_column_missing"] = p.per_column_missing;
  return d;
}

py::dict metrics_dict(const traineval::Metrics& m) {
  py::dict d;
  d["smape"] = m.smape;
  d["mse"] = m.mse;
  d["rmse"] = m.rmse;
  return d;
}

py::dict report_dict(const traineval::EvalReport& r) {
  py::dict targets;
  for (const auto& t : r.per_target) {
    py::dict d = metrics_dict(t.metrics);
    d["n"] = t.count;
    targets[py::str(t.target)] = d;
  }
  py::dict d;
  d["targets"] = targets;
  d["average"] = metrics_dict(r.average);
  return d;
}

py::dict history_dict(const traineval::History& h) {
  std::vector<double> train, val;
  for (const auto& e : h.epochs) {
    train.push_back(e.train_loss);
    val.push_back(e.val_loss);
  }
  py::dict d;
  d["train_loss"] = train;
  d["val_loss"] = val;
  d["best_epoch"] = h.best_epoch;
  d["stopped_early"] = h.stopped_early;
  return d;
}

Cohort load(const std::string& data_dir) { return load_cohort(CohortPaths::in_directory(data_dir)); }

}  // namespace

PYBIND11_MODULE(_pdprog, m) {
  m.doc() = "Disease progression forecasting: synthetic cohorts, preprocessing, LSTM and KAN models";

  // Raised with `kind` (usage, data, numerical, io) and `code` attributes.
  static PyObject* error_type = PyErr_NewException("pdprog._pdprog.PdprogError", PyExc_RuntimeError, nullptr);
  m.add_object("PdprogError", py::handle(error_type));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(error_type)(e.what());
      err.attr("kind") = kind_name(e.kind());
      err.attr("code") = e.code();
      PyErr_SetObject(error_type, err.ptr());
    }
  });

  m.def("default_config", [] { return pipeline::to_json(pipeline::RunConfig{}); },
        "Default run configuration as JSON.");
  m.def("resolve_config", [](const std::string& json) { return pipeline::to_json(config_from(json)); },
        py::arg("json"), "Overlays `json` on the defaults, validates, and returns the full config.");

  m.def(
      "generate",
      [](const std::string& data_dir, int n_patients, std::uint64_t seed) {
        SynthConfig s;
        s.n_patients = n_patients;
        s.seed = seed;
        const Cohort c = generate_synthetic(s);
        std::filesystem::create_directories(data_dir);
        write_cohort(c, CohortPaths::in_directory(data_dir));
        return profile_dict(profile(c));
      },
      py::arg("data_dir"), py::arg("n_patients") = 248, py::arg("seed") = 42,
      "Writes a synthetic cohort (4 CSVs) and returns its profile.");
  m.def(
      "profile", [](const std::string& data_dir) { return profile_dict(profile(load(data_dir))); },
      py::arg("data_dir"));

  m.def(
      "smape", [](const std::vector<double>& a, const std::vector<double>& p) { return traineval::smape(a, p); },
      py::arg("actual"), py::arg("predicted"));
  m.def(
      "mse", [](const std::vector<double>& a, const std::vector<double>& p) { return traineval::mse(a, p); },
      py::arg("actual"), py::arg("predicted"));
  m.def(
      "rmse", [](const std::vector<double>& a, const std::vector<double>& p) { return traineval::rmse(a, p); },
      py::arg("actual"), py::arg("predicted"));

  m.def(
      "bspline_basis",
      [](double x, int grid_size, int spline_order, double grid_min, double grid_max) {
        kan::BSplineConfig c{grid_size, spline_order, grid_min, grid_max};
        kan::validate(c);
        return kan::bspline_basis(x, c);
      },
      py::arg("x"), py::arg("grid_size") = 10, py::arg("spline_order") = 3, py::arg("grid_min") = -3.0,
      py::arg("grid_max") = 3.0, "Dense vector of the G + k basis values at x.");

  m.def(
      "soft_impute",
      [](const Eigen::MatrixXd& values, double sv_threshold, int max_iter, double tol, std::optional<int> max_rank) {
        std::vector<std::string> names;
        for (Eigen::Index c = 0; c < values.cols(); ++c) names.push_back("c" + std::to_string(c));
        FeatureMatrix fm(static_cast<std::size_t>(values.rows()), names);
        for (Eigen::Index r = 0; r < values.rows(); ++r) {
          for (Eigen::Index c = 0; c < values.cols(); ++c) {
            if (!std::isnan(values(r, c))) fm.set(r, c, values(r, c));
          }
        }
        return soft_impute(fm, ImputeConfig{sv_threshold, max_iter, tol, max_rank}).matrix.values;
      },
      py::arg("values"), py::arg("sv_threshold") = 0.0, py::arg("max_iter") = 200, py::arg("tol") = 1e-6,
      py::arg("max_rank") = py::none(), "Completes NaN cells; observed cells come back unchanged.");

  m.def(
      "parameter_summary",
      [](const std::string& family, int input_width) {
        models::Model model = family == "lstm"
                                  ? models::build_lstm_forecaster([&] {
                                      models::LstmForecasterConfig c;
                                      c.input_width = input_width;
                                      return c;
                                    }(),
                                                                  1)
                                  : family == "kan" ? models::build_kan_forecaster(models::KanForecasterConfig{}, 1)
                                                    : throw usage_error("InvalidConfig", "unknown family " + family);
        return models::summary_csv(models::summarize(model));
      },
      py::arg("family"), py::arg("input_width") = 415,
      "Per-stage parameter CSV of a forecaster at its default widths.");

  m.def(
      "gradcheck",
      [](int seeds, double eps, double tol) {
        py::list out;
        for (const auto& r : pipeline::run_gradcheck(seeds, eps, tol)) {
          py::dict d;
          d["family"] = r.family;
          d["seeds"] = r.seeds;
          d["max_rel_error"] = r.max_rel_error;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seeds") = 20, py::arg("eps") = 1e-5, py::arg("tol") = 1e-4);

  m.def(
      "analyze",
      [](const std::string& data_dir, const std::string& out_dir, int n_peptides) {
        const auto a = pipeline::analyze(load(data_dir), n_peptides);
        if (!out_dir.empty()) pipeline::write_analysis(a, out_dir);
        py::dict d;
        d["columns"] = a.columns;
        d["correlation"] = a.correlation;
        py::list curves;
        for (const auto& c : a.curves) {
          py::dict cd;
          cd["peptide"] = c.peptide;
          cd["group"] = c.group;
          cd["n"] = c.samples;
          cd["grid"] = c.density.grid;
          cd["density"] = c.density.density;
          curves.append(cd);
        }
        d["curves"] = curves;
        return d;
      },
      py::arg("data_dir"), py::arg("out_dir") = "", py::arg("n_peptides") = 5);

  m.def(
      "train",
      [](const std::string& config_json) {
        const auto c = config_from(config_json);
        const auto data = pipeline::prepare(load(c.data_dir), c);
        auto o = pipeline::train_one(c, c.model, data);
        pipeline::write_outcome(c, o, data, c.out_dir);
        py::dict d;
        d["model"] = o.family;
        d["report"] = report_dict(o.report);
        d["baseline"] = report_dict(o.baseline);
        d["history"] = history_dict(o.result.history);
        d["parameters"] = o.summary.total;
        d["train_seconds"] = o.train_seconds;
        return d;
      },
      py::arg("config_json"), "Trains config.model on config.data_dir and writes outputs to config.out_dir.");

  m.def(
      "evaluate",
      [](const std::string& data_dir, const std::string& run_dir) {
        return report_dict(pipeline::evaluate_saved(load(data_dir), run_dir));
      },
      py::arg("data_dir"), py::arg("run_dir"));

  m.def(
      "benchmark",
      [](const std::string& config_json) {
        const auto c = config_from(config_json);
        const auto r = pipeline::run_benchmark(load(c.data_dir), c, c.out_dir);
        py::dict d;
        for (const auto& row : r.rows) {
          py::dict rd;
          rd["report"] = report_dict(row.report);
          rd["history"] = history_dict(row.history);
          rd["train_seconds"] = row.train_seconds;
          d[py::str(row.model)] = rd;
        }
        d["mean"] = report_dict(r.baseline);
        return d;
      },
      py::arg("config_json"), "Trains both families on one split; writes the comparison to config.out_dir.");
}
