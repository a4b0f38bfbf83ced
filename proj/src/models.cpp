#include "pdprog/models.hpp"

#include <algorithm>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "pdprog/error.hpp"

namespace pdprog::models {

const Eigen::MatrixXd& Model::inputs_of(const SupervisedSet& set) const {
  if (layout == InputLayout::kFlat) {
    if (set.inputs.cols() != input_width) {
      throw usage_error("ShapeMismatch", family + " model expects " + std::to_string(input_width) +
                                             " flat inputs, data has " + std::to_string(set.inputs.cols()));
    }
    return set.inputs;
  }
  if (set.step_width != input_width) {
    throw usage_error("ShapeMismatch", family + " model expects step width " + std::to_string(input_width) +
                                           ", data has " + std::to_string(set.step_width));
  }
  return set.sequences;
}

nn::Matrix Model::predict(const nn::Matrix& x) {
  net->set_training(false);
  return net->forward(x);
}

Model build_lstm_forecaster(const LstmForecasterConfig& c, std::uint64_t seed) {
  if (c.input_width < 1 || c.hidden < 1) throw usage_error("InvalidConfig", "LSTM widths must be positive");
  const int dirs = c.bidirectional ? 2 : 1;
  if (c.attention_width != c.hidden * dirs) {
    throw usage_error("InvalidConfig", "attention width must equal hidden * directions (" +
                                           std::to_string(c.hidden * dirs) + ")");
  }
  if (c.head_widths.empty()) throw usage_error("InvalidConfig", "at least one head width is required");
  if (std::any_of(c.head_widths.begin(), c.head_widths.end(), [](int w) { return w < 1; })) {
    throw usage_error("InvalidConfig", "head widths must be positive");
  }
  if (c.output != 4) throw usage_error("InvalidConfig", "output must be 4");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw usage_error("InvalidConfig", "dropout must lie in [0, 1)");

  nn::Rng rng(seed);
  auto net = std::make_unique<nn::Sequential>();
  net->add("lstm", std::make_unique<nn::Lstm>(c.input_width, c.hidden, c.bidirectional, rng));
  net->add("dropout", std::make_unique<nn::Dropout>(c.dropout, rng.next()));
  net->add("attention", std::make_unique<nn::Attention>(c.attention_width, rng));
  int prev = c.attention_width;
  for (std::size_t i = 0; i < c.head_widths.size(); ++i) {
    const auto tag = std::to_string(i + 1);
    net->add("fc" + tag, std::make_unique<nn::Linear>(prev, c.head_widths[i], rng));
    // BatchNorm follows every head layer except the first.
    if (i > 0) net->add("bn" + tag, std::make_unique<nn::BatchNorm>(c.head_widths[i]));
    net->add("relu" + tag, std::make_unique<nn::ReLU>());
    prev = c.head_widths[i];
  }
  net->add("out", std::make_unique<nn::Linear>(prev, c.output, rng));

  nlohmann::ordered_json j;
  j["family"] = "lstm";
  j["input_width"] = c.input_width;
  j["hidden"] = c.hidden;
  j["bidirectional"] = c.bidirectional;
  j["attention_width"] = c.attention_width;
  j["head_widths"] = c.head_widths;
  j["output"] = c.output;
  j["dropout"] = c.dropout;
  j["seed"] = seed;
  return Model{"lstm", InputLayout::kSequence, c.input_width, std::move(net), j.dump()};
}

Model build_kan_forecaster(const KanForecasterConfig& c, std::uint64_t seed) {
  if (c.output != 4) throw usage_error("InvalidConfig", "output must be 4");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw usage_error("InvalidConfig", "dropout must lie in [0, 1)");
  kan::BSplineConfig spline;
  spline.grid_size = c.grid_size;
  spline.spline_order = c.spline_order;
  std::unique_ptr<nn::Sequential> net;
  try {
    net = kan::build_kan(c.widths, spline, seed, c.dropout, c.output);
  } catch (const Error& e) {
    throw usage_error("InvalidConfig", e.what());
  }
  nlohmann::ordered_json j;
  j["family"] = "kan";
  j["widths"] = c.widths;
  j["grid_size"] = c.grid_size;
  j["spline_order"] = c.spline_order;
  j["grid_min"] = spline.grid_min;
  j["grid_max"] = spline.grid_max;
  j["output"] = c.output;
  j["dropout"] = c.dropout;
  j["seed"] = seed;
  return Model{"kan", InputLayout::kFlat, c.widths.front(), std::move(net), j.dump()};
}

namespace {

int stage_width(nn::Module& m, int prev) {
  if (auto* l = dynamic_cast<nn::Linear*>(&m)) return static_cast<int>(l->weight().value.rows());
  if (auto* k = dynamic_cast<kan::KanLayer*>(&m)) return k->out_dim();
  if (auto* r = dynamic_cast<nn::Lstm*>(&m)) return r->output_width();
  if (auto* a = dynamic_cast<nn::Attention*>(&m)) return a->width();
  if (auto* b = dynamic_cast<nn::BatchNorm*>(&m)) return static_cast<int>(b->gamma().value.rows());
  if (auto* s = dynamic_cast<nn::Sequential*>(&m)) {
    for (const auto& st : s->stages()) prev = stage_width(*st.module, prev);
  }
  return prev;
}

}  // namespace

Summary summarize(nn::Sequential& net, int input_width) {
  Summary s;
  int width = input_width;
  for (const auto& st : net.stages()) {
    width = stage_width(*st.module, width);
    const std::size_t n = st.module->parameter_count();
    s.rows.push_back({st.name, st.module->kind(), width, n});
    s.total += n;
  }
  return s;
}

Summary summarize(Model& model) { return summarize(*model.net, model.input_width); }

std::string summary_text(const Summary& s) {
  std::size_t name_w = 5, kind_w = 4;
  for (const auto& r : s.rows) {
    name_w = std::max(name_w, r.stage.size());
    kind_w = std::max(kind_w, r.kind.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "stage" << std::setw(static_cast<int>(kind_w) + 2)
     << "kind" << std::right << std::setw(7) << "width" << std::setw(12) << "params" << '\n';
  for (const auto& r : s.rows) {
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.stage << std::setw(static_cast<int>(kind_w) + 2)
       << r.kind << std::right << std::setw(7) << r.width << std::setw(12) << r.params << '\n';
  }
  os << std::left << std::setw(static_cast<int>(name_w + kind_w) + 4) << "Total" << std::right << std::setw(7) << ""
     << std::setw(12) << s.total << '\n';
  return os.str();
}

std::string summary_csv(const Summary& s) {
  std::ostringstream os;
  os << "stage,kind,width,params\n";
  for (const auto& r : s.rows) os << r.stage << ',' << r.kind << ',' << r.width << ',' << r.params << '\n';
  os << "Total,,," << s.total << '\n';
  return os.str();
}

}  // namespace pdprog::models
