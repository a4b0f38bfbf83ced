#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pdprog/features.hpp"
#include "pdprog/kan.hpp"
#include "pdprog/nncore.hpp"

namespace pdprog::models {

/// Which view of a SupervisedSet the network consumes.
enum class InputLayout { kFlat, kSequence };

struct LstmForecasterConfig {
  int input_width = 23;  // per time step
  int hidden = 64;
  bool bidirectional = true;
  int attention_width = 128;
  std::vector<int> head_widths{64, 32, 16};
  int output = 4;
  double dropout = 0.2;
};

struct KanForecasterConfig {
  std::vector<int> widths{27, 45, 91, 183};
  int grid_size = 10;
  int spline_order = 3;
  int output = 4;
  double dropout = 0.2;
};

/// A built forecaster: the network plus what is needed to feed it.
struct Model {
  std::string family;  // "lstm" or "kan"
  InputLayout layout = InputLayout::kFlat;
  /// Flat width, or per-step width for the sequence layout.
  int input_width = 0;
  std::unique_ptr<nn::Sequential> net;
  /// Build configuration as a JSON object (for manifests and config echoes).
  std::string config_json;

  /// The matrix of `set` matching this model's layout. Throws ShapeMismatch.
  const Eigen::MatrixXd& inputs_of(const SupervisedSet& set) const;
  /// Eval-mode forward.
  nn::Matrix predict(const nn::Matrix& x);
};

/// (bi)LSTM -> dropout -> attention -> FC -> ReLU -> [FC -> BatchNorm -> ReLU]... -> FC.
/// Throws InvalidConfig.
Model build_lstm_forecaster(const LstmForecasterConfig& config, std::uint64_t seed);
/// Throws InvalidConfig.
Model build_kan_forecaster(const KanForecasterConfig& config, std::uint64_t seed);

struct SummaryRow {
  std::string stage;
  std::string kind;
  int width = 0;  // output width of the stage
  std::size_t params = 0;
};

struct Summary {
  std::vector<SummaryRow> rows;
  std::size_t total = 0;
};

/// One row per stage. `input_width` seeds the width column for leading
/// parameterless stages.
Summary summarize(nn::Sequential& net, int input_width);
Summary summarize(Model& model);
std::string summary_text(const Summary& s);
/// Header `stage,kind,width,params`, closing row `Total,,,<total>`.
std::string summary_csv(const Summary& s);

}  // namespace pdprog::models
