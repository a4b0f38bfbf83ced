#pragma once

#include <memory>
#include <vector>

#include "pdprog/nncore.hpp"

namespace pdprog::kan {

struct BSplineConfig {
  int grid_size = 10;   // G
  int spline_order = 3; // k
  double grid_min = -3.0;
  double grid_max = 3.0;
};

/// Throws InvalidConfig.
void validate(const BSplineConfig& cfg);
int basis_count(const BSplineConfig& cfg);
/// t_j = grid_min + (j - k) h, j = 0 .. G + 2k.
double knot(const BSplineConfig& cfg, int j);

/// The k + 1 basis functions that can be nonzero at x: indices first .. first + k.
struct LocalBasis {
  int first = 0;
  std::vector<double> values;
  std::vector<double> derivatives;  // d/dx; zero when x lies outside the domain
};

/// x is clamped to the domain before evaluation.
LocalBasis local_basis(double x, const BSplineConfig& cfg);
/// Dense G + k vector of basis values.
std::vector<double> bspline_basis(double x, const BSplineConfig& cfg);

/// out_j = sum_i base[j][i] silu(x_i) + scaler[j][i] sum_c coef[j][i][c] B_c(x_i).
/// Parameters: "coef" ((out * in) x (G + k), row j * in + i), "base" and
/// "scaler" (out x in).
class KanLayer : public nn::Module {
 public:
  KanLayer(int in, int out, const BSplineConfig& cfg, nn::Rng& rng);
  nn::Matrix forward(const nn::Matrix& x) override;
  nn::Matrix backward(const nn::Matrix& dy) override;
  std::vector<nn::Parameter*> parameters() override { return {&coef_, &base_, &scaler_}; }
  std::string kind() const override { return "KAN"; }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  const BSplineConfig& config() const { return cfg_; }
  nn::Parameter& coef() { return coef_; }
  nn::Parameter& base() { return base_; }
  nn::Parameter& scaler() { return scaler_; }

 private:
  nn::Matrix effective_coef() const;  // out x (in * nb), scaler folded in

  int in_, out_, nb_;
  BSplineConfig cfg_;
  nn::Parameter coef_, base_, scaler_;
  nn::Matrix x_, phi_, dphi_, silu_x_;
};

/// Sum over KAN layers of in * out * (G + k + 2), plus the linear head.
std::size_t param_count(const std::vector<int>& widths, const BSplineConfig& cfg, int outputs = 4);

/// KAN layers between consecutive widths, each followed by dropout, then a
/// linear head widths.back() -> outputs. Stages: kan1, drop1, ..., head.
/// Throws InvalidWidths.
std::unique_ptr<nn::Sequential> build_kan(const std::vector<int>& widths, const BSplineConfig& cfg,
                                          std::uint64_t seed, double dropout = 0.2, int outputs = 4);

}  // namespace pdprog::kan
