#include "pdprog/kan.hpp"

#include <algorithm>
#include <cmath>

#include "pdprog/error.hpp"

namespace pdprog::kan {

void validate(const BSplineConfig& cfg) {
  if (cfg.grid_size < 1) throw usage_error("InvalidConfig", "grid size must be at least 1");
  if (cfg.spline_order < 0) throw usage_error("InvalidConfig", "spline order must be non-negative");
  if (!(cfg.grid_min < cfg.grid_max)) throw usage_error("InvalidConfig", "grid_min must be below grid_max");
}

int basis_count(const BSplineConfig& cfg) { return cfg.grid_size + cfg.spline_order; }

double knot(const BSplineConfig& cfg, int j) {
  const double h = (cfg.grid_max - cfg.grid_min) / cfg.grid_size;
  return cfg.grid_min + (j - cfg.spline_order) * h;
}

LocalBasis local_basis(double x, const BSplineConfig& cfg) {
  const int k = cfg.spline_order;
  const double h = (cfg.grid_max - cfg.grid_min) / cfg.grid_size;
  const bool inside = x >= cfg.grid_min && x <= cfg.grid_max;
  const double xc = std::clamp(x, cfg.grid_min, cfg.grid_max);
  const int s = std::clamp(static_cast<int>(std::floor((xc - cfg.grid_min) / h)), 0, cfg.grid_size - 1);
  const int span = s + k;

  LocalBasis out;
  out.first = s;
  std::vector<double> n(static_cast<std::size_t>(k) + 1, 0.0), left(n.size(), 0.0), right(n.size(), 0.0);
  std::vector<double> lower;  // degree k - 1 values, indices s + 1 .. s + k
  n[0] = 1.0;
  for (int d = 1; d <= k; ++d) {
    if (d == k) lower.assign(n.begin(), n.begin() + k);
    left[d] = xc - knot(cfg, span + 1 - d);
    right[d] = knot(cfg, span + d) - xc;
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double temp = n[r] / (right[r + 1] + left[d - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[d - r] * temp;
    }
    n[d] = saved;
  }
  out.values = n;
  out.derivatives.assign(n.size(), 0.0);
  if (k > 0 && inside) {
    for (int r = 0; r <= k; ++r) {
      const double a = r >= 1 ? lower[r - 1] : 0.0;
      const double b = r <= k - 1 ? lower[r] : 0.0;
      out.derivatives[r] = (a - b) / h;
    }
  }
  return out;
}

std::vector<double> bspline_basis(double x, const BSplineConfig& cfg) {
  validate(cfg);
  std::vector<double> out(static_cast<std::size_t>(basis_count(cfg)), 0.0);
  const auto lb = local_basis(x, cfg);
  for (std::size_t r = 0; r < lb.values.size(); ++r) out[static_cast<std::size_t>(lb.first) + r] = lb.values[r];
  return out;
}

// ---------------------------------------------------------------------------

KanLayer::KanLayer(int in, int out, const BSplineConfig& cfg, nn::Rng& rng)
    : in_(in), out_(out), nb_(basis_count(cfg)), cfg_(cfg) {
  validate(cfg);
  if (in < 1 || out < 1) throw usage_error("InvalidWidths", "KAN layer widths must be positive");
  coef_ = {"coef", nn::Matrix::Zero(static_cast<Eigen::Index>(out) * in, nb_),
           nn::Matrix::Zero(static_cast<Eigen::Index>(out) * in, nb_)};
  base_ = {"base", nn::Matrix::Zero(out, in), nn::Matrix::Zero(out, in)};
  scaler_ = {"scaler", nn::Matrix::Ones(out, in), nn::Matrix::Zero(out, in)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < base_.value.size(); ++i) base_.value.data()[i] = rng.uniform(-bound, bound);
  const double sd = 0.1 / std::sqrt(static_cast<double>(nb_));
  for (Eigen::Index i = 0; i < coef_.value.size(); ++i) coef_.value.data()[i] = sd * rng.normal();
}

nn::Matrix KanLayer::effective_coef() const {
  nn::Matrix c(out_, static_cast<Eigen::Index>(in_) * nb_);
  for (int j = 0; j < out_; ++j) {
    for (int i = 0; i < in_; ++i) {
      c.row(j).segment(static_cast<Eigen::Index>(i) * nb_, nb_) =
          scaler_.value(j, i) * coef_.value.row(static_cast<Eigen::Index>(j) * in_ + i);
    }
  }
  return c;
}

nn::Matrix KanLayer::forward(const nn::Matrix& x) {
  if (x.cols() != in_) {
    throw usage_error("ShapeMismatch",
                      "KAN layer expects " + std::to_string(in_) + " inputs, got " + std::to_string(x.cols()));
  }
  const auto b = x.rows();
  x_ = x;
  phi_ = nn::Matrix::Zero(b, static_cast<Eigen::Index>(in_) * nb_);
  dphi_ = nn::Matrix::Zero(b, phi_.cols());
  silu_x_.resize(b, in_);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (int i = 0; i < in_; ++i) {
      silu_x_(r, i) = nn::silu(x(r, i));
      const auto lb = local_basis(x(r, i), cfg_);
      const Eigen::Index col0 = static_cast<Eigen::Index>(i) * nb_ + lb.first;
      for (std::size_t q = 0; q < lb.values.size(); ++q) {
        phi_(r, col0 + static_cast<Eigen::Index>(q)) = lb.values[q];
        dphi_(r, col0 + static_cast<Eigen::Index>(q)) = lb.derivatives[q];
      }
    }
  }
  nn::Matrix y = nn::times_transpose(silu_x_, base_.value);
  y += nn::times_transpose(phi_, effective_coef());
  return y;
}

nn::Matrix KanLayer::backward(const nn::Matrix& dy) {
  base_.grad.noalias() += dy.transpose() * silu_x_;
  const nn::Matrix dc = dy.transpose() * phi_;  // out x (in * nb)
  for (int j = 0; j < out_; ++j) {
    for (int i = 0; i < in_; ++i) {
      const auto seg = dc.row(j).segment(static_cast<Eigen::Index>(i) * nb_, nb_);
      const Eigen::Index row = static_cast<Eigen::Index>(j) * in_ + i;
      coef_.grad.row(row) += scaler_.value(j, i) * seg;
      scaler_.grad(j, i) += seg.dot(coef_.value.row(row));
    }
  }
  const nn::Matrix through_spline = (dy * effective_coef()).cwiseProduct(dphi_);
  nn::Matrix dx = (dy * base_.value).cwiseProduct(x_.unaryExpr([](double v) { return nn::silu_grad(v); }));
  for (int i = 0; i < in_; ++i) dx.col(i) += through_spline.middleCols(static_cast<Eigen::Index>(i) * nb_, nb_).rowwise().sum();
  return dx;
}

// ---------------------------------------------------------------------------

std::size_t param_count(const std::vector<int>& widths, const BSplineConfig& cfg, int outputs) {
  if (widths.empty()) throw usage_error("InvalidWidths", "at least one width is required");
  const auto per_edge = static_cast<std::size_t>(basis_count(cfg) + 2);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += static_cast<std::size_t>(widths[l]) * static_cast<std::size_t>(widths[l + 1]) * per_edge;
  }
  return n + static_cast<std::size_t>(widths.back()) * static_cast<std::size_t>(outputs) +
         static_cast<std::size_t>(outputs);
}

std::unique_ptr<nn::Sequential> build_kan(const std::vector<int>& widths, const BSplineConfig& cfg,
                                          std::uint64_t seed, double dropout, int outputs) {
  if (widths.size() < 2) throw usage_error("InvalidWidths", "a KAN needs at least two widths");
  for (int w : widths) {
    if (w < 1) throw usage_error("InvalidWidths", "widths must be positive");
  }
  if (outputs < 1) throw usage_error("InvalidWidths", "output count must be positive");
  validate(cfg);
  nn::Rng rng(seed);
  auto net = std::make_unique<nn::Sequential>();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto tag = std::to_string(l + 1);
    net->add("kan" + tag, std::make_unique<KanLayer>(widths[l], widths[l + 1], cfg, rng));
    net->add("drop" + tag, std::make_unique<nn::Dropout>(dropout, rng.next()));
  }
  net->add("head", std::make_unique<nn::Linear>(widths.back(), outputs, rng));
  return net;
}

}  // namespace pdprog::kan
