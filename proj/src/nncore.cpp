#include "pdprog/nncore.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "pdprog/error.hpp"

namespace pdprog::nn {

namespace {

std::uint64_t splitmix(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

Parameter make_param(std::string name, Eigen::Index rows, Eigen::Index cols) {
  return {std::move(name), Matrix::Zero(rows, cols), Matrix::Zero(rows, cols)};
}

void require_cols(const Matrix& x, Eigen::Index cols, const std::string& who) {
  if (x.cols() != cols) {
    throw usage_error("ShapeMismatch", who + " expects " + std::to_string(cols) + " input columns, got " +
                                           std::to_string(x.cols()));
  }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  for (auto& s : s_) s = splitmix(seed);
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

void Module::zero_grad() {
  for (auto* p : parameters()) p->grad.setZero();
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

// ---------------------------------------------------------------------------

Matrix times_transpose(const Matrix& x, const Matrix& w) {
  Matrix y(x.rows(), w.rows());
  const auto wt = w.transpose();
  for (Eigen::Index r = 0; r < x.rows(); ++r) y.row(r).noalias() = x.row(r) * wt;
  return y;
}

Linear::Linear(int in, int out, Rng& rng) : w_(make_param("W", out, in)), b_(make_param("b", out, 1)) {
  if (in < 1 || out < 1) throw usage_error("InvalidConfig", "Linear widths must be positive");
  fill_uniform(w_.value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

Matrix Linear::forward(const Matrix& x) {
  require_cols(x, w_.value.cols(), "Linear");
  x_ = x;
  Matrix y = times_transpose(x, w_.value);
  y.rowwise() += b_.value.col(0).transpose();
  return y;
}

Matrix Linear::backward(const Matrix& dy) {
  w_.grad.noalias() += dy.transpose() * x_;
  b_.grad.col(0) += dy.colwise().sum().transpose();
  return dy * w_.value;
}

Matrix ReLU::forward(const Matrix& x) {
  x_ = x;
  return x.cwiseMax(0.0);
}

Matrix ReLU::backward(const Matrix& dy) { return (x_.array() > 0.0).select(dy, 0.0); }

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int features, double momentum, double eps)
    : gamma_(make_param("gamma", features, 1)),
      beta_(make_param("beta", features, 1)),
      running_mean_{"running_mean", Matrix::Zero(features, 1)},
      running_var_{"running_var", Matrix::Ones(features, 1)},
      momentum_(momentum),
      eps_(eps) {
  if (features < 1) throw usage_error("InvalidConfig", "BatchNorm needs at least one feature");
  gamma_.value.setOnes();
}

Matrix BatchNorm::forward(const Matrix& x) {
  require_cols(x, gamma_.value.rows(), "BatchNorm");
  const auto n = x.rows();
  cached_training_ = training_;
  Eigen::RowVectorXd mean, var;
  if (training_) {
    if (n < 2) throw data_error("BatchTooSmall", "batch normalization needs at least 2 rows in training mode");
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().mean();
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    running_mean_.value.col(0) = (1.0 - momentum_) * running_mean_.value.col(0) + momentum_ * mean.transpose();
    running_var_.value.col(0) = (1.0 - momentum_) * running_var_.value.col(0) + momentum_ * unbias * var.transpose();
  } else {
    mean = running_mean_.value.col(0).transpose();
    var = running_var_.value.col(0).transpose();
  }
  inv_std_ = (var.array() + eps_).rsqrt().matrix();
  xhat_ = (x.rowwise() - mean).array().rowwise() * inv_std_.array();
  Matrix y = xhat_.array().rowwise() * gamma_.value.col(0).transpose().array();
  y.rowwise() += beta_.value.col(0).transpose();
  return y;
}

Matrix BatchNorm::backward(const Matrix& dy) {
  gamma_.grad.col(0) += (dy.array() * xhat_.array()).colwise().sum().transpose().matrix();
  beta_.grad.col(0) += dy.colwise().sum().transpose();
  const Matrix dxhat = dy.array().rowwise() * gamma_.value.col(0).transpose().array();
  if (!cached_training_) return dxhat.array().rowwise() * inv_std_.array();
  const double n = static_cast<double>(dy.rows());
  const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * xhat_.array()).colwise().sum();
  Matrix dx = (n * dxhat.array()).rowwise() - sum_dxhat.array();
  dx -= (xhat_.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return (dx.array().rowwise() * (inv_std_.array() / n)).matrix();
}

// ---------------------------------------------------------------------------

Dropout::Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw usage_error("InvalidRate", "dropout rate must be in [0, 1)");
}

Matrix Dropout::forward(const Matrix& x) {
  if (!training_ || rate_ == 0.0) {
    scale_.resize(0, 0);
    return x;
  }
  const double keep = 1.0 - rate_;
  scale_.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < scale_.size(); ++i) scale_.data()[i] = rng_.uniform() < keep ? 1.0 / keep : 0.0;
  return x.cwiseProduct(scale_);
}

Matrix Dropout::backward(const Matrix& dy) { return scale_.size() == 0 ? dy : Matrix(dy.cwiseProduct(scale_)); }

// ---------------------------------------------------------------------------

Lstm::Lstm(int in, int hidden, bool bidirectional, Rng& rng)
    : in_(in), hidden_(hidden), bidirectional_(bidirectional) {
  if (in < 1 || hidden < 1) throw usage_error("InvalidConfig", "LSTM widths must be positive");
  const int n_dirs = bidirectional ? 2 : 1;
  dirs_.resize(static_cast<std::size_t>(n_dirs));
  for (int k = 0; k < n_dirs; ++k) {
    const std::string suffix = k == 0 ? "" : "_reverse";
    auto& d = dirs_[static_cast<std::size_t>(k)];
    d.w_ih = make_param("W_ih" + suffix, 4 * hidden, in);
    d.w_hh = make_param("W_hh" + suffix, 4 * hidden, hidden);
    d.b_ih = make_param("b_ih" + suffix, 4 * hidden, 1);
    d.b_hh = make_param("b_hh" + suffix, 4 * hidden, 1);
    fill_uniform(d.w_ih.value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    fill_uniform(d.w_hh.value, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    d.b_ih.value.block(hidden, 0, hidden, 1).setOnes();  // forget gate
  }
}

std::vector<Parameter*> Lstm::parameters() {
  std::vector<Parameter*> out;
  for (auto& d : dirs_) {
    out.push_back(&d.w_ih);
    out.push_back(&d.w_hh);
    out.push_back(&d.b_ih);
    out.push_back(&d.b_hh);
  }
  return out;
}

void Lstm::run(Direction& d, const Matrix& x, int steps, bool reverse) {
  const auto b = x.rows();
  const int h = hidden_;
  d.gates.assign(static_cast<std::size_t>(steps), Matrix());
  d.c.assign(static_cast<std::size_t>(steps) + 1, Matrix::Zero(b, h));
  d.h.assign(static_cast<std::size_t>(steps) + 1, Matrix::Zero(b, h));
  const Eigen::RowVectorXd bias = (d.b_ih.value + d.b_hh.value).col(0).transpose();
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    Matrix z = times_transpose(x.middleCols(static_cast<Eigen::Index>(t) * in_, in_), d.w_ih.value);
    z += times_transpose(d.h[s], d.w_hh.value);
    z.rowwise() += bias;
    Matrix a(b, 4 * h);
    a.leftCols(2 * h) = z.leftCols(2 * h).unaryExpr([](double v) { return sigmoid(v); });
    a.middleCols(2 * h, h) = z.middleCols(2 * h, h).array().tanh();
    a.rightCols(h) = z.rightCols(h).unaryExpr([](double v) { return sigmoid(v); });
    d.c[s + 1] = a.middleCols(h, h).cwiseProduct(d.c[s]) + a.leftCols(h).cwiseProduct(a.middleCols(2 * h, h));
    d.h[s + 1] = a.rightCols(h).cwiseProduct(Matrix(d.c[s + 1].array().tanh()));
    d.gates[s] = std::move(a);
  }
}

Matrix Lstm::forward(const Matrix& x) {
  if (x.cols() == 0 || x.cols() % in_ != 0) {
    throw usage_error("ShapeMismatch", "LSTM input width " + std::to_string(x.cols()) + " is not a multiple of " +
                                           std::to_string(in_));
  }
  x_ = x;
  const int steps = static_cast<int>(x.cols() / in_);
  const int out_w = output_width();
  Matrix y(x.rows(), static_cast<Eigen::Index>(steps) * out_w);
  for (std::size_t k = 0; k < dirs_.size(); ++k) {
    const bool reverse = k == 1;
    run(dirs_[k], x, steps, reverse);
    for (int s = 0; s < steps; ++s) {
      const int t = reverse ? steps - 1 - s : s;
      y.middleCols(static_cast<Eigen::Index>(t) * out_w + static_cast<Eigen::Index>(k) * hidden_, hidden_) =
          dirs_[k].h[s + 1];
    }
  }
  return y;
}

Matrix Lstm::unroll_back(Direction& d, const Matrix& x, const Matrix& dh_all, int steps, bool reverse, int offset) {
  const auto b = x.rows();
  const int h = hidden_;
  const int out_w = output_width();
  Matrix dx = Matrix::Zero(b, x.cols());
  Matrix dh_next = Matrix::Zero(b, h), dc_next = Matrix::Zero(b, h);
  for (int s = steps - 1; s >= 0; --s) {
    const int t = reverse ? steps - 1 - s : s;
    const Matrix& a = d.gates[s];
    const auto i = a.leftCols(h).array();
    const auto f = a.middleCols(h, h).array();
    const auto g = a.middleCols(2 * h, h).array();
    const auto o = a.rightCols(h).array();
    const Eigen::ArrayXXd tc = d.c[s + 1].array().tanh();
    const Eigen::ArrayXXd dh =
        dh_all.middleCols(static_cast<Eigen::Index>(t) * out_w + offset, h).array() + dh_next.array();
    const Eigen::ArrayXXd dc = dc_next.array() + dh * o * (1.0 - tc.square());
    Matrix dz(b, 4 * h);
    dz.leftCols(h) = (dc * g * i * (1.0 - i)).matrix();
    dz.middleCols(h, h) = (dc * d.c[s].array() * f * (1.0 - f)).matrix();
    dz.middleCols(2 * h, h) = (dc * i * (1.0 - g.square())).matrix();
    dz.rightCols(h) = (dh * tc * o * (1.0 - o)).matrix();
    const auto xt = x.middleCols(static_cast<Eigen::Index>(t) * in_, in_);
    d.w_ih.grad.noalias() += dz.transpose() * xt;
    d.w_hh.grad.noalias() += dz.transpose() * d.h[s];
    const Eigen::VectorXd db = dz.colwise().sum().transpose();
    d.b_ih.grad.col(0) += db;
    d.b_hh.grad.col(0) += db;
    dx.middleCols(static_cast<Eigen::Index>(t) * in_, in_).noalias() += dz * d.w_ih.value;
    dh_next = dz * d.w_hh.value;
    dc_next = (dc * f).matrix();
  }
  return dx;
}

Matrix Lstm::backward(const Matrix& dy) {
  const int steps = static_cast<int>(x_.cols() / in_);
  Matrix dx = Matrix::Zero(x_.rows(), x_.cols());
  for (std::size_t k = 0; k < dirs_.size(); ++k) {
    dx += unroll_back(dirs_[k], x_, dy, steps, k == 1, static_cast<int>(k) * hidden_);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Attention::Attention(int width, Rng& rng)
    : d_(width),
      w_(make_param("W", width, width)),
      b_w_(make_param("b_W", width, 1)),
      v_(make_param("v", width, 1)),
      b_v_(make_param("b_v", 1, 1)) {
  if (width < 1) throw usage_error("InvalidConfig", "attention width must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  fill_uniform(w_.value, bound, rng);
  fill_uniform(v_.value, bound, rng);
}

Matrix Attention::forward(const Matrix& x) {
  if (x.cols() == 0 || x.cols() % d_ != 0) {
    throw usage_error("ShapeMismatch", "attention input width " + std::to_string(x.cols()) +
                                           " is not a multiple of " + std::to_string(d_));
  }
  const auto b = x.rows();
  steps_ = static_cast<int>(x.cols() / d_);
  hs_.resize(b * steps_, d_);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (int t = 0; t < steps_; ++t) hs_.row(r * steps_ + t) = x.row(r).segment(static_cast<Eigen::Index>(t) * d_, d_);
  }
  Matrix z = times_transpose(hs_, w_.value);
  z.rowwise() += b_w_.value.col(0).transpose();
  u_ = z.array().tanh();
  const Eigen::VectorXd s = times_transpose(u_, v_.value.transpose()).col(0).array() + b_v_.value(0, 0);
  alpha_.resize(b, steps_);
  Matrix ctx = Matrix::Zero(b, d_);
  for (Eigen::Index r = 0; r < b; ++r) {
    const auto sr = s.segment(r * steps_, steps_);
    const Eigen::ArrayXd e = (sr.array() - sr.maxCoeff()).exp();
    alpha_.row(r) = (e / e.sum()).matrix().transpose();
    for (int t = 0; t < steps_; ++t) ctx.row(r) += alpha_(r, t) * hs_.row(r * steps_ + t);
  }
  return ctx;
}

Matrix Attention::backward(const Matrix& dy) {
  const auto b = dy.rows();
  Matrix dhs(b * steps_, d_);
  Eigen::VectorXd ds(b * steps_);
  for (Eigen::Index r = 0; r < b; ++r) {
    Eigen::VectorXd dalpha(steps_);
    for (int t = 0; t < steps_; ++t) {
      dalpha(t) = dy.row(r).dot(hs_.row(r * steps_ + t));
      dhs.row(r * steps_ + t) = alpha_(r, t) * dy.row(r);
    }
    const double mix = alpha_.row(r).dot(dalpha.transpose());
    for (int t = 0; t < steps_; ++t) ds(r * steps_ + t) = alpha_(r, t) * (dalpha(t) - mix);
  }
  v_.grad.col(0) += u_.transpose() * ds;
  b_v_.grad(0, 0) += ds.sum();
  const Matrix dz = ((ds * v_.value.col(0).transpose()).array() * (1.0 - u_.array().square())).matrix();
  w_.grad.noalias() += dz.transpose() * hs_;
  b_w_.grad.col(0) += dz.colwise().sum().transpose();
  dhs.noalias() += dz * w_.value;
  Matrix dx(b, static_cast<Eigen::Index>(steps_) * d_);
  for (Eigen::Index r = 0; r < b; ++r) {
    for (int t = 0; t < steps_; ++t) dx.row(r).segment(static_cast<Eigen::Index>(t) * d_, d_) = dhs.row(r * steps_ + t);
  }
  return dx;
}

// ---------------------------------------------------------------------------

Module& Sequential::add(const std::string& name, std::unique_ptr<Module> m) {
  for (auto* p : m->parameters()) p->name = name + "." + p->name;
  for (auto* b : m->buffers()) b->name = name + "." + b->name;
  m->set_training(training_);
  stages_.push_back({name, std::move(m)});
  return *stages_.back().module;
}

Matrix Sequential::forward(const Matrix& x) {
  Matrix h = x;
  for (auto& s : stages_) h = s.module->forward(h);
  return h;
}

Matrix Sequential::backward(const Matrix& dy) {
  Matrix g = dy;
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) g = it->module->backward(g);
  return g;
}

std::vector<Parameter*> Sequential::parameters() {
  std::vector<Parameter*> out;
  for (auto& s : stages_) {
    for (auto* p : s.module->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Buffer*> Sequential::buffers() {
  std::vector<Buffer*> out;
  for (auto& s : stages_) {
    for (auto* b : s.module->buffers()) out.push_back(b);
  }
  return out;
}

void Sequential::set_training(bool training) {
  training_ = training;
  for (auto& s : stages_) s.module->set_training(training);
}

// ---------------------------------------------------------------------------

LossResult mse_loss(const Matrix& pred, const Matrix& target, const MaskMatrix& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() || mask.rows() != pred.rows() ||
      mask.cols() != pred.cols()) {
    throw usage_error("ShapeMismatch", "prediction, target and mask shapes differ");
  }
  const auto n = mask.count();
  if (n == 0) throw data_error("EmptyMask", "no observed target cells");
  LossResult out;
  out.grad = Matrix::Zero(pred.rows(), pred.cols());
  double sum = 0.0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      if (!mask(r, c)) continue;
      const double e = pred(r, c) - target(r, c);
      sum += e * e;
      out.grad(r, c) = 2.0 * e / static_cast<double>(n);
    }
  }
  out.loss = sum / static_cast<double>(n);
  return out;
}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw usage_error("ShapeMismatch", "optimizer parameter list changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->grad.rows() != m_[k].rows() || params[k]->grad.cols() != m_[k].cols()) {
      throw usage_error("ShapeMismatch", "gradient shape differs for " + params[k]->name);
    }
  }
  double clip = 1.0;
  if (config_.clip_norm) {
    double sq = 0.0;
    for (auto* p : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > *config_.clip_norm) clip = *config_.clip_norm / norm;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (config_.weight_decay != 0.0) p.value -= config_.lr * config_.weight_decay * p.value;
    const Matrix g = clip * p.grad;
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.value.array() -= config_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.eps);
  }
}

// ---------------------------------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(Module& model, const Matrix& input, const Matrix& target, const MaskMatrix& mask,
                           double eps, double tolerance) {
  auto loss_at = [&](const Matrix& x) {
    const double l = mse_loss(model.forward(x), target, mask).loss;
    if (!std::isfinite(l)) throw numerical_error("NonFiniteLoss", "loss is not finite during gradient check");
    return l;
  };
  // Fourth-order central stencil at offsets +-eps, +-2 eps.
  auto derivative = [&](double& v, const Matrix& x) {
    const double saved = v;
    double f[4];
    const double offsets[4] = {-2.0, -1.0, 1.0, 2.0};
    for (int k = 0; k < 4; ++k) {
      v = saved + offsets[k] * eps;
      f[k] = loss_at(x);
    }
    v = saved;
    return (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * eps);
  };
  model.zero_grad();
  const auto res = mse_loss(model.forward(input), target, mask);
  if (!std::isfinite(res.loss)) throw numerical_error("NonFiniteLoss", "loss is not finite during gradient check");
  const Matrix dx = model.backward(res.grad);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (auto* p : model.parameters()) {
    const Matrix analytic = p->grad;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      worst = std::max(worst, relative_error(analytic.data()[i], derivative(p->value.data()[i], input)));
    }
    report.max_rel_error[p->name] = worst;
  }
  Matrix x = input;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    worst = std::max(worst, relative_error(dx.data()[i], derivative(x.data()[i], x)));
  }
  report.max_rel_error["input"] = worst;
  report.pass = true;
  for (const auto& [name, err] : report.max_rel_error) report.pass = report.pass && err < tolerance;
  return report;
}

// ---------------------------------------------------------------------------

std::vector<NamedTensor> state_of(Module& m) {
  std::vector<NamedTensor> out;
  for (auto* p : m.parameters()) out.push_back({p->name, p->value});
  for (auto* b : m.buffers()) out.push_back({b->name, b->value});
  return out;
}

void load_state(Module& m, const std::vector<NamedTensor>& state) {
  std::map<std::string, const Matrix*> by_name;
  for (const auto& t : state) by_name[t.name] = &t.value;
  auto copy = [&](const std::string& name, Matrix& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw data_error("BadCheckpoint", "missing tensor '" + name + "'");
    if (it->second->rows() != dst.rows() || it->second->cols() != dst.cols()) {
      throw data_error("BadCheckpoint", "shape mismatch for '" + name + "'");
    }
    dst = *it->second;
  };
  for (auto* p : m.parameters()) copy(p->name, p->value);
  for (auto* b : m.buffers()) copy(b->name, b->value);
}

namespace {

constexpr char kMagic[8] = {'P', 'D', 'P', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint64_t u(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw data_error("BadCheckpoint", "checkpoint is truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::string encode_header(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, tensors.size());
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u64(out, static_cast<std::uint64_t>(t.value.rows()));
    put_u64(out, static_cast<std::uint64_t>(t.value.cols()));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string out = encode_header(tensors);
  for (const auto& t : tensors) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put_u64(out, std::bit_cast<std::uint64_t>(t.value(r, c)));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw io_error("failed writing " + path);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read " + path);
  Reader rd(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
  if (rd.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw data_error("BadCheckpoint", path + " is not a checkpoint file");
  }
  const auto n = rd.u(8);
  std::vector<NamedTensor> out;
  for (std::uint64_t k = 0; k < n; ++k) {
    NamedTensor t;
    t.name = rd.str(static_cast<std::size_t>(rd.u(4)));
    const auto rows = static_cast<Eigen::Index>(rd.u(8));
    const auto cols = static_cast<Eigen::Index>(rd.u(8));
    t.value.resize(rows, cols);
    out.push_back(std::move(t));
  }
  for (auto& t : out) {
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) t.value(r, c) = std::bit_cast<double>(rd.u(8));
    }
  }
  if (!rd.done()) throw data_error("BadCheckpoint", path + " has trailing bytes");
  return out;
}

std::string checkpoint_manifest(const std::vector<NamedTensor>& tensors, const std::string& meta_json) {
  using nlohmann::json;
  json j;
  j["format"] = "pdprog-checkpoint";
  j["version"] = 1;
  j["byte_order"] = "little";
  j["dtype"] = "float64";
  j["layout"] = "row-major";
  std::uint64_t offset = encode_header(tensors).size();
  j["header_bytes"] = offset;
  json list = json::array();
  std::uint64_t total = 0;
  for (const auto& t : tensors) {
    const auto count = static_cast<std::uint64_t>(t.value.size());
    list.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}, {"offset", offset}, {"count", count}});
    offset += 8 * count;
    total += count;
  }
  j["tensors"] = list;
  j["total_values"] = total;
  j["model"] = json::parse(meta_json);
  return j.dump(2);
}

}  // namespace pdprog::nn
