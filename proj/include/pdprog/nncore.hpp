#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pdprog/feature_matrix.hpp"

namespace pdprog::nn {

using Matrix = Eigen::MatrixXd;

/// SplitMix-seeded xoshiro256** generator with portable real/normal draws,
/// so initial weights do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller).
  double normal();

 private:
  std::uint64_t s_[4];
  std::optional<double> spare_;
};

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Non-trainable state saved alongside parameters (e.g. running statistics).
struct Buffer {
  std::string name;
  Matrix value;
};

/// Layer contract: forward caches what backward needs; backward accumulates
/// parameter gradients and returns the gradient w.r.t. the forward input.
/// Inputs are batch-major (one row per sample). Sequence inputs pack T steps of
/// width w side by side, giving B x (T * w).
class Module {
 public:
  virtual ~Module() = default;
  virtual Matrix forward(const Matrix& x) = 0;
  virtual Matrix backward(const Matrix& dy) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::vector<Buffer*> buffers() { return {}; }
  virtual void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  virtual std::string kind() const = 0;

  void zero_grad();
  std::size_t parameter_count();

 protected:
  bool training_ = true;
};

/// out = x W^T + b. W is out x in, b is out x 1.
class Linear : public Module {
 public:
  Linear(int in, int out, Rng& rng);
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::vector<Parameter*> parameters() override { return {&w_, &b_}; }
  std::string kind() const override { return "Linear"; }
  Parameter& weight() { return w_; }
  Parameter& bias() { return b_; }

 private:
  Parameter w_, b_;
  Matrix x_;
};

class ReLU : public Module {
 public:
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::string kind() const override { return "ReLU"; }
  /// Input of the last forward pass.
  const Matrix& last_input() const { return x_; }

 private:
  Matrix x_;
};

/// x * w^T computed one row at a time, so equal rows of x give bit-equal rows
/// regardless of batch size or position.
Matrix times_transpose(const Matrix& x, const Matrix& w);

double silu(double x);
double silu_grad(double x);

/// Per-feature normalization. Training mode uses batch statistics (biased
/// variance) and updates running stats with momentum 0.1 (unbiased variance);
/// eval mode uses the running stats.
class BatchNorm : public Module {
 public:
  explicit BatchNorm(int features, double momentum = 0.1, double eps = 1e-5);
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Buffer*> buffers() override { return {&running_mean_, &running_var_}; }
  std::string kind() const override { return "BatchNorm"; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  /// 1 / sqrt(var + eps) per feature from the last forward pass.
  const Eigen::RowVectorXd& last_inv_std() const { return inv_std_; }

 private:
  Parameter gamma_, beta_;
  Buffer running_mean_, running_var_;
  double momentum_, eps_;
  Matrix xhat_;
  Eigen::RowVectorXd inv_std_;
  bool cached_training_ = false;
};

/// Inverted dropout. Each training-mode forward draws a fresh mask from the
/// layer's own generator; eval mode is the identity.
class Dropout : public Module {
 public:
  Dropout(double rate, std::uint64_t seed);
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::string kind() const override { return "Dropout"; }
  double rate() const { return rate_; }

 private:
  double rate_;
  Rng rng_;
  Matrix scale_;  // 0 or 1/keep per element; empty when inactive
};

/// Single-layer LSTM over B x (T * in) input, gate order i, f, g, o.
/// Output is B x (T * H * directions); the reverse direction's state at step t
/// sits right after the forward direction's.
class Lstm : public Module {
 public:
  Lstm(int in, int hidden, bool bidirectional, Rng& rng);
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::vector<Parameter*> parameters() override;
  std::string kind() const override { return bidirectional_ ? "BiLSTM" : "LSTM"; }
  int input_width() const { return in_; }
  int output_width() const { return hidden_ * (bidirectional_ ? 2 : 1); }

  struct Direction {
    Parameter w_ih, w_hh, b_ih, b_hh;
    // Per-step caches.
    std::vector<Matrix> gates;  // activated i, f, g, o, B x 4H
    std::vector<Matrix> c, h;   // B x H, index t + 1 (index 0 is the zero state)
  };

 private:
  void run(Direction& d, const Matrix& x, int steps, bool reverse);
  Matrix unroll_back(Direction& d, const Matrix& x, const Matrix& dh_all, int steps, bool reverse, int offset);

  int in_, hidden_;
  bool bidirectional_;
  std::vector<Direction> dirs_;
  Matrix x_;
};

/// Additive attention pooling over time: s_t = v . tanh(W h_t + b_W) + b_v,
/// alpha = softmax(s), context = sum_t alpha_t h_t. Input B x (T * d), output B x d.
class Attention : public Module {
 public:
  Attention(int width, Rng& rng);
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::vector<Parameter*> parameters() override { return {&w_, &b_w_, &v_, &b_v_}; }
  std::string kind() const override { return "Attention"; }
  int width() const { return d_; }
  /// Attention weights of the last forward pass, B x T.
  const Matrix& weights() const { return alpha_; }

 private:
  int d_;
  Parameter w_, b_w_, v_, b_v_;
  Matrix hs_, u_, alpha_;  // hs_: (B*T) x d, rows sample-major
  int steps_ = 0;
};

/// Ordered container; child parameter and buffer names get a "<stage>." prefix.
class Sequential : public Module {
 public:
  Module& add(const std::string& name, std::unique_ptr<Module> m);
  Matrix forward(const Matrix& x) override;
  Matrix backward(const Matrix& dy) override;
  std::vector<Parameter*> parameters() override;
  std::vector<Buffer*> buffers() override;
  void set_training(bool training) override;
  std::string kind() const override { return "Sequential"; }

  struct Stage {
    std::string name;
    std::unique_ptr<Module> module;
  };
  const std::vector<Stage>& stages() const { return stages_; }

 private:
  std::vector<Stage> stages_;
};

// ---------------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

/// Mean squared error over observed cells. Throws EmptyMask, ShapeMismatch.
LossResult mse_loss(const Matrix& pred, const Matrix& target, const MaskMatrix& mask);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; off when unset.
  std::optional<double> clip_norm;
};

/// Adam with decoupled weight decay applied before the moment update.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(const std::vector<Parameter*>& params);
  long long t() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------------------

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

struct GradCheckReport {
  std::map<std::string, double> max_rel_error;  // per parameter, plus "input"
  double tolerance = 1e-4;
  bool pass = false;
};

/// Compares backward() against fourth-order central differences (step eps) of the masked MSE loss for
/// every scalar parameter and every input entry. Throws NonFiniteLoss.
GradCheckReport grad_check(Module& model, const Matrix& input, const Matrix& target, const MaskMatrix& mask,
                           double eps = 1e-5, double tolerance = 1e-4);

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedTensor {
  std::string name;
  Matrix value;
  bool operator==(const NamedTensor& o) const { return name == o.name && value == o.value; }
};

/// Parameters followed by buffers, in declaration order.
std::vector<NamedTensor> state_of(Module& m);
/// Copies values by name; throws BadCheckpoint on missing names or shape mismatch.
void load_state(Module& m, const std::vector<NamedTensor>& state);

/// Binary layout: "PDPCKPT1", u64 tensor count, then per tensor u32 name length,
/// name bytes, u64 rows, u64 cols; then every tensor's row-major float64 data.
/// All integers and reals little-endian.
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/// JSON description of a checkpoint's layout with byte offsets. `meta_json`
/// must be a JSON object; it is embedded under "model".
std::string checkpoint_manifest(const std::vector<NamedTensor>& tensors, const std::string& meta_json = "{}");

}  // namespace pdprog::nn
