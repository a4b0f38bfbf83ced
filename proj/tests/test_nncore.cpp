#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "pdprog/error.hpp"
#include "pdprog/nncore.hpp"
#include "test_util.hpp"

using namespace pdprog;
using namespace pdprog::nn;
using pdprog::testing::TempDir;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

MaskMatrix full_mask(Eigen::Index r, Eigen::Index c) { return MaskMatrix::Constant(r, c, true); }

// Loss L = sum(R .* f(x)) for a fixed random R; dL/df = R.
double probe_loss(Module& m, const Matrix& x, const Matrix& r) { return (m.forward(x).array() * r.array()).sum(); }

// Worst relative error over every parameter entry and input entry.
double fd_worst(Module& m, const Matrix& x, Rng& rng, double eps = 1e-5) {
  const Matrix y = m.forward(x);
  const Matrix r = random_matrix(y.rows(), y.cols(), rng);
  m.zero_grad();
  m.forward(x);
  const Matrix dx = m.backward(r);
  double worst = 0.0;
  for (auto* p : m.parameters()) {
    const Matrix g = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double s = p->value.data()[i];
      p->value.data()[i] = s + eps;
      const double up = probe_loss(m, x, r);
      p->value.data()[i] = s - eps;
      const double dn = probe_loss(m, x, r);
      p->value.data()[i] = s;
      const double num = (up - dn) / (2 * eps);
      worst = std::max(worst, std::abs(g.data()[i] - num) / std::max({std::abs(g.data()[i]), std::abs(num), 1e-6}));
    }
  }
  Matrix xx = x;
  for (Eigen::Index i = 0; i < xx.size(); ++i) {
    const double s = xx.data()[i];
    xx.data()[i] = s + eps;
    const double up = probe_loss(m, xx, r);
    xx.data()[i] = s - eps;
    const double dn = probe_loss(m, xx, r);
    xx.data()[i] = s;
    const double num = (up - dn) / (2 * eps);
    worst = std::max(worst, std::abs(dx.data()[i] - num) / std::max({std::abs(dx.data()[i]), std::abs(num), 1e-6}));
  }
  return worst;
}

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

// ---------------------------------------------------------------------------

TEST(Rng, DeterministicAndWellSpread) {
  Rng a(3), b(3), c(4);
  EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(a.next(), c.next());
  Rng r(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(LinearLayer, IdentityWeights) {
  Rng rng(1);
  Linear lin(3, 3, rng);
  lin.weight().value = Matrix::Identity(3, 3);
  lin.bias().value.setZero();
  const Matrix x = random_matrix(5, 3, rng);
  EXPECT_EQ(lin.forward(x), x);
}

TEST(LinearLayer, BiasGradientOfSumIsOnes) {
  Rng rng(2);
  Linear lin(4, 3, rng);
  lin.zero_grad();
  const Matrix x = random_matrix(1, 4, rng);
  lin.forward(x);
  lin.backward(Matrix::Ones(1, 3));
  EXPECT_EQ(lin.bias().grad, Matrix::Ones(3, 1));
}

TEST(LinearLayer, FiniteDifference) {
  Rng rng(3);
  Linear lin(4, 3, rng);
  EXPECT_LT(fd_worst(lin, random_matrix(6, 4, rng), rng), 1e-6);
  EXPECT_EQ(lin.parameter_count(), 15u);
}

TEST(LinearLayer, InitBound) {
  Rng rng(4);
  Linear lin(25, 40, rng);
  EXPECT_LE(lin.weight().value.cwiseAbs().maxCoeff(), 0.2);
  EXPECT_GT(lin.weight().value.cwiseAbs().maxCoeff(), 0.15);
  EXPECT_EQ(lin.bias().value, Matrix::Zero(40, 1));
  EXPECT_THROW(lin.forward(Matrix::Zero(2, 24)), Error);
}

TEST(ReluLayer, FiniteDifferenceAwayFromKink) {
  Rng rng(5);
  ReLU relu;
  Matrix x = random_matrix(4, 6, rng);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (std::abs(x.data()[i]) < 0.1) x.data()[i] = 0.5;
  }
  EXPECT_LT(fd_worst(relu, x, rng), 1e-8);
}

TEST(Silu, GradientMatchesDifference) {
  for (double x = -6; x <= 6; x += 0.37) {
    EXPECT_NEAR(silu_grad(x), (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6, 1e-8);
  }
  EXPECT_EQ(silu(0.0), 0.0);
}

// ---------------------------------------------------------------------------

TEST(BatchNormLayer, ParameterCount) {
  BatchNorm bn(32);
  EXPECT_EQ(bn.parameter_count(), 64u);
}

TEST(BatchNormLayer, TrainingNormalizes) {
  Rng rng(6);
  BatchNorm bn(5);
  Matrix x = random_matrix(40, 5, rng, 3.0);
  x.array() += 7.0;
  const Matrix y = bn.forward(x);
  for (int c = 0; c < 5; ++c) {
    const double mu = y.col(c).mean();
    EXPECT_NEAR(mu, 0.0, 1e-9);
    EXPECT_NEAR((y.col(c).array() - mu).square().mean(), 1.0, 1e-3);  // eps = 1e-5 shrinks it slightly
  }
}

TEST(BatchNormLayer, VarianceUnitWithoutEpsilon) {
  Rng rng(6);
  BatchNorm bn(3, 0.1, 0.0);
  const Matrix y = bn.forward(random_matrix(30, 3, rng, 2.0));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR((y.col(c).array() - y.col(c).mean()).square().mean(), 1.0, 1e-6);
}

TEST(BatchNormLayer, RunningStatsAndEvalMode) {
  Rng rng(7);
  BatchNorm bn(2);
  const Matrix x = random_matrix(10, 2, rng);
  bn.forward(x);
  const auto mean = x.colwise().mean();
  const Eigen::RowVectorXd unbiased = (x.rowwise() - mean).array().square().colwise().sum() / 9.0;
  auto bufs = bn.buffers();
  EXPECT_NEAR(bufs[0]->value(0, 0), 0.1 * mean(0), 1e-15);
  EXPECT_NEAR(bufs[1]->value(1, 0), 0.9 + 0.1 * unbiased(1), 1e-15);
  bn.set_training(false);
  const Matrix a = bn.forward(x);
  const Matrix b = bn.forward(x);
  EXPECT_EQ(a, b);
  EXPECT_EQ(bufs[0]->value(0, 0), 0.1 * mean(0));
  EXPECT_NEAR(a(3, 1), (x(3, 1) - bufs[0]->value(1, 0)) / std::sqrt(bufs[1]->value(1, 0) + 1e-5), 1e-14);
}

TEST(BatchNormLayer, FiniteDifferenceBothModes) {
  Rng rng(8);
  BatchNorm bn(3);
  bn.gamma().value = random_matrix(3, 1, rng);
  bn.beta().value = random_matrix(3, 1, rng);
  EXPECT_LT(fd_worst(bn, random_matrix(7, 3, rng), rng), 1e-6);
  bn.set_training(false);
  EXPECT_LT(fd_worst(bn, random_matrix(7, 3, rng), rng), 1e-6);
}

TEST(BatchNormLayer, BatchTooSmall) {
  BatchNorm bn(3);
  try {
    bn.forward(Matrix::Ones(1, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "BatchTooSmall");
  }
  bn.set_training(false);
  EXPECT_NO_THROW(bn.forward(Matrix::Ones(1, 3)));
}

// ---------------------------------------------------------------------------

TEST(DropoutLayer, IdentityCases) {
  Rng rng(9);
  const Matrix x = random_matrix(4, 4, rng);
  Dropout zero(0.0, 1);
  EXPECT_EQ(zero.forward(x), x);
  zero.set_training(false);
  EXPECT_EQ(zero.forward(x), x);
  Dropout d(0.2, 1);
  d.set_training(false);
  EXPECT_EQ(d.forward(x), x);
  EXPECT_EQ(d.backward(x), x);
}

TEST(DropoutLayer, MonteCarloKeepRateAndMean) {
  Dropout d(0.2, 123);
  Rng rng(10);
  Matrix x(1, 100000);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 1.0 + rng.uniform();
  const Matrix y = d.forward(x);
  const double kept = static_cast<double>((y.array() != 0.0).count()) / static_cast<double>(x.size());
  EXPECT_NEAR(kept, 0.8, 0.01);
  EXPECT_NEAR(y.mean() / x.mean(), 1.0, 0.01);
  // Gradient uses the same mask and scale.
  const Matrix g = d.backward(Matrix::Ones(1, 100000));
  EXPECT_EQ((g.array() != 0.0).count(), (y.array() != 0.0).count());
}

TEST(DropoutLayer, SeededMasksRepeat) {
  Dropout a(0.5, 77), b(0.5, 77);
  const Matrix x = Matrix::Ones(3, 20);
  const Matrix first = a.forward(x);
  EXPECT_EQ(first, b.forward(x));
  EXPECT_NE(a.forward(x), first);
}

TEST(DropoutLayer, InvalidRate) {
  EXPECT_THROW(Dropout(1.0, 1), Error);
  EXPECT_THROW(Dropout(-0.1, 1), Error);
}

// ---------------------------------------------------------------------------

TEST(LstmLayer, ParameterCountFormula) {
  Rng rng(11);
  Lstm big(415, 64, true, rng);
  EXPECT_EQ(big.parameter_count(), 246272u);
  EXPECT_EQ(big.parameter_count(), 2u * (4 * 64 * (415 + 64) + 8 * 64));
  Lstm small(3, 4, false, rng);
  EXPECT_EQ(small.parameter_count(), 4u * 4 * (3 + 4) + 8 * 4);
}

TEST(LstmLayer, ForgetBiasInit) {
  Rng rng(12);
  Lstm l(3, 4, false, rng);
  const auto ps = l.parameters();
  EXPECT_EQ(ps[2]->name, "b_ih");
  for (int i = 0; i < 16; ++i) EXPECT_EQ(ps[2]->value(i, 0), (i >= 4 && i < 8) ? 1.0 : 0.0);
  EXPECT_EQ(ps[3]->value, Matrix::Zero(16, 1));
}

TEST(LstmLayer, ZeroWeightsGiveZeroStates) {
  Rng rng(13);
  Lstm l(3, 4, true, rng);
  for (auto* p : l.parameters()) p->value.setZero();
  const Matrix y = l.forward(random_matrix(5, 15, rng));
  EXPECT_EQ(y, Matrix::Zero(5, 40));
}

TEST(LstmLayer, SingleStepMatchesCellEquations) {
  Rng rng(14);
  Lstm l(3, 2, false, rng);
  for (auto* p : l.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng);
  const Matrix x = random_matrix(1, 3, rng);
  const auto ps = l.parameters();
  const Eigen::VectorXd z = ps[0]->value * x.row(0).transpose() + ps[2]->value.col(0) + ps[3]->value.col(0);
  const Matrix y = l.forward(x);
  for (int k = 0; k < 2; ++k) {
    const double i = sig(z(k)), g = std::tanh(z(4 + k)), o = sig(z(6 + k));
    EXPECT_NEAR(y(0, k), o * std::tanh(i * g), 1e-15);
  }
}

TEST(LstmLayer, ReverseDirectionIsForwardOnReversedSequence) {
  Rng rng(15);
  Lstm bi(3, 4, true, rng);
  Lstm uni(3, 4, false, rng);
  const auto pb = bi.parameters();
  const auto pu = uni.parameters();
  for (int k = 0; k < 4; ++k) pu[k]->value = pb[4 + k]->value;
  const int steps = 5;
  const Matrix x = random_matrix(2, 3 * steps, rng);
  Matrix xr(2, 3 * steps);
  for (int t = 0; t < steps; ++t) xr.middleCols(3 * t, 3) = x.middleCols(3 * (steps - 1 - t), 3);
  const Matrix yb = bi.forward(x);
  const Matrix yu = uni.forward(xr);
  for (int t = 0; t < steps; ++t) {
    EXPECT_LT((yb.middleCols(8 * t + 4, 4) - yu.middleCols(4 * (steps - 1 - t), 4)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(LstmLayer, BpttFiniteDifference) {
  for (bool bidir : {false, true}) {
    Rng rng(16);
    Lstm l(3, 4, bidir, rng);
    EXPECT_LT(fd_worst(l, random_matrix(2, 15, rng), rng), 1e-5) << bidir;
  }
}

TEST(LstmLayer, ShapeMismatch) {
  Rng rng(17);
  Lstm l(3, 4, false, rng);
  EXPECT_THROW(l.forward(Matrix::Zero(2, 7)), Error);
}

// ---------------------------------------------------------------------------

TEST(AttentionLayer, ParameterCount) {
  Rng rng(18);
  Attention a(128, rng);
  EXPECT_EQ(a.parameter_count(), 16641u);
}

TEST(AttentionLayer, SingleStepReturnsInput) {
  Rng rng(19);
  Attention a(6, rng);
  for (auto* p : a.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng);
  const Matrix x = random_matrix(3, 6, rng);
  EXPECT_EQ(a.forward(x), x);
  EXPECT_EQ(a.weights(), Matrix::Ones(3, 1));
}

TEST(AttentionLayer, WeightsFormDistribution) {
  Rng rng(20);
  Attention a(5, rng);
  a.forward(random_matrix(8, 35, rng, 4.0));
  for (Eigen::Index r = 0; r < 8; ++r) {
    EXPECT_NEAR(a.weights().row(r).sum(), 1.0, 1e-12);
    EXPECT_GE(a.weights().row(r).minCoeff(), 0.0);
  }
}

TEST(AttentionLayer, ContextByHand) {
  // Two steps, d = 1: s_t = v tanh(w h_t + b) + c.
  Rng rng(21);
  Attention a(1, rng);
  auto ps = a.parameters();
  ps[0]->value(0, 0) = 0.7;
  ps[1]->value(0, 0) = -0.2;
  ps[2]->value(0, 0) = 1.5;
  ps[3]->value(0, 0) = 0.3;
  Matrix x(1, 2);
  x << 1.0, -2.0;
  const double s1 = 1.5 * std::tanh(0.7 - 0.2) + 0.3, s2 = 1.5 * std::tanh(-1.4 - 0.2) + 0.3;
  const double a1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
  EXPECT_NEAR(a.forward(x)(0, 0), a1 * 1.0 + (1 - a1) * -2.0, 1e-14);
}

TEST(AttentionLayer, FiniteDifference) {
  Rng rng(22);
  Attention a(4, rng);
  for (auto* p : a.parameters()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, 0.7);
  EXPECT_LT(fd_worst(a, random_matrix(3, 20, rng), rng), 1e-5);
}

// ---------------------------------------------------------------------------

TEST(MseLoss, Examples) {
  Matrix p(1, 2), t(1, 2);
  p << 1, 2;
  t << 1, 4;
  const auto full = mse_loss(p, t, full_mask(1, 2));
  EXPECT_EQ(full.loss, 2.0);
  EXPECT_EQ(full.grad(0, 1), 2.0 * (2 - 4) / 2.0);
  MaskMatrix m = full_mask(1, 2);
  m(0, 1) = false;
  const auto part = mse_loss(p, t, m);
  EXPECT_EQ(part.loss, 0.0);
  EXPECT_EQ(part.grad(0, 1), 0.0);
  const auto same = mse_loss(t, t, full_mask(1, 2));
  EXPECT_EQ(same.loss, 0.0);
  EXPECT_EQ(same.grad, Matrix::Zero(1, 2));
}

TEST(MseLoss, Errors) {
  EXPECT_THROW(mse_loss(Matrix::Zero(1, 2), Matrix::Zero(1, 2), MaskMatrix::Constant(1, 2, false)), Error);
  EXPECT_THROW(mse_loss(Matrix::Zero(1, 2), Matrix::Zero(2, 2), full_mask(1, 2)), Error);
}

// ---------------------------------------------------------------------------

namespace {

Parameter scalar(double v, double g) { return {"x", Matrix::Constant(1, 1, v), Matrix::Constant(1, 1, g)}; }

}  // namespace

TEST(AdamOptimizer, FirstStepMovesByLearningRate) {
  auto p = scalar(1.0, 2.0);
  Adam adam({.lr = 0.001});
  adam.step({&p});
  // m_hat = 2, v_hat = 4: step = lr * 2 / (2 + eps).
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.001 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value(0, 0), 0.999, 1e-6);
  EXPECT_EQ(adam.t(), 1);
}

TEST(AdamOptimizer, ZeroGradientIsIdentity) {
  Rng rng(23);
  Parameter p{"w", random_matrix(3, 4, rng), Matrix::Zero(3, 4)};
  const Matrix before = p.value;
  Adam adam({.lr = 0.01});
  for (int i = 0; i < 10; ++i) adam.step({&p});
  EXPECT_EQ(p.value, before);
}

TEST(AdamOptimizer, DecoupledDecayOnly) {
  auto p = scalar(1.0, 0.0);
  Adam adam({.lr = 0.0005, .weight_decay = 1e-5});
  adam.step({&p});
  EXPECT_EQ(p.value(0, 0), 1.0 - 0.0005 * 1e-5 * 1.0);
}

TEST(AdamOptimizer, SecondStepMatchesHandRecurrence) {
  auto p = scalar(0.5, 1.0);
  Adam adam({.lr = 0.01, .weight_decay = 0.1});
  adam.step({&p});
  p.grad(0, 0) = -3.0;
  adam.step({&p});
  double th = 0.5, m = 0, v = 0;
  const double gs[] = {1.0, -3.0};
  for (int t = 1; t <= 2; ++t) {
    th -= 0.01 * 0.1 * th;
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    th -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.value(0, 0), th, 1e-15);
}

TEST(AdamOptimizer, ClipNormScalesGradient) {
  auto a = scalar(0.0, 30.0), b = scalar(0.0, 40.0);
  auto c = scalar(0.0, 3.0), d = scalar(0.0, 4.0);
  Adam clipped({.lr = 0.1, .clip_norm = 5.0});
  Adam plain({.lr = 0.1});
  clipped.step({&a, &b});
  plain.step({&c, &d});
  EXPECT_NEAR(a.value(0, 0), c.value(0, 0), 1e-15);
  EXPECT_NEAR(b.value(0, 0), d.value(0, 0), 1e-15);
}

// ---------------------------------------------------------------------------

namespace {

// Scales the gradient reported for its inner layer's weights.
class Corrupted : public Module {
 public:
  explicit Corrupted(Rng& rng) : inner_(3, 2, rng) {}
  Matrix forward(const Matrix& x) override { return inner_.forward(x); }
  Matrix backward(const Matrix& dy) override {
    const Matrix before = inner_.weight().grad;
    Matrix dx = inner_.backward(dy);
    inner_.weight().grad = before + 1.01 * (inner_.weight().grad - before);
    return dx;
  }
  std::vector<Parameter*> parameters() override { return inner_.parameters(); }
  std::string kind() const override { return "Corrupted"; }

 private:
  Linear inner_;
};

}  // namespace

TEST(GradCheck, LinearModelIsExact) {
  Rng rng(24);
  Linear lin(5, 4, rng);
  const auto rep = grad_check(lin, random_matrix(6, 5, rng), random_matrix(6, 4, rng), full_mask(6, 4));
  EXPECT_TRUE(rep.pass);
  for (const auto& [name, err] : rep.max_rel_error) EXPECT_LT(err, 1e-7) << name;
  EXPECT_EQ(rep.max_rel_error.size(), 3u);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Rng rng(25);
  Corrupted c(rng);
  const auto rep = grad_check(c, random_matrix(4, 3, rng), random_matrix(4, 2, rng), full_mask(4, 2));
  EXPECT_FALSE(rep.pass);
  EXPECT_GT(rep.max_rel_error.at("W"), 1e-3);
  EXPECT_LT(rep.max_rel_error.at("b"), 1e-7);
}

TEST(GradCheck, StackedLayersWithPartialMask) {
  Rng rng(26);
  Sequential net;
  net.add("lstm", std::make_unique<Lstm>(2, 3, true, rng));
  net.add("drop", std::make_unique<Dropout>(0.0, 1));
  net.add("attn", std::make_unique<Attention>(6, rng));
  net.add("fc", std::make_unique<Linear>(6, 5, rng));
  net.add("bn", std::make_unique<BatchNorm>(5));
  net.add("relu", std::make_unique<ReLU>());
  net.add("out", std::make_unique<Linear>(5, 2, rng));
  MaskMatrix mask = full_mask(4, 2);
  mask(1, 0) = false;
  // Targets sit close to the output: the bias feeding BatchNorm has an exactly
  // zero gradient, and difference noise scales with the loss value.
  const Matrix x = random_matrix(4, 8, rng);
  const Matrix target = net.forward(x) + random_matrix(4, 2, rng, 0.01);
  const auto rep = grad_check(net, x, target, mask);
  for (const auto& [name, err] : rep.max_rel_error) EXPECT_LT(err, 1e-4) << name;
  EXPECT_TRUE(rep.pass);
  EXPECT_TRUE(rep.max_rel_error.count("attn.b_v"));
  EXPECT_TRUE(rep.max_rel_error.count("lstm.W_hh_reverse"));
}

TEST(GradCheck, NonFiniteLoss) {
  Rng rng(27);
  Linear lin(2, 1, rng);
  lin.weight().value(0, 0) = std::numeric_limits<double>::infinity();
  try {
    grad_check(lin, Matrix::Ones(2, 2), Matrix::Zero(2, 1), full_mask(2, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NonFiniteLoss");
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
  }
}

TEST(RelativeError, Floor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
  EXPECT_EQ(relative_error(2.0, 1.0), 0.5);
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripBitExact) {
  TempDir dir;
  Rng rng(28);
  Sequential net;
  net.add("fc", std::make_unique<Linear>(3, 2, rng));
  net.add("bn", std::make_unique<BatchNorm>(2));
  net.forward(random_matrix(4, 3, rng));
  const auto state = state_of(net);
  ASSERT_EQ(state.size(), 6u);
  EXPECT_EQ(state[4].name, "bn.running_mean");
  save_checkpoint(dir.file("m.bin"), state);
  const auto loaded = load_checkpoint(dir.file("m.bin"));
  EXPECT_EQ(loaded, state);

  Rng other(99);
  Sequential net2;
  net2.add("fc", std::make_unique<Linear>(3, 2, other));
  net2.add("bn", std::make_unique<BatchNorm>(2));
  load_state(net2, loaded);
  EXPECT_EQ(state_of(net2), state);
}

TEST(Checkpoint, ManifestDescribesLayout) {
  TempDir dir;
  Rng rng(29);
  Linear lin(3, 2, rng);
  const auto state = state_of(lin);
  save_checkpoint(dir.file("m.bin"), state);
  const auto j = nlohmann::json::parse(checkpoint_manifest(state, R"({"kind":"linear"})"));
  EXPECT_EQ(j["dtype"], "float64");
  EXPECT_EQ(j["model"]["kind"], "linear");
  EXPECT_EQ(j["tensors"][0]["name"], "W");
  EXPECT_EQ(j["tensors"][0]["shape"][0], 2);
  // Header: magic 8 + count 8 + per tensor (4 + name + 16).
  const std::uint64_t header = 8 + 8 + (4 + 1 + 16) * 2;
  EXPECT_EQ(j["header_bytes"], header);
  EXPECT_EQ(j["tensors"][1]["offset"], header + 8 * 6);
  std::ifstream f(dir.file("m.bin"), std::ios::binary | std::ios::ate);
  EXPECT_EQ(static_cast<std::uint64_t>(f.tellg()), header + 8 * 8);
}

TEST(Checkpoint, RejectsBadInput) {
  TempDir dir;
  pdprog::testing::write_text(dir.file("junk.bin"), "not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(dir.file("junk.bin")), Error);
  Rng rng(30);
  Linear lin(3, 2, rng);
  save_checkpoint(dir.file("m.bin"), state_of(lin));
  auto bytes = pdprog::testing::read_text(dir.file("m.bin"));
  pdprog::testing::write_text(dir.file("cut.bin"), bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(dir.file("cut.bin")), Error);
  Linear wrong(4, 2, rng);
  EXPECT_THROW(load_state(wrong, state_of(lin)), Error);
  EXPECT_THROW(load_checkpoint(dir.file("missing.bin")), Error);
}
