#include <gtest/gtest.h>

#include <numeric>

#include "pdprog/error.hpp"
#include "pdprog/models.hpp"

using namespace pdprog;
using namespace pdprog::models;
using nn::Matrix;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, nn::Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::size_t tensor_total(nn::Module& m) {
  std::size_t n = 0;
  for (auto* p : m.parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::size_t stage_params(const Summary& s, const std::string& stage) {
  for (const auto& r : s.rows) {
    if (r.stage == stage) return r.params;
  }
  ADD_FAILURE() << "no stage " << stage;
  return 0;
}

LstmForecasterConfig wide_lstm() {
  LstmForecasterConfig c;
  c.input_width = 415;
  return c;
}

LstmForecasterConfig tiny_lstm() {
  LstmForecasterConfig c;
  c.input_width = 3;
  c.hidden = 4;
  c.attention_width = 8;
  c.head_widths = {5, 4, 3};
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST(LstmForecaster, StageCounts) {
  auto m = build_lstm_forecaster(wide_lstm(), 1);
  const auto s = summarize(m);
  EXPECT_EQ(stage_params(s, "lstm"), 2u * (4u * 64u * (415u + 64u) + 8u * 64u));
  EXPECT_EQ(stage_params(s, "lstm"), 246272u);
  EXPECT_EQ(stage_params(s, "attention"), 16641u);
  EXPECT_EQ(stage_params(s, "fc1"), 8256u);
  EXPECT_EQ(stage_params(s, "fc2"), 2080u);
  EXPECT_EQ(stage_params(s, "bn2"), 64u);
  EXPECT_EQ(stage_params(s, "fc3"), 528u);
  EXPECT_EQ(stage_params(s, "bn3"), 32u);
  EXPECT_EQ(stage_params(s, "out"), 68u);
  EXPECT_EQ(s.total, 273941u);
  EXPECT_EQ(s.total, 271861u + 2080u);
  EXPECT_LT(std::abs(static_cast<double>(s.total) - 271861.0) / 271861.0, 0.01);
}

TEST(LstmForecaster, StageOrderAndWidths) {
  auto m = build_lstm_forecaster(LstmForecasterConfig{}, 1);
  const auto s = summarize(m);
  std::vector<std::string> names;
  std::vector<int> widths;
  for (const auto& r : s.rows) {
    names.push_back(r.stage);
    widths.push_back(r.width);
  }
  EXPECT_EQ(names, (std::vector<std::string>{"lstm", "dropout", "attention", "fc1", "relu1", "fc2", "bn2", "relu2",
                                             "fc3", "bn3", "relu3", "out"}));
  EXPECT_EQ(widths, (std::vector<int>{128, 128, 128, 64, 64, 32, 32, 32, 16, 16, 16, 4}));
  EXPECT_EQ(m.layout, InputLayout::kSequence);
}

TEST(LstmForecaster, InvalidConfig) {
  auto c = wide_lstm();
  c.input_width = 0;
  EXPECT_THROW(build_lstm_forecaster(c, 1), Error);
  c = wide_lstm();
  c.attention_width = 64;
  EXPECT_THROW(build_lstm_forecaster(c, 1), Error);
  c = wide_lstm();
  c.output = 3;
  EXPECT_THROW(build_lstm_forecaster(c, 1), Error);
  c = wide_lstm();
  c.bidirectional = false;
  EXPECT_THROW(build_lstm_forecaster(c, 1), Error);
  c.attention_width = 64;
  EXPECT_NO_THROW(build_lstm_forecaster(c, 1));
}

TEST(KanForecaster, DefaultShapeAndTotal) {
  auto m = build_kan_forecaster(KanForecasterConfig{}, 3);
  EXPECT_EQ(m.input_width, 27);
  EXPECT_EQ(m.layout, InputLayout::kFlat);
  const auto s = summarize(m);
  EXPECT_EQ(s.total, 330181u);
  EXPECT_EQ(s.total, kan::param_count({27, 45, 91, 183}, kan::BSplineConfig{}));
  EXPECT_EQ(stage_params(s, "kan1"), 27u * 45u * 15u);
  EXPECT_EQ(stage_params(s, "head"), 736u);
  EXPECT_LT(std::abs(static_cast<double>(s.total) - 374107.0) / 374107.0, 0.15);

  nn::Rng rng(4);
  const Matrix y = m.predict(random_matrix(9, 27, rng));
  EXPECT_EQ(y.rows(), 9);
  EXPECT_EQ(y.cols(), 4);
}

TEST(KanForecaster, OneSummaryRowPerLayer) {
  auto m = build_kan_forecaster(KanForecasterConfig{}, 3);
  const auto s = summarize(m);
  int kan_rows = 0;
  for (const auto& r : s.rows) kan_rows += r.kind == "KAN";
  EXPECT_EQ(kan_rows, 3);
  EXPECT_EQ(s.rows.back().stage, "head");
  EXPECT_EQ(s.rows.back().width, 4);
}

TEST(KanForecaster, SameSeedSameInit) {
  auto a = build_kan_forecaster(KanForecasterConfig{}, 21);
  auto b = build_kan_forecaster(KanForecasterConfig{}, 21);
  EXPECT_EQ(nn::state_of(*a.net), nn::state_of(*b.net));
}

TEST(KanForecaster, InvalidConfig) {
  KanForecasterConfig c;
  c.widths = {27};
  EXPECT_THROW(build_kan_forecaster(c, 1), Error);
  c = KanForecasterConfig{};
  c.output = 2;
  EXPECT_THROW(build_kan_forecaster(c, 1), Error);
  c = KanForecasterConfig{};
  c.grid_size = 0;
  EXPECT_THROW(build_kan_forecaster(c, 1), Error);
}

TEST(Summary, SingleLinearStage) {
  nn::Sequential net;
  nn::Rng rng(1);
  net.add("fc", std::make_unique<nn::Linear>(2, 1, rng));
  const auto s = summarize(net, 2);
  ASSERT_EQ(s.rows.size(), 1u);
  EXPECT_EQ(s.rows[0].width, 1);
  EXPECT_EQ(s.total, 3u);
  EXPECT_EQ(summary_csv(s), "stage,kind,width,params\nfc,Linear,1,3\nTotal,,,3\n");
}

TEST(Summary, TotalEqualsTensorSizes) {
  for (auto* m : {new Model(build_lstm_forecaster(wide_lstm(), 2)),
                  new Model(build_kan_forecaster(KanForecasterConfig{}, 2)),
                  new Model(build_lstm_forecaster(tiny_lstm(), 2))}) {
    std::unique_ptr<Model> owned(m);
    const auto s = summarize(*owned);
    std::size_t sum = 0;
    for (const auto& r : s.rows) sum += r.params;
    EXPECT_EQ(s.total, sum);
    EXPECT_EQ(s.total, tensor_total(*owned->net));
  }
}

TEST(Summary, TextListsEveryStage) {
  auto m = build_lstm_forecaster(wide_lstm(), 1);
  const auto s = summarize(m);
  const auto text = summary_text(s);
  for (const auto& r : s.rows) EXPECT_NE(text.find(r.stage), std::string::npos);
  EXPECT_NE(text.find("273941"), std::string::npos);
}

TEST(Forecasters, OutputShapeForAnyBatch) {
  auto lstm = build_lstm_forecaster(tiny_lstm(), 5);
  auto kan = build_kan_forecaster(KanForecasterConfig{{6, 5, 4}, 5, 3, 4, 0.2}, 5);
  nn::Rng rng(6);
  for (int b : {1, 2, 7, 33}) {
    EXPECT_EQ(lstm.predict(random_matrix(b, 3 * 2, rng)).rows(), b);
    EXPECT_EQ(lstm.predict(random_matrix(b, 3 * 2, rng)).cols(), 4);
    EXPECT_EQ(kan.predict(random_matrix(b, 6, rng)).rows(), b);
    EXPECT_EQ(kan.predict(random_matrix(b, 6, rng)).cols(), 4);
  }
  // Training mode needs at least two rows for batch statistics.
  lstm.net->set_training(true);
  EXPECT_EQ(lstm.net->forward(random_matrix(5, 6, rng)).cols(), 4);
}

TEST(Forecasters, EvalRowsIndependentOfBatchOrder) {
  auto lstm = build_lstm_forecaster(tiny_lstm(), 7);
  auto kan = build_kan_forecaster(KanForecasterConfig{{6, 5, 4}, 5, 3, 4, 0.2}, 7);
  nn::Rng rng(8);
  struct Case {
    Model* m;
    Matrix x;
  };
  for (auto c : {Case{&lstm, random_matrix(9, 9, rng)}, Case{&kan, random_matrix(9, 6, rng)}}) {
    const Matrix y = c.m->predict(c.x);
    std::vector<Eigen::Index> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[2], perm[5]);
    Matrix xp(9, c.x.cols());
    for (Eigen::Index r = 0; r < 9; ++r) xp.row(r) = c.x.row(perm[static_cast<std::size_t>(r)]);
    const Matrix yp = c.m->predict(xp);
    for (Eigen::Index r = 0; r < 9; ++r) EXPECT_EQ(yp.row(r), y.row(perm[static_cast<std::size_t>(r)]));
    EXPECT_EQ(c.m->predict(c.x), y);
    // Single-row batches agree with the full batch.
    EXPECT_EQ(c.m->predict(c.x.row(4)), y.row(4));
  }
}

TEST(Forecasters, InputsOfChecksLayout) {
  SupervisedSet set;
  set.inputs = Matrix::Zero(3, 27);
  set.sequences = Matrix::Zero(3, 46);
  set.seq_len = 2;
  set.step_width = 23;
  auto kan = build_kan_forecaster(KanForecasterConfig{}, 1);
  auto lstm = build_lstm_forecaster(LstmForecasterConfig{}, 1);
  EXPECT_EQ(&kan.inputs_of(set), &set.inputs);
  EXPECT_EQ(&lstm.inputs_of(set), &set.sequences);
  set.step_width = 22;
  EXPECT_THROW(lstm.inputs_of(set), Error);
  set.inputs = Matrix::Zero(3, 26);
  EXPECT_THROW(kan.inputs_of(set), Error);
}

class ForecasterGradCheck : public ::testing::TestWithParam<int> {};

TEST_P(ForecasterGradCheck, LstmForecaster) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  auto m = build_lstm_forecaster(tiny_lstm(), seed);
  nn::Rng rng(seed + 100);
  const Matrix x = random_matrix(6, 3 * 3, rng);
  m.net->set_training(true);  // batch statistics in BatchNorm; dropout rate is 0
  // Targets close to the outputs keep the loss small, so finite-difference
  // roundoff stays well below the tolerance even for near-zero gradients.
  const Matrix target = m.net->forward(x) + 0.01 * random_matrix(6, 4, rng);
  MaskMatrix mask = MaskMatrix::Constant(6, 4, 1);
  mask(1, 2) = 0;
  const auto rep = nn::grad_check(*m.net, x, target, mask);
  for (const auto& [name, err] : rep.max_rel_error) EXPECT_LT(err, 1e-4) << name;
  EXPECT_TRUE(rep.pass);
}

TEST_P(ForecasterGradCheck, KanForecaster) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  auto m = build_kan_forecaster(KanForecasterConfig{{4, 3, 3}, 4, 3, 4, 0.0}, seed);
  nn::Rng rng(seed + 200);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix target = m.net->forward(x) + 0.01 * random_matrix(5, 4, rng);
  const auto rep = nn::grad_check(*m.net, x, target, MaskMatrix::Constant(5, 4, 1));
  for (const auto& [name, err] : rep.max_rel_error) EXPECT_LT(err, 1e-4) << name;
  EXPECT_TRUE(rep.pass);
}

INSTANTIATE_TEST_SUITE_P(Seeds, ForecasterGradCheck, ::testing::Values(1, 2, 3));
