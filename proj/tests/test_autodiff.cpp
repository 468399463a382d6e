#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck_cases.hpp"
#include "sml/autodiff.hpp"

using namespace sml;
using namespace sml::testing;

namespace {

ad::Tensor make(ad::Shape shape, std::vector<float> v, bool grad = false) {
  return ad::Tensor(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST(Tensor, ShapeAndValidation) {
  ad::Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(ad::Tensor({2, 0}), std::invalid_argument);
  EXPECT_THROW(make({2, 2}, {1, 2, 3}), std::invalid_argument);
  EXPECT_EQ(ad::Tensor::scalar(4.0f).item(), 4.0f);
}

TEST(Tensor, CopiesAliasClonesDoNot) {
  auto a = make({2}, {1, 2});
  auto b = a;
  auto c = a.clone();
  a.values()[0] = 9;
  EXPECT_EQ(b.values()[0], 9);
  EXPECT_EQ(c.values()[0], 1);
  EXPECT_TRUE(a.same_as(b));
  EXPECT_FALSE(a.same_as(c));
}

TEST(EmbeddingLookup, ReturnsRowsBitExact) {
  std::mt19937_64 rng(1);
  auto table = random_tensor({5, 3}, rng, false);
  auto tape = DTape::inference();
  std::vector<std::int32_t> idx{4, 0, 2};
  auto out = ad::embedding_lookup(tape, table, idx);
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_EQ(out.values()[r * 3 + c], table.values()[static_cast<std::size_t>(idx[r]) * 3 + c]);
}

TEST(EmbeddingLookup, RepeatedIndexAccumulates) {
  auto table = make({3, 2}, {0, 0, 0, 0, 0, 0}, true);
  ad::Tape tape;
  std::vector<std::int32_t> idx{2, 2};
  auto out = ad::embedding_lookup(tape, table, idx);
  std::vector<float> w{1, 2, 3, 4};
  auto loss = ad::weighted_sum(tape, out, std::span<const float>(w));
  tape.backward(loss);
  EXPECT_EQ(table.grad()[4], 1 + 3);
  EXPECT_EQ(table.grad()[5], 2 + 4);
  EXPECT_EQ(table.grad()[0], 0);
}

TEST(EmbeddingLookup, OutOfRangeThrows) {
  auto table = make({2, 2}, {1, 2, 3, 4});
  auto tape = ad::Tape::inference();
  std::vector<std::int32_t> idx{2};
  EXPECT_THROW(ad::embedding_lookup(tape, table, idx), std::out_of_range);
  idx = {-1};
  EXPECT_THROW(ad::embedding_lookup(tape, table, idx), std::out_of_range);
}

TEST(Dense, IdentityWeightsPassThrough) {
  auto x = make({2, 2}, {1, -2, 3, 4});
  auto w = make({2, 2}, {1, 0, 0, 1});
  auto b = make({2}, {0, 0});
  auto tape = ad::Tape::inference();
  auto y = ad::dense(tape, x, w, b, ad::Activation::None);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Dense, TanhAtZeroHasUnitSlope) {
  auto x = make({1, 2}, {0, 0}, true);
  auto w = make({2, 2}, {0, 0, 0, 0});
  auto b = make({2}, {0, 0}, true);
  ad::Tape tape;
  auto y = ad::dense(tape, x, w, b, ad::Activation::Tanh);
  EXPECT_EQ(y.values()[0], 0);
  auto loss = ad::sum(tape, y);
  tape.backward(loss);
  EXPECT_FLOAT_EQ(b.grad()[0], 1.0f);
}

TEST(Dense, ShapeMismatchThrows) {
  auto tape = ad::Tape::inference();
  EXPECT_THROW(ad::dense(tape, ad::Tensor({2, 3}), ad::Tensor({2, 2}), ad::Tensor({2}), ad::Activation::None),
               std::invalid_argument);
}

TEST(SeqPool, HandExample) {
  auto x = make({2, 2}, {1, 5, 3, 2});
  auto tape = ad::Tape::inference();
  auto mx = ad::seq_pool(tape, x, ad::PoolMode::Max, 2);
  auto mean = ad::seq_pool(tape, x, ad::PoolMode::Mean, 2);
  EXPECT_EQ(mx.values()[0], 3);
  EXPECT_EQ(mx.values()[1], 5);
  EXPECT_EQ(mean.values()[0], 2);
  EXPECT_EQ(mean.values()[1], 3.5);
}

TEST(SeqPool, SingleRowAndMask) {
  auto x = make({3, 2}, {1, 2, 7, 8, 9, 9});
  auto tape = ad::Tape::inference();
  auto one = ad::seq_pool(tape, x, ad::PoolMode::Max, 1);
  EXPECT_EQ(one.values()[0], 1);
  auto avg = ad::seq_pool(tape, x, ad::PoolMode::Mean, 1);
  EXPECT_EQ(avg.values()[1], 2);
  EXPECT_THROW(ad::seq_pool(tape, x, ad::PoolMode::Max, 0), std::invalid_argument);
  EXPECT_THROW(ad::seq_pool(tape, x, ad::PoolMode::Max, 4), std::invalid_argument);
}

TEST(SeqPool, MaxTieRoutesToFirstRow) {
  auto x = make({2, 1}, {4, 4}, true);
  ad::Tape tape;
  auto y = ad::seq_pool(tape, x, ad::PoolMode::Max, 2);
  auto loss = ad::sum(tape, y);
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 1);
  EXPECT_EQ(x.grad()[1], 0);
}

TEST(Conv1d, SelectionFilterPicksColumn) {
  auto x = make({3, 2}, {1, 10, 2, 20, 3, 30});
  auto f = make({1, 2, 1}, {0, 1});
  auto b = make({1}, {0});
  auto tape = ad::Tape::inference();
  auto y = ad::conv1d(tape, x, f, b);
  ASSERT_EQ(y.shape(), (ad::Shape{3, 1}));
  EXPECT_EQ(y.values()[0], 10);
  EXPECT_EQ(y.values()[2], 30);
}

TEST(Conv1d, ZeroFiltersGiveBias) {
  auto x = make({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto f = ad::Tensor({3, 2, 2});
  auto b = make({2}, {0.5f, -1});
  auto tape = ad::Tape::inference();
  auto y = ad::conv1d(tape, x, f, b);
  ASSERT_EQ(y.shape(), (ad::Shape{2, 2}));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(y.values()[r * 2], 0.5f);
    EXPECT_EQ(y.values()[r * 2 + 1], -1);
  }
  EXPECT_THROW(ad::conv1d(tape, make({2, 2}, {1, 2, 3, 4}), f, b), std::invalid_argument);
}

TEST(Gru, ZeroWeightsZeroState) {
  ad::GruWeights<float> g{ad::Tensor({2, 6}), ad::Tensor({2, 6}), ad::Tensor({6})};
  auto tape = ad::Tape::inference();
  auto h = ad::gru_sequence(tape, make({1, 2}, {0.3f, -0.7f}), g, ad::Tensor({2}));
  for (float v : h.values()) EXPECT_EQ(v, 0);
}

TEST(Gru, HalfUpdateWithZeroCandidate) {
  // z = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0, so h1 = 0.5 h0.
  ad::GruWeights<float> g{ad::Tensor({1, 3}), ad::Tensor({1, 3}), ad::Tensor({3})};
  auto tape = ad::Tape::inference();
  auto h = ad::gru_sequence(tape, make({1, 1}, {5}), g, make({1}, {0.8f}));
  EXPECT_FLOAT_EQ(h.values()[0], 0.4f);
}

TEST(Gru, Deterministic) {
  std::mt19937_64 a(3), b(3);
  auto run = [](std::mt19937_64& rng) {
    auto x = random_tensor({4, 3}, rng, false);
    ad::GruWeights<double> g{random_tensor({3, 9}, rng), random_tensor({3, 9}, rng), random_tensor({9}, rng)};
    auto tape = DTape::inference();
    auto h = ad::gru_sequence(tape, x, g, DTensor({3}));
    return std::vector<double>(h.values().begin(), h.values().end());
  };
  EXPECT_EQ(run(a), run(b));
}

TEST(L2Normalize, Examples) {
  auto tape = ad::Tape::inference();
  auto y = ad::l2_normalize(tape, make({2}, {3, 4}));
  EXPECT_FLOAT_EQ(y.values()[0], 0.6f);
  EXPECT_FLOAT_EQ(y.values()[1], 0.8f);
  auto z = ad::l2_normalize(tape, ad::Tensor({3}));
  for (float v : z.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(L2Normalize, UnitNormPropertyAndProjection) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 6}, rng, true, -3, 3);
    auto tape = DTape::inference();
    auto y = ad::l2_normalize(tape, x);
    for (std::size_t r = 0; r < 4; ++r) {
      double n = 0;
      for (std::size_t c = 0; c < 6; ++c) n += y.values()[r * 6 + c] * y.values()[r * 6 + c];
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
    }
  }
  // ||normalize(x)||^2 is constant, so its gradient vanishes.
  auto x = random_tensor({5}, rng);
  DTape tape;
  auto y = ad::l2_normalize(tape, x);
  std::vector<double> w(y.values().begin(), y.values().end());
  auto sq = ad::weighted_sum(tape, y, std::span<const double>(w));
  tape.backward(sq);
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-9);
}

TEST(CosineDistance, IdentityAndAntipodal) {
  auto tape = ad::Tape::inference();
  auto a = make({2}, {0.6f, 0.8f});
  auto b = make({2}, {-0.6f, -0.8f});
  EXPECT_NEAR(ad::cosine_distance(tape, a, a).item(), 0.0f, 1e-7);
  EXPECT_NEAR(ad::cosine_distance(tape, a, b).item(), 2.0f, 1e-7);
}

TEST(CosineDistance, MatchesDotProduct) {
  std::mt19937_64 rng(8);
  auto tape = DTape::inference();
  auto anchor = random_tensor({4}, rng, false);
  auto rows = random_tensor({3, 4}, rng, false);
  auto d = ad::cosine_distance_many(tape, anchor, rows);
  for (std::size_t r = 0; r < 3; ++r) {
    double dot = 0;
    for (std::size_t c = 0; c < 4; ++c) dot += anchor.values()[c] * rows.values()[r * 4 + c];
    EXPECT_NEAR(d.values()[r], 1 - dot, 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  auto x = make({3}, {1, 2, 3}, true);
  ad::Tape tape;
  auto loss = ad::sum(tape, x);
  tape.backward(loss);
  for (float g : x.grad()) EXPECT_EQ(g, 1);
}

TEST(Backward, FanOutAccumulates) {
  auto y = make({1}, {2}, true);
  ad::Tape tape;
  auto twice = ad::add(tape, y, y);
  auto loss = ad::sum(tape, twice);
  tape.backward(loss);
  EXPECT_EQ(y.grad()[0], 2);
}

TEST(Backward, RejectsBadLoss) {
  auto x = make({2}, {1, 2}, true);
  ad::Tape tape;
  auto y = ad::scale(tape, x, 2.0f);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
  auto stray = ad::Tensor::scalar(1.0f, true);
  EXPECT_THROW(tape.backward(stray), std::invalid_argument);
}

TEST(Backward, LinearInTheLoss) {
  std::mt19937_64 rng(11);
  auto w = random_tensor({3, 2}, rng);
  auto x = random_tensor({4, 3}, rng, false);
  auto b = DTensor({2});
  const double alpha = 0.7;
  auto grads = [&](int which) {
    w.zero_grad();
    DTape tape;
    auto y = ad::dense(tape, x, w, b, ad::Activation::Tanh);
    auto l1 = ad::sum(tape, y);
    auto pooled = ad::seq_pool(tape, y, ad::PoolMode::Max, 4);
    auto l2 = ad::sum(tape, pooled);
    DTensor loss = which == 1 ? l1 : which == 2 ? l2 : ad::add(tape, ad::scale(tape, l1, alpha), l2);
    tape.backward(loss);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  auto g1 = grads(1), g2 = grads(2), g = grads(3);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], alpha * g1[i] + g2[i], 1e-12);
}

TEST(Adam, ZeroGradLeavesParameters) {
  ad::ParamSet ps;
  auto w = ps.add("w", make({2}, {1, -1}));
  w.grad();
  ad::adam_step(ps, {});
  EXPECT_EQ(w.values()[0], 1);
  EXPECT_EQ(w.values()[1], -1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::ParamSet ps;
  auto w = ps.add("w", make({2}, {1, 1}));
  w.grad()[0] = 5;
  w.grad()[1] = -0.01f;
  ad::adam_step(ps, {});
  EXPECT_NEAR(w.values()[0], 1 - 0.001, 1e-6);
  EXPECT_NEAR(w.values()[1], 1 + 0.001, 1e-5);
  EXPECT_EQ(w.grad()[0], 0);
}

TEST(Adam, MinimizesSquare) {
  ad::ParamSet ps;
  auto w = ps.add("w", make({1}, {1}));
  ad::AdamConfig cfg;
  cfg.lr = 0.1;
  float prev = w.values()[0];
  for (int step = 0; step < 10; ++step) {
    ad::Tape tape;
    std::vector<float> coef{w.values()[0]};
    auto loss = ad::weighted_sum(tape, w, std::span<const float>(coef));  // w * w with w held as coefficient
    tape.backward(loss);
    w.grad()[0] *= 2;  // d(w^2)/dw = 2w
    ad::adam_step(ps, cfg);
    EXPECT_LT(w.values()[0], prev);
    EXPECT_GT(w.values()[0], -1e-3);
    prev = w.values()[0];
  }
}

TEST(GradCheck, SelfConsistency) {
  // 1 - w.w is quadratic, so central differences are exact up to rounding.
  auto w = DTensor({1}, std::vector<double>{0.7});
  EXPECT_LT(ad::grad_check([&](DTape& t) { return ad::cosine_distance(t, w, w); }, std::vector<DTensor>{w}), 1e-8);
  auto c = DTensor({1}, std::vector<double>{2.0});
  EXPECT_EQ(ad::grad_check([&](DTape&) { return DTensor::scalar(3.0); }, std::vector<DTensor>{c}), 0.0);
}

class PrimitiveGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  const auto cases = primitive_cases();
  const auto& c = cases.at(GetParam());
  std::mt19937_64 rng(100 + GetParam());
  for (int trial = 0; trial < 20; ++trial) EXPECT_LT(c.run(rng), 1e-3) << c.name << " trial " << trial;
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGradients, ::testing::Range<std::size_t>(0, primitive_cases().size()),
                         [](const auto& info) {
                           auto n = primitive_cases()[info.param].name;
                           std::replace_if(n.begin(), n.end(), [](char ch) { return !std::isalnum(ch); }, '_');
                           return n;
                         });
