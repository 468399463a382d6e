#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "sml/encoders.hpp"
#include "sml/error.hpp"
#include "support.hpp"

using namespace sml;

namespace {

ModelConfig small_config(EncoderKind kind, bool common = true) {
  ModelConfig c;
  c.embedding_dim = 8;
  c.vocab_size = 12;
  c.encoder = kind;
  c.common_embedding = common;
  c.max_session_length = 6;
  c.conv_filter_sizes = {1, 2, 3};
  return c;
}

std::vector<float> encode(const Model& m, std::vector<ItemIndex> prefix) {
  auto tape = ad::Tape::inference();
  auto v = m.encode_session(tape, prefix);
  return {v.values().begin(), v.values().end()};
}

double norm(std::span<const float> v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

const EncoderKind kAllEncoders[] = {EncoderKind::MaxPool, EncoderKind::AvgPool, EncoderKind::Gru,
                                    EncoderKind::TextCnn};

}  // namespace

TEST(ModelConfigTest, Validation) {
  auto c = small_config(EncoderKind::TextCnn);
  EXPECT_NO_THROW(c.validate());
  c.conv_filter_sizes = {1, 7};
  EXPECT_THROW(c.validate(), UsageError);
  c = small_config(EncoderKind::MaxPool);
  c.embedding_dim = 0;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_EQ(parse_encoder_kind("RNN"), EncoderKind::Gru);
  EXPECT_THROW(parse_encoder_kind("caser"), UsageError);
}

TEST(ModelConfigTest, ConvChannelsCoverDim) {
  ModelConfig c;
  c.embedding_dim = 400;
  EXPECT_EQ(c.conv_channels(), 134u);
  EXPECT_GE(c.conv_channels() * c.conv_filter_sizes.size(), c.embedding_dim);
}

TEST(Model, OutputsAreUnitNorm) {
  std::mt19937_64 rng(2);
  for (auto kind : kAllEncoders) {
    auto m = Model::create(small_config(kind), 11);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<ItemIndex> prefix(1 + rng() % 6);
      for (auto& i : prefix) i = static_cast<ItemIndex>(rng() % 12);
      EXPECT_NEAR(norm(encode(m, prefix)), 1.0, 1e-5) << to_string(kind);
    }
    auto tape = ad::Tape::inference();
    EXPECT_NEAR(norm(m.encode_item(tape, 3).values()), 1.0, 1e-5);
  }
}

TEST(Model, EncodeItemDeterministicAndMatchesBatch) {
  auto m = Model::create(small_config(EncoderKind::MaxPool), 4);
  auto tape = ad::Tape::inference();
  auto a = m.encode_item(tape, 5), b = m.encode_item(tape, 5);
  std::vector<ItemIndex> items{2, 5};
  auto batch = m.encode_items(tape, items);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(a.values()[c], b.values()[c]);
    EXPECT_EQ(a.values()[c], batch.values()[8 + c]);
  }
  EXPECT_THROW(m.encode_item(tape, 12), std::out_of_range);
}

TEST(Model, EmptyAndOverlongPrefixRejected) {
  auto m = Model::create(small_config(EncoderKind::MaxPool), 1);
  EXPECT_THROW(encode(m, {}), std::invalid_argument);
  EXPECT_THROW(encode(m, {1, 2, 3, 4, 5, 6, 7}), std::invalid_argument);
}

TEST(Model, MaxPoolSingleEventIsDenseOfEmbedding) {
  auto cfg = small_config(EncoderKind::MaxPool);
  auto m = Model::create(cfg, 6);
  auto tape = ad::Tape::inference();
  const auto& emb = m.params().at("item_embedding");
  const auto& w = m.params().at("session_ff.0.weight");
  const auto& b = m.params().at("session_ff.0.bias");
  std::vector<double> h(8);
  for (std::size_t c = 0; c < 8; ++c) {
    double acc = b.values()[c];
    for (std::size_t k = 0; k < 8; ++k) acc += static_cast<double>(emb.values()[4 * 8 + k]) * w.values()[k * 8 + c];
    h[c] = std::tanh(acc);
  }
  double n = 0;
  for (double x : h) n += x * x;
  n = std::sqrt(n);
  auto got = encode(m, {4});
  for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(got[c], h[c] / n, 1e-5);
}

TEST(Model, MaxPoolIsOrderInvariant) {
  auto m = Model::create(small_config(EncoderKind::MaxPool), 8);
  EXPECT_EQ(encode(m, {1, 2, 3}), encode(m, {3, 1, 2}));
}

TEST(Model, GruIsOrderSensitive) {
  std::mt19937_64 rng(13);
  int differ = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto m = Model::create(small_config(EncoderKind::Gru), rng());
    std::vector<ItemIndex> p{static_cast<ItemIndex>(rng() % 4), static_cast<ItemIndex>(4 + rng() % 4),
                             static_cast<ItemIndex>(8 + rng() % 4)};
    auto a = encode(m, p);
    std::swap(p[0], p[2]);
    auto b = encode(m, p);
    double diff = 0;
    for (std::size_t c = 0; c < a.size(); ++c) diff = std::max(diff, std::abs(static_cast<double>(a[c] - b[c])));
    differ += diff > 1e-6;
  }
  EXPECT_GE(differ, 95);
}

TEST(Model, TextCnnIndependentOfPaddingAmount) {
  // The same prefix under a longer max length means more padding rows.
  auto cfg = small_config(EncoderKind::TextCnn);
  auto small = Model::create(cfg, 21);
  auto longer = cfg;
  longer.max_session_length = 12;
  Model big(longer, small.params().clone());
  // Equal up to float rounding: the matrix products run at different sizes.
  for (std::vector<ItemIndex> p : {std::vector<ItemIndex>{3}, {1, 2}, {5, 6, 7, 8, 9}}) {
    auto a = encode(small, p), b = encode(big, p);
    for (std::size_t c = 0; c < a.size(); ++c) EXPECT_NEAR(a[c], b[c], 1e-6);
  }
}

TEST(Model, CommonEmbeddingHasFewerParameters) {
  for (auto kind : kAllEncoders) {
    auto shared = Model::create(small_config(kind, true), 1);
    auto separate = Model::create(small_config(kind, false), 1);
    EXPECT_LT(shared.params().parameter_count(), separate.params().parameter_count());
    EXPECT_EQ(shared.params().size() + 1, separate.params().size());
  }
}

TEST(Model, CommonEmbeddingSharesTheTable) {
  auto m = Model::create(small_config(EncoderKind::MaxPool, true), 3);
  std::vector<ItemIndex> prefix{2, 7};
  ad::Tape tape;
  auto s = m.encode_session(tape, prefix);
  auto loss = ad::sum(tape, s);
  tape.backward(loss);
  const auto& emb = m.params().at("item_embedding");
  double row_grad = 0;
  for (std::size_t c = 0; c < 8; ++c) row_grad += std::abs(emb.grad()[2 * 8 + c]);
  EXPECT_GT(row_grad, 0.0);
}

TEST(Model, ScoreMatchesDotProduct) {
  auto m = Model::create(small_config(EncoderKind::AvgPool), 17);
  std::vector<ItemIndex> prefix{1, 5, 9};
  auto s = encode(m, prefix);
  auto tape = ad::Tape::inference();
  std::vector<std::pair<double, ItemIndex>> by_dot, by_score;
  for (ItemIndex i = 0; i < 10; ++i) {
    auto w = m.encode_item(tape, i);
    double dot = 0;
    for (std::size_t c = 0; c < 8; ++c) dot += static_cast<double>(s[c]) * w.values()[c];
    by_dot.emplace_back(-dot, i);
    by_score.emplace_back(-static_cast<double>(m.score(prefix, i)), i);
    EXPECT_NEAR(m.score(prefix, i), dot, 1e-5);
    EXPECT_LE(std::abs(m.score(prefix, i)), 1.0 + 1e-5);
  }
  std::sort(by_dot.begin(), by_dot.end());
  std::sort(by_score.begin(), by_score.end());
  for (std::size_t k = 0; k < by_dot.size(); ++k) EXPECT_EQ(by_dot[k].second, by_score[k].second);
}

TEST(Model, CreationIsSeeded) {
  auto a = Model::create(small_config(EncoderKind::Gru), 99);
  auto b = Model::create(small_config(EncoderKind::Gru), 99);
  auto c = Model::create(small_config(EncoderKind::Gru), 100);
  auto same = [](const Model& x, const Model& y) {
    for (std::size_t i = 0; i < x.params().size(); ++i) {
      auto u = x.params().entries()[i].tensor.values();
      auto v = y.params().entries()[i].tensor.values();
      if (!std::equal(u.begin(), u.end(), v.begin(), v.end())) return false;
    }
    return true;
  };
  EXPECT_TRUE(same(a, b));
  EXPECT_FALSE(same(a, c));
}

TEST(Model, RejectsMismatchedParameters) {
  auto cfg = small_config(EncoderKind::MaxPool);
  auto m = Model::create(cfg, 1);
  auto other = cfg;
  other.embedding_dim = 6;
  EXPECT_THROW(Model(other, m.params().clone()), DataError);
}
