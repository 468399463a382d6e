#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "sml/error.hpp"
#include "sml/index.hpp"
#include "sml/sampling.hpp"
#include "support.hpp"

using namespace sml;
using namespace sml::testing;

namespace {

std::vector<Session> synthetic_sessions(std::size_t n, std::uint64_t seed) {
  auto ds = preprocess(cyclic_corpus(n, 40, seed).events);
  return ds.sessions;
}

void expect_valid(const TrainingExample& ex) {
  ASSERT_FALSE(ex.prefix.empty());
  ASSERT_FALSE(ex.positives.empty());
  ASSERT_EQ(ex.positives.size(), ex.negatives.size());
  std::set<ItemIndex> pos(ex.positives.begin(), ex.positives.end());
  for (auto n : ex.negatives) EXPECT_FALSE(pos.contains(n));
}

}  // namespace

TEST(Split, TwoEventSession) {
  Rng rng(1);
  std::vector<ItemIndex> s{4, 9};
  for (int i = 0; i < 20; ++i) {
    auto r = split_session(s, 8, rng);
    EXPECT_EQ(r.prefix, std::vector<ItemIndex>{4});
    EXPECT_EQ(r.positives, std::vector<ItemIndex>{9});
  }
  std::vector<ItemIndex> one{1};
  EXPECT_THROW(split_session(one, 8, rng), std::invalid_argument);
}

TEST(Split, TruncationArithmetic) {
  std::vector<ItemIndex> s(10);
  std::iota(s.begin(), s.end(), 0);
  Rng rng(2);
  bool seen = false;
  for (int i = 0; i < 500; ++i) {
    auto r = split_session(s, 8, rng);
    EXPECT_EQ(r.positives.size(), std::min<std::size_t>(8, 10 - r.prefix.size()));
    EXPECT_EQ(r.positives.front(), static_cast<ItemIndex>(r.prefix.size()));
    if (r.prefix.size() == 3) {
      EXPECT_EQ(r.positives.size(), 7u);
      seen = true;
    }
  }
  EXPECT_TRUE(seen);
}

TEST(Split, SplitPointIsUniform) {
  // Chi-square against the uniform distribution on the 4 split points.
  std::vector<ItemIndex> s{0, 1, 2, 3, 4};
  Rng rng(3);
  std::map<std::size_t, double> freq;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++freq[split_session(s, 8, rng).prefix.size()];
  ASSERT_EQ(freq.size(), 4u);
  double chi2 = 0;
  for (auto [k, f] : freq) chi2 += (f - n / 4.0) * (f - n / 4.0) / (n / 4.0);
  EXPECT_LT(chi2, 16.27);  // p = 0.001 with 3 degrees of freedom
}

TEST(Negatives, Forced) {
  Rng rng(4);
  std::vector<ItemIndex> pos{0, 1, 2, 3};
  EXPECT_EQ(sample_negatives(pos, 5, 1, rng), std::vector<ItemIndex>{4});
  EXPECT_THROW(sample_negatives(pos, 5, 2, rng), std::invalid_argument);
}

TEST(Negatives, ExcludePositivesAndAreDistinct) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<ItemIndex> pos{static_cast<ItemIndex>(rng() % 30), static_cast<ItemIndex>(rng() % 30)};
    auto neg = sample_negatives(pos, 30, 5, rng);
    std::set<ItemIndex> uniq(neg.begin(), neg.end());
    EXPECT_EQ(uniq.size(), 5u);
    for (auto n : neg) {
      EXPECT_NE(n, pos[0]);
      EXPECT_NE(n, pos[1]);
      EXPECT_GE(n, 0);
      EXPECT_LT(n, 30);
    }
  }
}

TEST(Negatives, UniformOverEligible) {
  Rng rng(6);
  std::vector<ItemIndex> pos{0, 3};
  std::map<ItemIndex, double> freq;
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++freq[sample_negatives(pos, 10, 1, rng)[0]];
  ASSERT_EQ(freq.size(), 8u);
  const double p = 1.0 / 8, sigma = std::sqrt(n * p * (1 - p));
  for (auto [item, f] : freq) EXPECT_LT(std::abs(f - n * p), 3 * sigma) << item;
  // Crowded pools go through the explicit-pool path; it must be uniform too.
  std::vector<ItemIndex> many{0, 1, 2, 3, 4, 5, 6};
  std::map<ItemIndex, double> crowded;
  for (int i = 0; i < n; ++i) ++crowded[sample_negatives(many, 10, 1, rng)[0]];
  ASSERT_EQ(crowded.size(), 3u);
  const double q = 1.0 / 3, s2 = std::sqrt(n * q * (1 - q));
  for (auto [item, f] : crowded) EXPECT_LT(std::abs(f - n * q), 3 * s2) << item;
}

TEST(SlidingWindow, ThreeEvents) {
  SamplerConfig cfg;
  cfg.kind = SamplerKind::SlidingWindow;
  cfg.window_size = 2;
  cfg.samples_per_session = 1;
  Rng rng(7);
  std::vector<ItemIndex> s{0, 1, 2};
  auto ex = sliding_window_examples(s, cfg, 10, rng);
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].prefix, std::vector<ItemIndex>{0});
  EXPECT_EQ(ex[0].positives, std::vector<ItemIndex>{1});
  EXPECT_EQ(ex[1].prefix, (std::vector<ItemIndex>{0, 1}));
  EXPECT_EQ(ex[1].positives, std::vector<ItemIndex>{2});
  for (const auto& e : ex) expect_valid(e);
}

TEST(SlidingWindow, CountMatchesEnumeration) {
  SamplerConfig cfg;
  cfg.kind = SamplerKind::SlidingWindow;
  cfg.window_size = 4;
  cfg.samples_per_session = 3;
  Rng rng(8);
  std::vector<ItemIndex> s(20);
  std::iota(s.begin(), s.end(), 0);
  auto ex = sliding_window_examples(s, cfg, 40, rng);
  // One example per end position 1..19.
  std::size_t expected = 0;
  for (std::size_t p = 1; p < s.size(); ++p) ++expected;
  ASSERT_EQ(ex.size(), expected);
  for (std::size_t k = 0; k < ex.size(); ++k) {
    const std::size_t p = k + 1;
    EXPECT_EQ(ex[k].prefix.size(), std::min<std::size_t>(p, 4));
    EXPECT_EQ(ex[k].prefix.back(), static_cast<ItemIndex>(p - 1));
    EXPECT_EQ(ex[k].positives.size(), std::min<std::size_t>(3, 20 - p));
    expect_valid(ex[k]);
  }
}

TEST(Knn, NoOpWhenEnoughPositives) {
  EmbeddingIndex idx({1, 0, 0, 1, 1, 1}, 2);
  std::vector<ItemIndex> prefix{0}, pos{1, 2};
  EXPECT_EQ(knn_augment_positives(prefix, pos, idx, 5, 2), pos);
}

TEST(Knn, PicksTheNearerItem) {
  // Item 0 at angle 0, item 1 at 30 degrees, item 2 at 100 degrees.
  auto at = [](double deg) {
    const double r = deg * M_PI / 180;
    return std::vector<float>{static_cast<float>(std::cos(r)), static_cast<float>(std::sin(r))};
  };
  std::vector<float> rows;
  for (double deg : {0.0, 30.0, 100.0}) {
    auto v = at(deg);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  EmbeddingIndex idx(rows, 2);
  std::vector<ItemIndex> prefix{}, pos{0};
  EXPECT_EQ(knn_augment_positives(prefix, pos, idx, 5, 2), (std::vector<ItemIndex>{0, 1}));
  std::vector<ItemIndex> prefix1{1};
  EXPECT_EQ(knn_augment_positives(prefix1, pos, idx, 5, 2), (std::vector<ItemIndex>{0, 2}));
}

TEST(Knn, NeverDuplicates) {
  std::mt19937_64 rng(9);
  std::vector<float> rows(30 * 4);
  for (auto& x : rows) x = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
  EmbeddingIndex idx(rows, 4);
  for (int t = 0; t < 100; ++t) {
    std::vector<ItemIndex> prefix{static_cast<ItemIndex>(rng() % 30)}, pos{static_cast<ItemIndex>(rng() % 30)};
    auto out = knn_augment_positives(prefix, pos, idx, 3, 6);
    std::set<ItemIndex> uniq(out.begin(), out.end());
    EXPECT_EQ(uniq.size(), out.size());
    for (std::size_t j = 1; j < out.size(); ++j) EXPECT_NE(out[j], prefix[0]);
  }
}

TEST(Epoch, DeterministicPerEpoch) {
  auto sessions = synthetic_sessions(100, 1);
  SamplerConfig cfg;
  auto a = build_epoch(sessions, 40, cfg, 3);
  auto b = build_epoch(sessions, 40, cfg, 3);
  auto c = build_epoch(sessions, 40, cfg, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Epoch, OneValidExamplePerSession) {
  auto sessions = synthetic_sessions(100, 2);
  SamplerConfig cfg;
  auto ex = build_epoch(sessions, 40, cfg, 1);
  EXPECT_EQ(ex.size(), sessions.size());
  for (const auto& e : ex) expect_valid(e);
}

TEST(Epoch, SlidingWindowOnePerPosition) {
  auto sessions = synthetic_sessions(50, 3);
  SamplerConfig cfg;
  cfg.kind = SamplerKind::SlidingWindow;
  std::size_t expected = 0;
  for (const auto& s : sessions) expected += s.size() - 1;
  auto ex = build_epoch(sessions, 40, cfg, 1);
  EXPECT_EQ(ex.size(), expected);
  for (const auto& e : ex) expect_valid(e);
}

TEST(Epoch, PrefixExclusionFlag) {
  auto sessions = synthetic_sessions(60, 4);
  SamplerConfig cfg;
  cfg.exclude_prefix_from_negatives = true;
  for (const auto& e : build_epoch(sessions, 40, cfg, 2)) {
    std::set<ItemIndex> prefix(e.prefix.begin(), e.prefix.end());
    for (auto n : e.negatives) EXPECT_FALSE(prefix.contains(n));
  }
}

TEST(Epoch, KnnAugmentationNeedsModelAndTopsUp) {
  auto sessions = synthetic_sessions(40, 5);
  SamplerConfig cfg;
  cfg.knn_augment = true;
  cfg.samples_per_session = 4;
  EXPECT_THROW(build_epoch(sessions, 40, cfg, 1), std::invalid_argument);
  ModelConfig mc;
  mc.embedding_dim = 6;
  mc.vocab_size = 40;
  auto model = Model::create(mc, 1);
  for (const auto& e : build_epoch(sessions, 40, cfg, 1, &model)) {
    expect_valid(e);
    EXPECT_EQ(e.positives.size(), 4u);
  }
}

TEST(SamplerConfigTest, Validation) {
  SamplerConfig cfg;
  cfg.samples_per_session = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(Epoch, TinyVocabularyTrimsPositives) {
  // Vocab 6 and up to 8 positives: never more pairs than eligible negatives.
  Session s;
  s.items = {0, 1, 2, 3, 4, 5, 0, 1, 2, 3};
  s.timestamps.resize(s.items.size());
  std::vector<Session> sessions(20, s);
  SamplerConfig cfg;
  for (std::size_t epoch = 1; epoch <= 5; ++epoch)
    for (const auto& e : build_epoch(sessions, 6, cfg, epoch)) {
      expect_valid(e);
      std::set<ItemIndex> pos(e.positives.begin(), e.positives.end());
      EXPECT_LE(pos.size() + e.positives.size(), 6u);
    }
}
