#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sml/data.hpp"
#include "sml/recommender.hpp"

namespace sml {

/// Global popularity over training events. Ties: ascending index.
class PopRecommender : public Recommender {
 public:
  PopRecommender(std::span<const Session> train, std::size_t vocab_size);

  std::vector<ItemIndex> recommend(std::span<const ItemIndex> prefix, std::size_t n) const override;
  std::string name() const override { return "POP"; }

  const std::vector<std::size_t>& counts() const { return counts_; }
  const std::vector<ItemIndex>& ranking() const { return ranking_; }
  /// Appends popular items not yet in `list` until it holds n items.
  void backfill(std::vector<ItemIndex>& list, std::size_t n) const;

 private:
  std::vector<std::size_t> counts_;
  std::vector<ItemIndex> ranking_;
};

/// Items of the current session by in-session count (ties: most recent
/// occurrence first), then global popularity.
class SpopRecommender : public Recommender {
 public:
  SpopRecommender(std::span<const Session> train, std::size_t vocab_size);

  std::vector<ItemIndex> recommend(std::span<const ItemIndex> prefix, std::size_t n) const override;
  std::string name() const override { return "SPOP"; }

 private:
  PopRecommender pop_;
};

/// First-order transition counts c(a -> b) from consecutive train events.
class Markov1Recommender : public Recommender {
 public:
  Markov1Recommender(std::span<const Session> train, std::size_t vocab_size);

  std::vector<ItemIndex> recommend(std::span<const ItemIndex> prefix, std::size_t n) const override;
  std::string name() const override { return "MARKOV1"; }

  std::size_t transitions(ItemIndex from, ItemIndex to) const;

 private:
  PopRecommender pop_;
  std::vector<std::unordered_map<ItemIndex, std::size_t>> next_;
};

/// Weight of prefix position `pos` (1-based) in a prefix of `length` events.
using PositionWeight = std::function<double(std::size_t pos, std::size_t length)>;

/// Linear decay pos / length: the most recent event weighs 1.
double linear_decay(std::size_t pos, std::size_t length);
double constant_weight(std::size_t pos, std::size_t length);

struct KnnConfig {
  std::size_t k = 100;
  // Whether prefix items may be recommended.
  bool include_prefix_items = true;
};

/// Session KNN over binary item-set vectors. The query vector weighs each
/// distinct prefix item by `weight` at its most recent position; similarity
/// is the weighted dot product divided by both vector norms. Items score the
/// summed similarity of the K nearest sessions containing them. Only
/// sessions sharing an item with the prefix are candidates, which gives the
/// same result as scanning all sessions.
class KnnRecommender : public Recommender {
 public:
  KnnRecommender(std::span<const Session> train, std::size_t vocab_size, KnnConfig config, PositionWeight weight,
                 std::string name);

  std::vector<ItemIndex> recommend(std::span<const ItemIndex> prefix, std::size_t n) const override;
  std::string name() const override { return name_; }

  /// Item scores before ranking, for inspection.
  std::unordered_map<ItemIndex, double> scores(std::span<const ItemIndex> prefix) const;

 private:
  KnnConfig config_;
  PositionWeight weight_;
  std::string name_;
  PopRecommender pop_;
  std::vector<std::vector<ItemIndex>> session_items_;  // distinct items per train session, sorted
  std::vector<std::vector<std::size_t>> sessions_with_;  // inverted index item -> sessions
};

KnnRecommender make_sknn(std::span<const Session> train, std::size_t vocab_size, KnnConfig config = {});
KnnRecommender make_vsknn(std::span<const Session> train, std::size_t vocab_size, KnnConfig config = {});

}  // namespace sml
