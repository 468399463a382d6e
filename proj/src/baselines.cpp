#include "sml/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace sml {

namespace {

bool in_vocab(ItemIndex i, std::size_t v) { return i >= 0 && static_cast<std::size_t>(i) < v; }

// Sorts (item, score) by score descending, then ascending item.
template <typename Score>
std::vector<ItemIndex> rank_scores(std::vector<std::pair<ItemIndex, Score>> scored, std::size_t n) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<ItemIndex> out;
  for (std::size_t i = 0; i < scored.size() && out.size() < n; ++i) out.push_back(scored[i].first);
  return out;
}

}  // namespace

PopRecommender::PopRecommender(std::span<const Session> train, std::size_t vocab_size) : counts_(vocab_size, 0) {
  for (const auto& s : train)
    for (auto i : s.items)
      if (in_vocab(i, vocab_size)) ++counts_[static_cast<std::size_t>(i)];
  ranking_.resize(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) ranking_[i] = static_cast<ItemIndex>(i);
  std::stable_sort(ranking_.begin(), ranking_.end(), [this](ItemIndex a, ItemIndex b) {
    return counts_[static_cast<std::size_t>(a)] > counts_[static_cast<std::size_t>(b)];
  });
}

std::vector<ItemIndex> PopRecommender::recommend(std::span<const ItemIndex>, std::size_t n) const {
  std::vector<ItemIndex> out;
  backfill(out, n);
  return out;
}

void PopRecommender::backfill(std::vector<ItemIndex>& list, std::size_t n) const {
  if (list.size() >= n) return;
  std::unordered_set<ItemIndex> present(list.begin(), list.end());
  for (auto i : ranking_) {
    if (list.size() >= n) break;
    if (!present.contains(i)) list.push_back(i);
  }
}

SpopRecommender::SpopRecommender(std::span<const Session> train, std::size_t vocab_size) : pop_(train, vocab_size) {}

std::vector<ItemIndex> SpopRecommender::recommend(std::span<const ItemIndex> prefix, std::size_t n) const {
  struct Seen {
    ItemIndex item;
    std::size_t count;
    std::size_t last;
  };
  std::vector<Seen> seen;
  for (std::size_t p = 0; p < prefix.size(); ++p) {
    if (!in_vocab(prefix[p], pop_.counts().size())) continue;
    auto it = std::find_if(seen.begin(), seen.end(), [&](const Seen& s) { return s.item == prefix[p]; });
    if (it == seen.end())
      seen.push_back({prefix[p], 1, p});
    else {
      ++it->count;
      it->last = p;
    }
  }
  std::sort(seen.begin(), seen.end(),
            [](const Seen& a, const Seen& b) { return a.count != b.count ? a.count > b.count : a.last > b.last; });
  std::vector<ItemIndex> out;
  for (const auto& s : seen) {
    if (out.size() >= n) break;
    out.push_back(s.item);
  }
  pop_.backfill(out, n);
  return out;
}

Markov1Recommender::Markov1Recommender(std::span<const Session> train, std::size_t vocab_size)
    : pop_(train, vocab_size), next_(vocab_size) {
  for (const auto& s : train)
    for (std::size_t p = 0; p + 1 < s.items.size(); ++p)
      if (in_vocab(s.items[p], vocab_size) && in_vocab(s.items[p + 1], vocab_size))
        ++next_[static_cast<std::size_t>(s.items[p])][s.items[p + 1]];
}

std::size_t Markov1Recommender::transitions(ItemIndex from, ItemIndex to) const {
  if (!in_vocab(from, next_.size())) return 0;
  const auto& row = next_[static_cast<std::size_t>(from)];
  auto it = row.find(to);
  return it == row.end() ? 0 : it->second;
}

std::vector<ItemIndex> Markov1Recommender::recommend(std::span<const ItemIndex> prefix, std::size_t n) const {
  std::vector<ItemIndex> out;
  if (!prefix.empty() && in_vocab(prefix.back(), next_.size())) {
    const auto& row = next_[static_cast<std::size_t>(prefix.back())];
    out = rank_scores(std::vector<std::pair<ItemIndex, std::size_t>>(row.begin(), row.end()), n);
  }
  pop_.backfill(out, n);
  return out;
}

double linear_decay(std::size_t pos, std::size_t length) {
  return static_cast<double>(pos) / static_cast<double>(length);
}

double constant_weight(std::size_t, std::size_t) { return 1.0; }

KnnRecommender::KnnRecommender(std::span<const Session> train, std::size_t vocab_size, KnnConfig config,
                               PositionWeight weight, std::string name)
    : config_(config),
      weight_(std::move(weight)),
      name_(std::move(name)),
      pop_(train, vocab_size),
      sessions_with_(vocab_size) {
  if (config_.k == 0) throw std::invalid_argument("KNN: k must be positive");
  for (const auto& s : train) {
    std::vector<ItemIndex> items;
    for (auto i : s.items)
      if (in_vocab(i, vocab_size)) items.push_back(i);
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    if (items.empty()) continue;
    for (auto i : items) sessions_with_[static_cast<std::size_t>(i)].push_back(session_items_.size());
    session_items_.push_back(std::move(items));
  }
}

std::unordered_map<ItemIndex, double> KnnRecommender::scores(std::span<const ItemIndex> prefix) const {
  // Query weights: each distinct item at its most recent position.
  std::unordered_map<ItemIndex, double> query;
  for (std::size_t p = 0; p < prefix.size(); ++p)
    if (in_vocab(prefix[p], sessions_with_.size())) query[prefix[p]] = weight_(p + 1, prefix.size());
  double query_norm = 0;
  for (const auto& [item, w] : query) query_norm += w * w;
  query_norm = std::sqrt(query_norm);
  if (query.empty() || query_norm == 0) return {};

  std::unordered_map<std::size_t, double> dot;
  for (const auto& [item, w] : query)
    for (auto s : sessions_with_[static_cast<std::size_t>(item)]) dot[s] += w;
  std::vector<std::pair<std::size_t, double>> neighbours;
  for (const auto& [s, d] : dot) {
    const double sim = d / (query_norm * std::sqrt(static_cast<double>(session_items_[s].size())));
    if (sim > 0) neighbours.emplace_back(s, sim);
  }
  std::sort(neighbours.begin(), neighbours.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (neighbours.size() > config_.k) neighbours.resize(config_.k);

  std::unordered_map<ItemIndex, double> out;
  for (const auto& [s, sim] : neighbours)
    for (auto item : session_items_[s]) out[item] += sim;
  if (!config_.include_prefix_items)
    for (const auto& [item, w] : query) out.erase(item);
  return out;
}

std::vector<ItemIndex> KnnRecommender::recommend(std::span<const ItemIndex> prefix, std::size_t n) const {
  auto s = scores(prefix);
  auto out = rank_scores(std::vector<std::pair<ItemIndex, double>>(s.begin(), s.end()), n);
  if (config_.include_prefix_items) {
    pop_.backfill(out, n);
  } else {
    std::unordered_set<ItemIndex> blocked(out.begin(), out.end());
    blocked.insert(prefix.begin(), prefix.end());
    for (auto i : pop_.ranking()) {
      if (out.size() >= n) break;
      if (!blocked.contains(i)) out.push_back(i);
    }
  }
  return out;
}

KnnRecommender make_sknn(std::span<const Session> train, std::size_t vocab_size, KnnConfig config) {
  return KnnRecommender(train, vocab_size, config, constant_weight, "SKNN");
}

KnnRecommender make_vsknn(std::span<const Session> train, std::size_t vocab_size, KnnConfig config) {
  return KnnRecommender(train, vocab_size, config, linear_decay, "VSKNN");
}

}  // namespace sml
