#include "sml/sampling.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include "sml/error.hpp"
#include "sml/index.hpp"

namespace sml {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void SamplerConfig::validate() const {
  if (samples_per_session == 0) throw UsageError("samples_per_session must be at least 1");
  if (kind == SamplerKind::SlidingWindow && window_size == 0) throw UsageError("window_size must be at least 1");
  if (knn_augment && knn_k == 0) throw UsageError("knn_k must be at least 1");
}

Rng session_rng(std::uint64_t seed, std::size_t session_index, std::size_t epoch) {
  std::uint64_t s = splitmix(seed);
  s = splitmix(s ^ static_cast<std::uint64_t>(epoch));
  s = splitmix(s ^ static_cast<std::uint64_t>(session_index));
  return Rng(s);
}

SplitResult split_session(std::span<const ItemIndex> items, std::size_t samples_per_session, Rng& rng) {
  if (items.size() < 2) throw std::invalid_argument("split_session: session needs at least 2 events");
  std::uniform_int_distribution<std::size_t> pick(1, items.size() - 1);
  const std::size_t split = pick(rng);
  const std::size_t end = std::min(items.size(), split + samples_per_session);
  return {{items.begin(), items.begin() + static_cast<std::ptrdiff_t>(split)},
          {items.begin() + static_cast<std::ptrdiff_t>(split), items.begin() + static_cast<std::ptrdiff_t>(end)}};
}

std::vector<ItemIndex> sample_negatives(std::span<const ItemIndex> excluded, std::size_t vocab_size,
                                        std::size_t count, Rng& rng) {
  std::unordered_set<ItemIndex> banned;
  for (auto i : excluded)
    if (i >= 0 && static_cast<std::size_t>(i) < vocab_size) banned.insert(i);
  if (vocab_size - banned.size() < count)
    throw std::invalid_argument("sample_negatives: only " + std::to_string(vocab_size - banned.size()) +
                                " eligible items for " + std::to_string(count) + " negatives");
  std::vector<ItemIndex> out;
  out.reserve(count);
  // Rejection sampling while the eligible pool is large; an explicit pool
  // once it gets crowded.
  if (banned.size() + count <= vocab_size / 2) {
    std::uniform_int_distribution<ItemIndex> pick(0, static_cast<ItemIndex>(vocab_size - 1));
    while (out.size() < count) {
      const auto i = pick(rng);
      if (banned.insert(i).second) out.push_back(i);
    }
    return out;
  }
  std::vector<ItemIndex> pool;
  for (std::size_t i = 0; i < vocab_size; ++i)
    if (!banned.contains(static_cast<ItemIndex>(i))) pool.push_back(static_cast<ItemIndex>(i));
  for (std::size_t j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
    std::swap(pool[j], pool[pick(rng)]);
    out.push_back(pool[j]);
  }
  return out;
}

namespace {

// In a tiny vocabulary there may be fewer eligible negatives than positives;
// the tail positives are then dropped so the example stays balanced.
std::vector<ItemIndex> negatives_for(TrainingExample& ex, const SamplerConfig& config, std::size_t vocab_size,
                                     Rng& rng) {
  while (ex.positives.size() > 1) {
    std::unordered_set<ItemIndex> banned(ex.positives.begin(), ex.positives.end());
    if (config.exclude_prefix_from_negatives) banned.insert(ex.prefix.begin(), ex.prefix.end());
    if (banned.size() + ex.positives.size() <= vocab_size) break;
    ex.positives.pop_back();
  }
  std::vector<ItemIndex> excluded(ex.positives);
  if (config.exclude_prefix_from_negatives) excluded.insert(excluded.end(), ex.prefix.begin(), ex.prefix.end());
  return sample_negatives(excluded, vocab_size, ex.positives.size(), rng);
}

}  // namespace

std::vector<TrainingExample> sliding_window_examples(std::span<const ItemIndex> items, const SamplerConfig& config,
                                                     std::size_t vocab_size, Rng& rng) {
  if (config.window_size == 0) throw std::invalid_argument("sliding_window_examples: window_size must be >= 1");
  std::vector<TrainingExample> out;
  for (std::size_t p = 1; p < items.size(); ++p) {
    TrainingExample ex;
    const std::size_t begin = p > config.window_size ? p - config.window_size : 0;
    ex.prefix.assign(items.begin() + static_cast<std::ptrdiff_t>(begin), items.begin() + static_cast<std::ptrdiff_t>(p));
    const std::size_t end = std::min(items.size(), p + config.samples_per_session);
    ex.positives.assign(items.begin() + static_cast<std::ptrdiff_t>(p), items.begin() + static_cast<std::ptrdiff_t>(end));
    ex.negatives = negatives_for(ex, config, vocab_size, rng);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<ItemIndex> knn_augment_positives(std::span<const ItemIndex> prefix,
                                             std::span<const ItemIndex> positives, const EmbeddingIndex& items,
                                             std::size_t k, std::size_t needed) {
  std::vector<ItemIndex> out(positives.begin(), positives.end());
  if (out.size() >= needed || positives.empty()) return out;
  std::unordered_set<ItemIndex> excluded(prefix.begin(), prefix.end());
  excluded.insert(positives.begin(), positives.end());

  // Best similarity of each candidate to any positive.
  std::map<ItemIndex, double> best;
  for (auto p : positives) {
    if (p < 0 || static_cast<std::size_t>(p) >= items.size()) continue;
    for (const auto& s : items.topn(items.row(p), static_cast<int>(k), &excluded)) {
      auto [it, fresh] = best.emplace(s.item, s.score);
      if (!fresh) it->second = std::max(it->second, s.score);
    }
  }
  std::vector<ScoredItem> ranked;
  for (auto [item, score] : best) ranked.push_back({item, score});
  std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredItem& a, const ScoredItem& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
  });
  for (const auto& s : ranked) {
    if (out.size() >= needed) break;
    out.push_back(s.item);
  }
  return out;
}

std::vector<TrainingExample> build_epoch(std::span<const Session> sessions, std::size_t vocab_size,
                                         const SamplerConfig& config, std::size_t epoch, const Model* model) {
  config.validate();
  if (config.knn_augment && model == nullptr)
    throw std::invalid_argument("build_epoch: KNN augmentation needs a model");
  std::optional<EmbeddingIndex> index;
  if (config.knn_augment) index.emplace(EmbeddingIndex::build(*model));

  std::vector<TrainingExample> out;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    const auto& items = sessions[s].items;
    if (items.size() < 2) continue;
    auto rng = session_rng(config.rng_seed, s, epoch);
    if (config.kind == SamplerKind::SlidingWindow) {
      for (auto& ex : sliding_window_examples(items, config, vocab_size, rng)) out.push_back(std::move(ex));
      continue;
    }
    auto [prefix, positives] = split_session(items, config.samples_per_session, rng);
    TrainingExample ex{std::move(prefix), std::move(positives), {}};
    if (index)
      ex.positives = knn_augment_positives(ex.prefix, ex.positives, *index, config.knn_k, config.samples_per_session);
    ex.negatives = negatives_for(ex, config, vocab_size, rng);
    out.push_back(std::move(ex));
  }
  auto shuffle_rng = session_rng(config.rng_seed ^ 0x5eedULL, sessions.size(), epoch);
  std::shuffle(out.begin(), out.end(), shuffle_rng);
  return out;
}

}  // namespace sml
