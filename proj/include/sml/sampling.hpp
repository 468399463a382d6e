#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sml/data.hpp"
#include "sml/encoders.hpp"

namespace sml {

class EmbeddingIndex;

/// One (prefix, positives, negatives) triple. Positive j is paired with
/// negative j.
struct TrainingExample {
  std::vector<ItemIndex> prefix;
  std::vector<ItemIndex> positives;
  std::vector<ItemIndex> negatives;

  friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

enum class SamplerKind { PosNeg, SlidingWindow };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::PosNeg;
  std::size_t samples_per_session = 8;
  std::size_t window_size = 5;  // sliding window only
  bool knn_augment = false;
  std::size_t knn_k = 10;
  bool exclude_prefix_from_negatives = false;
  std::uint64_t rng_seed = 42;

  /// Throws UsageError.
  void validate() const;
};

using Rng = std::mt19937_64;

/// Independent generator for one (seed, session, epoch) triple.
Rng session_rng(std::uint64_t seed, std::size_t session_index, std::size_t epoch);

struct SplitResult {
  std::vector<ItemIndex> prefix;
  std::vector<ItemIndex> positives;
};

/// Split point uniform in [1, t-1]; positives are the first
/// `samples_per_session` items after it. Throws invalid_argument for
/// sessions shorter than 2.
SplitResult split_session(std::span<const ItemIndex> items, std::size_t samples_per_session, Rng& rng);

/// `count` distinct items drawn uniformly from [0, vocab_size) minus
/// `excluded`. Throws invalid_argument when fewer than `count` are eligible.
std::vector<ItemIndex> sample_negatives(std::span<const ItemIndex> excluded, std::size_t vocab_size,
                                        std::size_t count, Rng& rng);

/// One example per end position p in [1, t-1]: the prefix is the last
/// `window_size` events before p (fewer at the session start) and the
/// positives are the next `samples_per_session` items.
std::vector<TrainingExample> sliding_window_examples(std::span<const ItemIndex> items, const SamplerConfig& config,
                                                     std::size_t vocab_size, Rng& rng);

/// Appends items nearest (cosine) to any current positive until there are
/// `needed` positives. Prefix items and current positives are never added;
/// each positive contributes at most k neighbour candidates.
std::vector<ItemIndex> knn_augment_positives(std::span<const ItemIndex> prefix,
                                             std::span<const ItemIndex> positives, const EmbeddingIndex& items,
                                             std::size_t k, std::size_t needed);

/// All examples for one epoch, shuffled. Pure in (sessions, config, epoch,
/// model). `model` is required iff config.knn_augment.
std::vector<TrainingExample> build_epoch(std::span<const Session> sessions, std::size_t vocab_size,
                                         const SamplerConfig& config, std::size_t epoch,
                                         const Model* model = nullptr);

}  // namespace sml
