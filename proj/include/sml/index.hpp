#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sml/data.hpp"
#include "sml/encoders.hpp"
#include "sml/recommender.hpp"

namespace sml {

struct ScoredItem {
  ItemIndex item;
  double score;

  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

/// Dense V x d matrix of unit-norm item encodings; row i is item i.
class EmbeddingIndex {
 public:
  /// Encodes every vocab item with `model` and normalizes each row.
  static EmbeddingIndex build(const Model& model);

  /// Takes row-major rows and normalizes them.
  EmbeddingIndex(std::vector<float> rows, std::size_t dim);

  std::size_t size() const { return dim_ == 0 ? 0 : rows_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> row(ItemIndex item) const;
  std::span<const float> matrix() const { return rows_; }

  /// Exact retrieval: scores q . row for every row, drops excluded items and
  /// returns the n best, ties broken by ascending index. Throws
  /// invalid_argument for n <= 0 or a query of the wrong width.
  std::vector<ScoredItem> topn(std::span<const float> query, int n,
                               const std::unordered_set<ItemIndex>* exclude = nullptr) const;

 private:
  std::vector<float> rows_;
  std::size_t dim_ = 0;
};

/// Encodes the session prefix and normalizes it so that dot products with
/// the index rows are cosine similarities.
std::vector<float> session_query(const Model& model, std::span<const ItemIndex> prefix);

/// Serves a trained model. Prefixes longer than the model's max session
/// length are cut to their most recent events.
class SmlRecommender : public Recommender {
 public:
  SmlRecommender(const Model& model, std::string name = "SML");

  std::vector<ItemIndex> recommend(std::span<const ItemIndex> prefix, std::size_t n) const override;
  std::vector<ScoredItem> recommend_scored(std::span<const ItemIndex> prefix, std::size_t n) const;
  std::string name() const override { return name_; }
  const EmbeddingIndex& index() const { return index_; }

 private:
  Model model_;
  EmbeddingIndex index_;
  std::string name_;
};

/// Everything persisted in a model file.
struct ModelArtifact {
  Model model;
  ItemVocab vocab;
  std::string name;  // e.g. SML-MaxPool-Triplet
};

// Model file layout (all integers little-endian):
//   "SMLMODEL"  u32 version
//   u32 length + config text (key=value lines)
//   u32 vocab size, then per item: u32 length + id bytes, u64 count
//   u32 tensor count, then per tensor: u32 length + name, u32 rank,
//   u64 extent per dimension, IEEE-754 float32 values
inline constexpr std::string_view kModelMagic = "SMLMODEL";
inline constexpr std::uint32_t kModelVersion = 1;

std::string serialize_model(const Model& model, const ItemVocab& vocab, std::string_view name);
/// Throws DataError on bad magic, unknown version, malformed config, shape
/// mismatch or truncation.
ModelArtifact deserialize_model(std::string_view bytes);

void save_model(const std::filesystem::path& path, const Model& model, const ItemVocab& vocab,
                std::string_view name);
ModelArtifact load_model(const std::filesystem::path& path);

}  // namespace sml
