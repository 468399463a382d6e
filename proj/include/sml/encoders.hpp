#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sml/autodiff.hpp"
#include "sml/data.hpp"

namespace sml {

enum class EncoderKind { MaxPool, AvgPool, Gru, TextCnn };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view text);

struct ModelConfig {
  std::size_t embedding_dim = 400;
  EncoderKind encoder = EncoderKind::MaxPool;
  bool common_embedding = true;
  bool normalize_outputs = true;
  std::size_t max_session_length = 15;
  std::vector<std::size_t> conv_filter_sizes{1, 3, 5};
  std::size_t vocab_size = 0;
  // Dense tanh layers after the session encoder core.
  std::size_t session_ff_layers = 1;

  /// Throws UsageError on inconsistent settings.
  void validate() const;
  /// Output channels per convolution filter size; their concatenation covers
  /// at least embedding_dim features.
  std::size_t conv_channels() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Names and shapes of every trainable tensor implied by a config, in
/// registration order.
std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const ModelConfig& config);

/// Item encoder and session encoder mapping into one d-dimensional space.
/// Items: embedding row -> dense tanh -> (optional) L2 normalization.
/// Sessions: embedded events -> pooling / GRU / TextCNN core -> dense tanh
/// layers -> (optional) L2 normalization.
template <typename T>
class BasicModel {
 public:
  using Tensor = ad::BasicTensor<T>;
  using Tape = ad::BasicTape<T>;
  using ParamSet = ad::BasicParamSet<T>;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and embeddings, zero biases.
  static BasicModel create(const ModelConfig& config, std::uint64_t seed);

  /// Binds an existing parameter set; shapes must match parameter_layout().
  BasicModel(ModelConfig config, ParamSet params);

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  BasicModel clone() const { return BasicModel(config_, params_.clone()); }
  template <typename U>
  BasicModel<U> cast() const;

  /// Encodes each item; result is [n x d].
  Tensor encode_items(Tape& tape, std::span<const ItemIndex> items) const;
  /// Encodes one item; result is [d].
  Tensor encode_item(Tape& tape, ItemIndex item) const;
  /// Encodes a session prefix of 1..max_session_length events; result is [d].
  Tensor encode_session(Tape& tape, std::span<const ItemIndex> prefix) const;

  /// 1 - cosine distance between the session and item encodings.
  T score(std::span<const ItemIndex> prefix, ItemIndex item) const;

 private:
  void bind();

  ModelConfig config_;
  ParamSet params_;

  Tensor item_embedding_;
  Tensor session_embedding_;  // aliases item_embedding_ with common_embedding
  Tensor item_ff_weight_, item_ff_bias_;
  std::vector<std::pair<Tensor, Tensor>> session_ff_;
  ad::GruWeights<T> gru_;
  std::vector<std::pair<Tensor, Tensor>> conv_;  // (filters, bias) per filter size
};

template <typename T>
template <typename U>
BasicModel<U> BasicModel<T>::cast() const {
  ad::BasicParamSet<U> out;
  for (const auto& e : params_.entries()) out.add(e.name, e.tensor.template cast<U>());
  return BasicModel<U>(config_, std::move(out));
}

using Model = BasicModel<float>;

}  // namespace sml
