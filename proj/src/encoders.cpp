#include "sml/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sml/error.hpp"

namespace sml {

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::MaxPool: return "MaxPool";
    case EncoderKind::AvgPool: return "AvgPool";
    case EncoderKind::Gru: return "RNN";
    case EncoderKind::TextCnn: return "TextCNN";
  }
  return "?";
}

EncoderKind parse_encoder_kind(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "maxpool") return EncoderKind::MaxPool;
  if (s == "avgpool" || s == "meanpool") return EncoderKind::AvgPool;
  if (s == "gru" || s == "rnn") return EncoderKind::Gru;
  if (s == "textcnn" || s == "cnn") return EncoderKind::TextCnn;
  throw UsageError("unknown encoder '" + std::string(text) + "' (expected maxpool, avgpool, rnn, textcnn)");
}

void ModelConfig::validate() const {
  if (embedding_dim == 0) throw UsageError("embedding_dim must be positive");
  if (vocab_size == 0) throw UsageError("vocab_size must be positive");
  if (max_session_length == 0) throw UsageError("max_session_length must be positive");
  if (session_ff_layers == 0) throw UsageError("at least one session feed-forward layer is required");
  if (encoder == EncoderKind::TextCnn) {
    if (conv_filter_sizes.empty()) throw UsageError("TextCNN needs at least one filter size");
    for (auto k : conv_filter_sizes) {
      if (k == 0) throw UsageError("convolution filter sizes must be positive");
      if (k > max_session_length)
        throw UsageError("convolution filter size " + std::to_string(k) + " exceeds max session length " +
                         std::to_string(max_session_length));
    }
  }
}

std::size_t ModelConfig::conv_channels() const {
  const std::size_t n = std::max<std::size_t>(conv_filter_sizes.size(), 1);
  return (embedding_dim + n - 1) / n;
}

std::vector<std::pair<std::string, ad::Shape>> parameter_layout(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.embedding_dim, v = config.vocab_size;
  std::vector<std::pair<std::string, ad::Shape>> layout;
  layout.emplace_back("item_embedding", ad::Shape{v, d});
  layout.emplace_back("item_ff.weight", ad::Shape{d, d});
  layout.emplace_back("item_ff.bias", ad::Shape{d});
  if (!config.common_embedding) layout.emplace_back("session_embedding", ad::Shape{v, d});

  std::size_t core_width = d;
  switch (config.encoder) {
    case EncoderKind::MaxPool:
    case EncoderKind::AvgPool:
      break;
    case EncoderKind::Gru:
      layout.emplace_back("gru.input", ad::Shape{d, 3 * d});
      layout.emplace_back("gru.hidden", ad::Shape{d, 3 * d});
      layout.emplace_back("gru.bias", ad::Shape{3 * d});
      break;
    case EncoderKind::TextCnn: {
      const std::size_t c = config.conv_channels();
      for (auto k : config.conv_filter_sizes) {
        layout.emplace_back("conv" + std::to_string(k) + ".filters", ad::Shape{k, d, c});
        layout.emplace_back("conv" + std::to_string(k) + ".bias", ad::Shape{c});
      }
      core_width = c * config.conv_filter_sizes.size();
      break;
    }
  }
  for (std::size_t l = 0; l < config.session_ff_layers; ++l) {
    const std::string prefix = "session_ff." + std::to_string(l);
    layout.emplace_back(prefix + ".weight", ad::Shape{l == 0 ? core_width : d, d});
    layout.emplace_back(prefix + ".bias", ad::Shape{d});
  }
  return layout;
}

template <typename T>
BasicModel<T> BasicModel<T>::create(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamSet params;
  for (auto& [name, shape] : parameter_layout(config)) {
    Tensor t(shape);
    const bool is_bias = name.ends_with(".bias");
    if (!is_bias) {
      // Fan-in is the input width: the last-but-one extent for matrices,
      // k * d_in for convolution filters, d for embedding rows.
      std::size_t fan_in = shape.size() == 3 ? shape[0] * shape[1] : shape[0];
      if (name.ends_with("embedding")) fan_in = shape[1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    }
    params.add(name, std::move(t));
  }
  return BasicModel(config, std::move(params));
}

template <typename T>
BasicModel<T>::BasicModel(ModelConfig config, ParamSet params) : config_(std::move(config)), params_(std::move(params)) {
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size())
    throw DataError("model expects " + std::to_string(layout.size()) + " parameter tensors, got " +
                    std::to_string(params_.size()));
  for (const auto& [name, shape] : layout) {
    if (!params_.contains(name)) throw DataError("missing parameter '" + name + "'");
    const auto& t = params_.at(name);
    if (t.shape() != shape)
      throw DataError("parameter '" + name + "' has shape " + ad::shape_string(t.shape()) + ", expected " +
                      ad::shape_string(shape));
  }
  bind();
}

template <typename T>
void BasicModel<T>::bind() {
  item_embedding_ = params_.at("item_embedding");
  session_embedding_ = config_.common_embedding ? item_embedding_ : params_.at("session_embedding");
  item_ff_weight_ = params_.at("item_ff.weight");
  item_ff_bias_ = params_.at("item_ff.bias");
  session_ff_.clear();
  for (std::size_t l = 0; l < config_.session_ff_layers; ++l) {
    const std::string prefix = "session_ff." + std::to_string(l);
    session_ff_.emplace_back(params_.at(prefix + ".weight"), params_.at(prefix + ".bias"));
  }
  if (config_.encoder == EncoderKind::Gru)
    gru_ = {params_.at("gru.input"), params_.at("gru.hidden"), params_.at("gru.bias")};
  conv_.clear();
  if (config_.encoder == EncoderKind::TextCnn)
    for (auto k : config_.conv_filter_sizes)
      conv_.emplace_back(params_.at("conv" + std::to_string(k) + ".filters"),
                         params_.at("conv" + std::to_string(k) + ".bias"));
}

template <typename T>
typename BasicModel<T>::Tensor BasicModel<T>::encode_items(Tape& tape, std::span<const ItemIndex> items) const {
  auto rows = ad::embedding_lookup(tape, item_embedding_, items);
  auto hidden = ad::dense(tape, rows, item_ff_weight_, item_ff_bias_, ad::Activation::Tanh);
  return config_.normalize_outputs ? ad::l2_normalize(tape, hidden) : hidden;
}

template <typename T>
typename BasicModel<T>::Tensor BasicModel<T>::encode_item(Tape& tape, ItemIndex item) const {
  auto rows = ad::embedding_lookup(tape, item_embedding_, std::span<const ItemIndex>(&item, 1));
  auto hidden = ad::dense(tape, rows, item_ff_weight_, item_ff_bias_, ad::Activation::Tanh);
  // [1 x d] -> [d]
  auto vec = ad::seq_pool(tape, hidden, ad::PoolMode::Mean, 1);
  return config_.normalize_outputs ? ad::l2_normalize(tape, vec) : vec;
}

template <typename T>
typename BasicModel<T>::Tensor BasicModel<T>::encode_session(Tape& tape, std::span<const ItemIndex> prefix) const {
  if (prefix.empty()) throw std::invalid_argument("encode_session: empty session prefix");
  if (prefix.size() > config_.max_session_length)
    throw std::invalid_argument("encode_session: prefix of " + std::to_string(prefix.size()) +
                                " events exceeds max session length " + std::to_string(config_.max_session_length));
  const std::size_t t = prefix.size();
  auto events = ad::embedding_lookup(tape, session_embedding_, prefix);

  Tensor core;
  switch (config_.encoder) {
    case EncoderKind::MaxPool:
      core = ad::seq_pool(tape, events, ad::PoolMode::Max, t);
      break;
    case EncoderKind::AvgPool:
      core = ad::seq_pool(tape, events, ad::PoolMode::Mean, t);
      break;
    case EncoderKind::Gru:
      core = ad::gru_sequence(tape, events, gru_, Tensor({config_.embedding_dim}));
      break;
    case EncoderKind::TextCnn: {
      // Zero rows on the left; only windows touching at least one real event
      // take part in max-over-time, so the result does not depend on how much
      // padding there is.
      const std::size_t kmax = *std::max_element(config_.conv_filter_sizes.begin(), config_.conv_filter_sizes.end());
      const std::size_t padded_rows = config_.max_session_length + kmax - 1;
      auto padded = ad::left_pad_rows(tape, events, padded_rows);
      std::vector<Tensor> pooled;
      for (std::size_t f = 0; f < conv_.size(); ++f) {
        const std::size_t k = config_.conv_filter_sizes[f];
        auto maps = ad::conv1d(tape, padded, conv_[f].first, conv_[f].second);
        const std::size_t last = padded_rows - k + 1;
        auto touching = ad::slice_rows(tape, maps, last - t, last);
        pooled.push_back(ad::seq_pool(tape, touching, ad::PoolMode::Max, t));
      }
      core = ad::concat(tape, std::span<const Tensor>(pooled));
      break;
    }
  }
  for (const auto& [weight, bias] : session_ff_) core = ad::dense(tape, core, weight, bias, ad::Activation::Tanh);
  return config_.normalize_outputs ? ad::l2_normalize(tape, core) : core;
}

template <typename T>
T BasicModel<T>::score(std::span<const ItemIndex> prefix, ItemIndex item) const {
  auto tape = Tape::inference();
  auto session = encode_session(tape, prefix);
  auto encoded = encode_item(tape, item);
  return T(1) - ad::cosine_distance(tape, session, encoded).item();
}

template class BasicModel<float>;
template class BasicModel<double>;

}  // namespace sml
