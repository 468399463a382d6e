#include "sml/index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "sml/error.hpp"

namespace sml {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

namespace {

void normalize(std::span<float> v) {
  double norm = 0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm < 1e-12) return;
  for (auto& x : v) x = static_cast<float>(x / norm);
}

}  // namespace

EmbeddingIndex::EmbeddingIndex(std::vector<float> rows, std::size_t dim) : rows_(std::move(rows)), dim_(dim) {
  if (dim_ == 0 || rows_.size() % dim_ != 0) throw std::invalid_argument("EmbeddingIndex: ragged matrix");
  for (std::size_t i = 0; i < size(); ++i) normalize(std::span<float>(rows_).subspan(i * dim_, dim_));
}

EmbeddingIndex EmbeddingIndex::build(const Model& model) {
  const auto v = model.config().vocab_size;
  std::vector<ItemIndex> all(v);
  for (std::size_t i = 0; i < v; ++i) all[i] = static_cast<ItemIndex>(i);
  auto tape = ad::Tape::inference();
  auto encoded = model.encode_items(tape, all);
  return EmbeddingIndex(std::vector<float>(encoded.values().begin(), encoded.values().end()),
                        model.config().embedding_dim);
}

std::span<const float> EmbeddingIndex::row(ItemIndex item) const {
  if (item < 0 || static_cast<std::size_t>(item) >= size()) throw std::out_of_range("EmbeddingIndex: bad item");
  return std::span<const float>(rows_).subspan(static_cast<std::size_t>(item) * dim_, dim_);
}

std::vector<ScoredItem> EmbeddingIndex::topn(std::span<const float> query, int n,
                                             const std::unordered_set<ItemIndex>* exclude) const {
  if (n <= 0) throw std::invalid_argument("topn: n must be positive");
  if (query.size() != dim_) throw std::invalid_argument("topn: query width differs from index width");
  std::vector<ScoredItem> scored;
  scored.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    const auto item = static_cast<ItemIndex>(i);
    if (exclude && exclude->contains(item)) continue;
    const float* r = rows_.data() + i * dim_;
    double dot = 0;
    for (std::size_t j = 0; j < dim_; ++j) dot += static_cast<double>(query[j]) * r[j];
    scored.push_back({item, dot});
  }
  const auto keep = std::min(scored.size(), static_cast<std::size_t>(n));
  auto better = [](const ScoredItem& a, const ScoredItem& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
  scored.resize(keep);
  return scored;
}

std::vector<float> session_query(const Model& model, std::span<const ItemIndex> prefix) {
  auto tape = ad::Tape::inference();
  auto s = model.encode_session(tape, prefix);
  std::vector<float> q(s.values().begin(), s.values().end());
  normalize(q);
  return q;
}

SmlRecommender::SmlRecommender(const Model& model, std::string name)
    : model_(model), index_(EmbeddingIndex::build(model)), name_(std::move(name)) {}

std::vector<ScoredItem> SmlRecommender::recommend_scored(std::span<const ItemIndex> prefix, std::size_t n) const {
  if (prefix.empty() || n == 0) return {};
  const auto max_len = model_.config().max_session_length;
  if (prefix.size() > max_len) prefix = prefix.subspan(prefix.size() - max_len);
  return index_.topn(session_query(model_, prefix), static_cast<int>(n));
}

std::vector<ItemIndex> SmlRecommender::recommend(std::span<const ItemIndex> prefix, std::size_t n) const {
  std::vector<ItemIndex> out;
  for (const auto& s : recommend_scored(prefix, n)) out.push_back(s.item);
  return out;
}

// ---------------------------------------------------------------- persistence

namespace {

class Writer {
 public:
  template <typename U>
  void put(U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out_.append(buf, sizeof(U));
  }
  void str(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, in_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(bytes(get<std::uint32_t>())); }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("model file is truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string config_text(const ModelConfig& c, std::string_view name) {
  std::ostringstream out;
  out << "name=" << name << "\n";
  out << "embedding_dim=" << c.embedding_dim << "\n";
  out << "encoder=" << to_string(c.encoder) << "\n";
  out << "common_embedding=" << (c.common_embedding ? 1 : 0) << "\n";
  out << "normalize_outputs=" << (c.normalize_outputs ? 1 : 0) << "\n";
  out << "max_session_length=" << c.max_session_length << "\n";
  out << "conv_filter_sizes=";
  for (std::size_t i = 0; i < c.conv_filter_sizes.size(); ++i) out << (i ? "," : "") << c.conv_filter_sizes[i];
  out << "\n";
  out << "vocab_size=" << c.vocab_size << "\n";
  out << "session_ff_layers=" << c.session_ff_layers << "\n";
  return out.str();
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError("model config: bad value for " + key + ": '" + value + "'");
  }
}

std::pair<ModelConfig, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("model config: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("model config: missing key " + key);
    return it->second;
  };
  ModelConfig c;
  c.embedding_dim = parse_size("embedding_dim", take("embedding_dim"));
  try {
    c.encoder = parse_encoder_kind(take("encoder"));
  } catch (const UsageError& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  c.common_embedding = parse_size("common_embedding", take("common_embedding")) != 0;
  c.normalize_outputs = parse_size("normalize_outputs", take("normalize_outputs")) != 0;
  c.max_session_length = parse_size("max_session_length", take("max_session_length"));
  c.conv_filter_sizes.clear();
  std::istringstream sizes(take("conv_filter_sizes"));
  std::string item;
  while (std::getline(sizes, item, ',')) c.conv_filter_sizes.push_back(parse_size("conv_filter_sizes", item));
  c.vocab_size = parse_size("vocab_size", take("vocab_size"));
  c.session_ff_layers = parse_size("session_ff_layers", take("session_ff_layers"));
  try {
    c.validate();
  } catch (const UsageError& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  return {c, kv.count("name") ? kv["name"] : std::string("SML")};
}

}  // namespace

std::string serialize_model(const Model& model, const ItemVocab& vocab, std::string_view name) {
  if (vocab.size() != model.config().vocab_size)
    throw std::invalid_argument("serialize_model: vocabulary size differs from the model's");
  Writer w;
  for (char c : kModelMagic) w.put(c);
  w.put(kModelVersion);
  w.str(config_text(model.config(), name));
  w.put(static_cast<std::uint32_t>(vocab.size()));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    w.str(vocab.id(static_cast<ItemIndex>(i)));
    w.put(static_cast<std::uint64_t>(vocab.count(static_cast<ItemIndex>(i))));
  }
  const auto& entries = model.params().entries();
  w.put(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.name);
    w.put(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto extent : e.tensor.shape()) w.put(static_cast<std::uint64_t>(extent));
    for (float v : e.tensor.values()) w.put(v);
  }
  return w.take();
}

ModelArtifact deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kModelMagic.size() || r.bytes(kModelMagic.size()) != kModelMagic)
    throw DataError("not a model file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion)
    throw DataError("unsupported model file version " + std::to_string(version) + " (expected " +
                    std::to_string(kModelVersion) + ")");
  auto [config, name] = parse_config(r.str());

  ItemVocab vocab;
  const auto v = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < v; ++i) {
    const auto id = r.str();
    const auto index = vocab.insert(id);
    if (static_cast<std::uint32_t>(index) != i) throw DataError("model file: duplicate item id '" + id + "'");
    vocab.set_count(index, static_cast<std::size_t>(r.get<std::uint64_t>()));
  }
  if (vocab.size() != config.vocab_size) throw DataError("model file: vocabulary size differs from config");

  ad::ParamSet params;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto tensor_name = r.str();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 3) throw DataError("model file: tensor '" + tensor_name + "' has rank " + std::to_string(rank));
    ad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto extent = r.get<std::uint64_t>();
      if (extent == 0 || extent > (std::uint64_t{1} << 32)) throw DataError("model file: bad tensor extent");
      shape.push_back(static_cast<std::size_t>(extent));
      n *= shape.back();
    }
    if (n * sizeof(float) > bytes.size()) throw DataError("model file is truncated");
    std::vector<float> values(n);
    for (auto& x : values) x = r.get<float>();
    if (params.contains(tensor_name)) throw DataError("model file: duplicate tensor '" + tensor_name + "'");
    params.add(tensor_name, ad::Tensor(shape, std::move(values)));
  }
  if (!r.done()) throw DataError("model file has trailing bytes");
  return ModelArtifact{Model(config, std::move(params)), std::move(vocab), std::move(name)};
}

void save_model(const std::filesystem::path& path, const Model& model, const ItemVocab& vocab,
                std::string_view name) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + path.string());
  const auto bytes = serialize_model(model, vocab, name);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing model file " + path.string());
}

ModelArtifact load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str());
}

}  // namespace sml
