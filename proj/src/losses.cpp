#include "sml/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "sml/error.hpp"

namespace sml {

namespace {

template <typename T>
using Tensor = ad::BasicTensor<T>;

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// ln(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct PairTerm {
  double value;
  double grad_kp;
  double grad_kn;
};

template <typename T>
void check_weights(std::string_view op, std::size_t n, std::span<const T> weights) {
  if (!weights.empty() && weights.size() != n)
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(n) + " weights");
}

// Weighted sum over pairs of a loss with closed-form partial derivatives.
template <typename T, typename Fn>
Tensor<T> pairwise_loss(ad::BasicTape<T>& tape, std::string_view op, const Tensor<T>& d_kp, const Tensor<T>& d_kn,
                        std::span<const T> weights, Fn term) {
  if (d_kp.numel() != d_kn.numel()) throw std::invalid_argument(std::string(op) + ": pair count mismatch");
  const std::size_t n = d_kp.numel();
  check_weights(op, n, weights);
  std::vector<double> g_kp(n), g_kn(n);
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double w = weights.empty() ? 1.0 : static_cast<double>(weights[j]);
    PairTerm t = term(static_cast<double>(d_kp.values()[j]), static_cast<double>(d_kn.values()[j]));
    total += w * t.value;
    g_kp[j] = w * t.grad_kp;
    g_kn[j] = w * t.grad_kn;
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total));
  tape.record(op, {d_kp, d_kn}, out, [d_kp, d_kn, out, g_kp = std::move(g_kp), g_kn = std::move(g_kn)]() {
    const double g = static_cast<double>(out.grad()[0]);
    if (d_kp.requires_grad()) {
      auto gp = d_kp.grad();
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += static_cast<T>(g * g_kp[j]);
    }
    if (d_kn.requires_grad()) {
      auto gn = d_kn.grad();
      for (std::size_t j = 0; j < gn.size(); ++j) gn[j] += static_cast<T>(g * g_kn[j]);
    }
  });
  return out;
}

std::vector<ItemIndex> unique_in_order(std::span<const ItemIndex> a, std::span<const ItemIndex> b) {
  std::vector<ItemIndex> out;
  std::unordered_set<ItemIndex> seen;
  for (auto span : {a, b})
    for (auto i : span)
      if (seen.insert(i).second) out.push_back(i);
  return out;
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Triplet: return "Triplet";
    case LossKind::Ncas: return "NCAS";
    case LossKind::Contrastive: return "Contrastive";
    case LossKind::Bpr: return "BPR";
    case LossKind::Top1: return "TOP1";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "triplet") return LossKind::Triplet;
  if (s == "ncas") return LossKind::Ncas;
  if (s == "contrastive") return LossKind::Contrastive;
  if (s == "bpr") return LossKind::Bpr;
  if (s == "top1") return LossKind::Top1;
  throw UsageError("unknown loss '" + std::string(text) + "' (expected triplet, ncas, contrastive, bpr, top1)");
}

void LossConfig::validate() const {
  if (margin < 0) throw UsageError("margin must be non-negative");
  if (!(smoothing >= 0 && smoothing < 1)) throw UsageError("smoothing must be in [0, 1)");
}

template <typename T>
std::vector<T> position_weights(std::size_t count, bool enabled) {
  std::vector<T> w(count, T(1));
  if (enabled)
    for (std::size_t j = 0; j < count; ++j) w[j] = static_cast<T>(std::sqrt(1.0 / (1.0 + static_cast<double>(j))));
  return w;
}

template <typename T>
Tensor<T> bpr_loss(ad::BasicTape<T>& tape, const Tensor<T>& d_kp, const Tensor<T>& d_kn, std::span<const T> weights) {
  return pairwise_loss(tape, "bpr_loss", d_kp, d_kn, weights, [](double kp, double kn) {
    // -ln sigmoid(kn - kp) = softplus(kp - kn)
    const double s = sigmoid(kp - kn);
    return PairTerm{softplus(kp - kn), s, -s};
  });
}

template <typename T>
Tensor<T> top1_loss(ad::BasicTape<T>& tape, const Tensor<T>& d_kp, const Tensor<T>& d_kn, std::span<const T> weights) {
  return pairwise_loss(tape, "top1_loss", d_kp, d_kn, weights, [](double kp, double kn) {
    const double s = sigmoid(kp - kn);
    const double u = (1.0 - kn) * (1.0 - kn);
    const double r = sigmoid(u);
    return PairTerm{s + r, s * (1 - s), -s * (1 - s) - 2.0 * (1.0 - kn) * r * (1 - r)};
  });
}

template <typename T>
Tensor<T> triplet_loss(ad::BasicTape<T>& tape, const Tensor<T>& d_kp, const Tensor<T>& d_kn, const Tensor<T>& d_pn,
                       const LossConfig& config, std::span<const T> weights) {
  const std::size_t n = d_kp.numel();
  if (d_kn.numel() != n) throw std::invalid_argument("triplet_loss: pair count mismatch");
  if (config.use_swap && (!d_pn.defined() || d_pn.numel() != n))
    throw std::invalid_argument("triplet_loss: swapping needs one positive-negative distance per pair");
  check_weights("triplet_loss", n, weights);
  const double margin = config.use_margin ? config.margin : 0.0;

  // Per pair: gradient sign for d_kp (+w or 0) and which negative distance
  // received the min (0: d_kn, 1: d_pn).
  std::vector<double> active(n, 0.0);
  std::vector<std::uint8_t> via_pn(n, 0);
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double kn = d_kn.values()[j];
    double neg = kn;
    if (config.use_swap) {
      const double pn = d_pn.values()[j];
      if (pn < kn) {
        neg = pn;
        via_pn[j] = 1;
      }
    }
    const double hinge = static_cast<double>(d_kp.values()[j]) - neg + margin;
    if (!(hinge <= 0)) {  // NaN passes through so divergence is caught
      const double w = weights.empty() ? 1.0 : static_cast<double>(weights[j]);
      total += w * hinge;
      active[j] = w;
    }
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total));
  std::vector<Tensor<T>> inputs{d_kp, d_kn};
  if (config.use_swap) inputs.push_back(d_pn);
  tape.record("triplet_loss", std::span<const Tensor<T>>(inputs), out,
              [inputs, out, active = std::move(active), via_pn = std::move(via_pn)]() {
                const double g = static_cast<double>(out.grad()[0]);
                const auto& kp = inputs[0];
                if (kp.requires_grad()) {
                  auto gp = kp.grad();
                  for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += static_cast<T>(g * active[j]);
                }
                for (std::size_t j = 0; j < active.size(); ++j) {
                  if (active[j] == 0.0) continue;
                  const auto& neg = inputs[via_pn[j] ? 2 : 1];
                  if (neg.requires_grad()) neg.grad()[j] -= static_cast<T>(g * active[j]);
                }
              });
  return out;
}

template <typename T>
Tensor<T> contrastive_loss(ad::BasicTape<T>& tape, const Tensor<T>& distances, std::span<const std::uint8_t> same_class,
                           T margin, std::span<const T> weights) {
  const std::size_t n = distances.numel();
  if (same_class.size() != n) throw std::invalid_argument("contrastive_loss: label count mismatch");
  check_weights("contrastive_loss", n, weights);
  std::vector<double> slope(n, 0.0);
  double total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double w = weights.empty() ? 1.0 : static_cast<double>(weights[j]);
    const double d = distances.values()[j];
    if (same_class[j]) {
      total += w * d;
      slope[j] = w;
    } else if (!(d - static_cast<double>(margin) <= 0)) {
      total += w * (d - static_cast<double>(margin));
      slope[j] = w;
    }
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total));
  tape.record("contrastive_loss", {distances}, out, [distances, out, slope = std::move(slope)]() {
    if (!distances.requires_grad()) return;
    const double g = static_cast<double>(out.grad()[0]);
    auto gd = distances.grad();
    for (std::size_t j = 0; j < gd.size(); ++j) gd[j] += static_cast<T>(g * slope[j]);
  });
  return out;
}

template <typename T>
Tensor<T> contrastive_loss(ad::BasicTape<T>& tape, const Tensor<T>& x_i, const Tensor<T>& x_j, bool same_class,
                           T margin) {
  auto d = ad::cosine_distance(tape, x_i, x_j);
  const std::uint8_t label = same_class ? 1 : 0;
  return contrastive_loss(tape, d, std::span<const std::uint8_t>(&label, 1), margin);
}

template <typename T>
Tensor<T> ncas_loss(ad::BasicTape<T>& tape, const Tensor<T>& distances, std::span<const std::uint8_t> is_positive,
                    T smoothing, KldDirection direction) {
  const std::size_t n = distances.numel();
  if (n == 0 || is_positive.size() != n) throw std::invalid_argument("ncas_loss: one flag per candidate required");
  const auto positives = static_cast<std::size_t>(std::count_if(is_positive.begin(), is_positive.end(),
                                                                [](std::uint8_t f) { return f != 0; }));
  if (positives == 0) throw std::invalid_argument("ncas_loss: candidate set has no positive item");
  const double eps = static_cast<double>(smoothing);
  if (!(eps >= 0 && eps < 1)) throw std::invalid_argument("ncas_loss: smoothing must be in [0, 1)");

  // Model distribution: softmax over -d with max subtraction.
  std::vector<double> logit(n), q(n), target(n);
  for (std::size_t i = 0; i < n; ++i) logit[i] = -static_cast<double>(distances.values()[i]);
  const double top = *std::max_element(logit.begin(), logit.end());
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(logit[i] - top);
  const double log_z = top + std::log(z);
  std::vector<double> log_q(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_q[i] = logit[i] - log_z;
    q[i] = std::exp(log_q[i]);
    target[i] = (1.0 - eps) * (is_positive[i] ? 1.0 / static_cast<double>(positives) : 0.0) +
                eps / static_cast<double>(n);
  }

  double kld = 0;
  std::vector<double> grad_d(n);  // d kld / d distance_i
  if (direction == KldDirection::TargetToModel) {
    for (std::size_t i = 0; i < n; ++i)
      if (target[i] > 0) kld += target[i] * (std::log(target[i]) - log_q[i]);
    // d/d logit_i = q_i - p'_i and logit = -d.
    for (std::size_t i = 0; i < n; ++i) grad_d[i] = target[i] - q[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) kld += q[i] * (log_q[i] - std::log(target[i]));
    for (std::size_t i = 0; i < n; ++i) grad_d[i] = -q[i] * (log_q[i] - std::log(target[i]) - kld);
  }

  auto out = Tensor<T>::scalar(static_cast<T>(kld));
  tape.record("ncas_loss", {distances}, out, [distances, out, grad_d = std::move(grad_d)]() {
    if (!distances.requires_grad()) return;
    const double g = static_cast<double>(out.grad()[0]);
    auto gd = distances.grad();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += static_cast<T>(g * grad_d[i]);
  });
  return out;
}

template <typename T>
Tensor<T> session_objective(ad::BasicTape<T>& tape, const Tensor<T>& session, const Tensor<T>& items,
                            std::span<const std::int32_t> positive_rows, std::span<const std::int32_t> negative_rows,
                            const LossConfig& config) {
  if (positive_rows.empty()) throw std::invalid_argument("session_objective: no positive items");
  if (positive_rows.size() != negative_rows.size())
    throw std::invalid_argument("session_objective: " + std::to_string(positive_rows.size()) + " positives vs " +
                                std::to_string(negative_rows.size()) + " negatives");

  if (config.kind == LossKind::Ncas) {
    std::vector<std::int32_t> rows;
    std::vector<std::uint8_t> flags;
    std::unordered_set<std::int32_t> seen;
    for (auto r : positive_rows)
      if (seen.insert(r).second) {
        rows.push_back(r);
        flags.push_back(1);
      }
    for (auto r : negative_rows) {
      if (!seen.insert(r).second) throw std::invalid_argument("session_objective: duplicate item in NCAS candidates");
      rows.push_back(r);
      flags.push_back(0);
    }
    auto candidates = ad::embedding_lookup(tape, items, rows);
    auto d = ad::cosine_distance_many(tape, session, candidates);
    return ncas_loss(tape, d, flags, static_cast<T>(config.smoothing), config.kld_direction);
  }

  auto pos = ad::embedding_lookup(tape, items, positive_rows);
  auto neg = ad::embedding_lookup(tape, items, negative_rows);
  auto d_kp = ad::cosine_distance_many(tape, session, pos);
  auto d_kn = ad::cosine_distance_many(tape, session, neg);
  const auto w = position_weights<T>(positive_rows.size(), config.position_weighting);

  switch (config.kind) {
    case LossKind::Triplet: {
      Tensor<T> d_pn;
      if (config.use_swap) d_pn = ad::cosine_distance(tape, pos, neg);
      return triplet_loss(tape, d_kp, d_kn, d_pn, config, std::span<const T>(w));
    }
    case LossKind::Bpr:
      return bpr_loss(tape, d_kp, d_kn, std::span<const T>(w));
    case LossKind::Top1:
      return top1_loss(tape, d_kp, d_kn, std::span<const T>(w));
    case LossKind::Contrastive: {
      std::vector<Tensor<T>> parts{d_kp, d_kn};
      auto d = ad::concat(tape, std::span<const Tensor<T>>(parts));
      std::vector<std::uint8_t> same(2 * w.size(), 0);
      std::fill(same.begin(), same.begin() + static_cast<std::ptrdiff_t>(w.size()), 1);
      std::vector<T> ww(w);
      ww.insert(ww.end(), w.begin(), w.end());
      return contrastive_loss(tape, d, same, static_cast<T>(config.margin), std::span<const T>(ww));
    }
    case LossKind::Ncas:
      break;
  }
  throw std::logic_error("unhandled loss kind");
}

template <typename T>
Tensor<T> session_objective(ad::BasicTape<T>& tape, const BasicModel<T>& model, std::span<const ItemIndex> prefix,
                            std::span<const ItemIndex> positives, std::span<const ItemIndex> negatives,
                            const LossConfig& config) {
  if (positives.size() != negatives.size())
    throw std::invalid_argument("session_objective: positives and negatives differ in length");
  if (positives.empty()) throw std::invalid_argument("session_objective: no positive items");
  auto unique = unique_in_order(positives, negatives);
  std::unordered_map<ItemIndex, std::int32_t> row;
  for (std::size_t i = 0; i < unique.size(); ++i) row[unique[i]] = static_cast<std::int32_t>(i);
  std::vector<std::int32_t> pos_rows, neg_rows;
  for (auto i : positives) pos_rows.push_back(row.at(i));
  for (auto i : negatives) neg_rows.push_back(row.at(i));

  auto session = model.encode_session(tape, prefix);
  auto items = model.encode_items(tape, unique);
  return session_objective(tape, session, items, pos_rows, neg_rows, config);
}

template <typename T>
Tensor<T> ncas_loss(ad::BasicTape<T>& tape, const BasicModel<T>& model, std::span<const ItemIndex> prefix,
                    std::span<const ItemIndex> candidates, std::span<const std::uint8_t> is_positive,
                    const LossConfig& config) {
  std::unordered_set<ItemIndex> seen(candidates.begin(), candidates.end());
  if (seen.size() != candidates.size()) throw std::invalid_argument("ncas_loss: duplicate items in candidate set");
  auto session = model.encode_session(tape, prefix);
  auto items = model.encode_items(tape, candidates);
  auto d = ad::cosine_distance_many(tape, session, items);
  return ncas_loss(tape, d, is_positive, static_cast<T>(config.smoothing), config.kld_direction);
}

#define SML_INSTANTIATE(T)                                                                                          \
  template std::vector<T> position_weights<T>(std::size_t, bool);                                                  \
  template Tensor<T> bpr_loss(ad::BasicTape<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const T>);          \
  template Tensor<T> top1_loss(ad::BasicTape<T>&, const Tensor<T>&, const Tensor<T>&, std::span<const T>);         \
  template Tensor<T> triplet_loss(ad::BasicTape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                  const LossConfig&, std::span<const T>);                                         \
  template Tensor<T> contrastive_loss(ad::BasicTape<T>&, const Tensor<T>&, std::span<const std::uint8_t>, T,       \
                                      std::span<const T>);                                                        \
  template Tensor<T> contrastive_loss(ad::BasicTape<T>&, const Tensor<T>&, const Tensor<T>&, bool, T);             \
  template Tensor<T> ncas_loss(ad::BasicTape<T>&, const Tensor<T>&, std::span<const std::uint8_t>, T, KldDirection); \
  template Tensor<T> session_objective(ad::BasicTape<T>&, const Tensor<T>&, const Tensor<T>&,                      \
                                       std::span<const std::int32_t>, std::span<const std::int32_t>,              \
                                       const LossConfig&);                                                        \
  template Tensor<T> session_objective(ad::BasicTape<T>&, const BasicModel<T>&, std::span<const ItemIndex>,        \
                                       std::span<const ItemIndex>, std::span<const ItemIndex>, const LossConfig&); \
  template Tensor<T> ncas_loss(ad::BasicTape<T>&, const BasicModel<T>&, std::span<const ItemIndex>,                \
                               std::span<const ItemIndex>, std::span<const std::uint8_t>, const LossConfig&);

SML_INSTANTIATE(float)
SML_INSTANTIATE(double)

#undef SML_INSTANTIATE

}  // namespace sml
