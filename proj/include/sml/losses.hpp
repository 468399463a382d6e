#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "sml/autodiff.hpp"
#include "sml/encoders.hpp"

namespace sml {

enum class LossKind { Triplet, Ncas, Contrastive, Bpr, Top1 };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view text);

// Argument order of the KL divergence in the NCAS loss.
enum class KldDirection {
  TargetToModel,  // KLD(p' || p_model) = sum p' ln(p' / p_model)
  ModelToTarget,  // KLD(p_model || p')
};

struct LossConfig {
  LossKind kind = LossKind::Triplet;
  double margin = 0.3;
  bool use_margin = true;
  bool use_swap = false;
  bool position_weighting = true;
  double smoothing = 0.3;
  KldDirection kld_direction = KldDirection::TargetToModel;

  void validate() const;
};

/// w_j = sqrt(1 / (1 + j)) for j = 0..count-1, or all ones when disabled.
template <typename T>
std::vector<T> position_weights(std::size_t count, bool enabled);

// Distance-form pairwise losses. d_kp and d_kn hold one distance per
// (positive, negative) pair; the result is the weighted sum over pairs.
// An empty weight span means unit weights.

/// -ln sigmoid(d_kn - d_kp)
template <typename T>
ad::BasicTensor<T> bpr_loss(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& d_kp, const ad::BasicTensor<T>& d_kn,
                            std::span<const T> weights = {});

/// sigmoid(d_kp - d_kn) + sigmoid((1 - d_kn)^2)
template <typename T>
ad::BasicTensor<T> top1_loss(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& d_kp, const ad::BasicTensor<T>& d_kn,
                             std::span<const T> weights = {});

/// max(0, d_kp - d' + m) with d' = min(d_kn, d_pn) when swapping. The margin
/// term applies only with use_margin. d_pn may be undefined without swap.
template <typename T>
ad::BasicTensor<T> triplet_loss(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& d_kp, const ad::BasicTensor<T>& d_kn,
                                const ad::BasicTensor<T>& d_pn, const LossConfig& config,
                                std::span<const T> weights = {});

/// Per pair: d when same_class, else max(0, d - margin).
template <typename T>
ad::BasicTensor<T> contrastive_loss(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& distances,
                                    std::span<const std::uint8_t> same_class, T margin,
                                    std::span<const T> weights = {});

/// Contrastive loss of one vector pair under cosine distance.
template <typename T>
ad::BasicTensor<T> contrastive_loss(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& x_i,
                                    const ad::BasicTensor<T>& x_j, bool same_class, T margin);

/// KL divergence between the softmax over negated candidate distances and
/// the label-smoothed target (uniform over positives, then
/// (1 - eps) p + eps / |Z|).
template <typename T>
ad::BasicTensor<T> ncas_loss(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& distances,
                             std::span<const std::uint8_t> is_positive, T smoothing,
                             KldDirection direction = KldDirection::TargetToModel);

/// Loss of one session given its encoding and a matrix of encoded items;
/// positive_rows / negative_rows index rows of `items`. Triplet, BPR, TOP1
/// and contrastive pair positive j with negative j under position weights;
/// NCAS uses the distinct positives and the negatives as its candidate set.
template <typename T>
ad::BasicTensor<T> session_objective(ad::BasicTape<T>& tape, const ad::BasicTensor<T>& session,
                                     const ad::BasicTensor<T>& items, std::span<const std::int32_t> positive_rows,
                                     std::span<const std::int32_t> negative_rows, const LossConfig& config);

/// Encodes the prefix and the sampled items with `model`, then applies the
/// embedding-level session_objective.
template <typename T>
ad::BasicTensor<T> session_objective(ad::BasicTape<T>& tape, const BasicModel<T>& model,
                                     std::span<const ItemIndex> prefix, std::span<const ItemIndex> positives,
                                     std::span<const ItemIndex> negatives, const LossConfig& config);

/// NCAS over an explicit candidate set of distinct items.
template <typename T>
ad::BasicTensor<T> ncas_loss(ad::BasicTape<T>& tape, const BasicModel<T>& model, std::span<const ItemIndex> prefix,
                             std::span<const ItemIndex> candidates, std::span<const std::uint8_t> is_positive,
                             const LossConfig& config);

}  // namespace sml
