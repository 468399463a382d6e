#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sml/data.hpp"
#include "sml/recommender.hpp"

namespace sml {

// Single-list metrics; `ranked` must not contain duplicates.
double mrr_at_k(std::span<const ItemIndex> ranked, ItemIndex next_item, std::size_t k);
double hr_at_k(std::span<const ItemIndex> ranked, ItemIndex next_item, std::size_t k);
/// (|top-k ∩ relevant| / k, |top-k ∩ relevant| / |relevant|)
std::pair<double, double> prec_rec_at_k(std::span<const ItemIndex> ranked, const std::unordered_set<ItemIndex>& relevant,
                                        std::size_t k);
/// Sum of precision@r over hit ranks r <= k, divided by min(|relevant|, k).
double ap_at_k(std::span<const ItemIndex> ranked, const std::unordered_set<ItemIndex>& relevant, std::size_t k);

struct EvalConfig {
  std::size_t cutoff = 20;
  // PREC/REC/MAP against the rest of the session (default) or only the
  // next item.
  bool next_item_only = false;
};

struct EvalReport {
  std::string method;
  std::size_t cutoff = 20;
  bool next_item_only = false;
  double map = 0, prec = 0, rec = 0, hr = 0, mrr = 0;
  std::size_t coverage = 0;           // distinct items recommended
  std::size_t vocab_size = 0;
  std::size_t measurements = 0;       // (session, prefix length) points
  std::size_t sessions = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// No-look-ahead protocol: every prefix items[0, l) for l in [1, t-1] is a
/// measurement point; averages are over measurement points. Throws
/// DataError on an empty test set.
EvalReport evaluate(const Recommender& recommender, std::span<const Session> test, std::size_t vocab_size,
                    const EvalConfig& config = {});

std::string to_json(const EvalReport& report);
void write_table(std::span<const EvalReport> reports, std::ostream& out);

}  // namespace sml
