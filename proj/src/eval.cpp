#include "sml/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <json.hpp>

#include "sml/error.hpp"

namespace sml {

namespace {

std::size_t rank_of(std::span<const ItemIndex> ranked, ItemIndex item, std::size_t k) {
  const std::size_t limit = std::min(k, ranked.size());
  for (std::size_t r = 0; r < limit; ++r)
    if (ranked[r] == item) return r + 1;
  return 0;
}

}  // namespace

double mrr_at_k(std::span<const ItemIndex> ranked, ItemIndex next_item, std::size_t k) {
  const auto r = rank_of(ranked, next_item, k);
  return r == 0 ? 0.0 : 1.0 / static_cast<double>(r);
}

double hr_at_k(std::span<const ItemIndex> ranked, ItemIndex next_item, std::size_t k) {
  return rank_of(ranked, next_item, k) == 0 ? 0.0 : 1.0;
}

std::pair<double, double> prec_rec_at_k(std::span<const ItemIndex> ranked, const std::unordered_set<ItemIndex>& relevant,
                                        std::size_t k) {
  if (relevant.empty() || k == 0) return {0.0, 0.0};
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) hits += relevant.contains(ranked[r]);
  return {static_cast<double>(hits) / static_cast<double>(k),
          static_cast<double>(hits) / static_cast<double>(relevant.size())};
}

double ap_at_k(std::span<const ItemIndex> ranked, const std::unordered_set<ItemIndex>& relevant, std::size_t k) {
  if (relevant.empty() || k == 0) return 0.0;
  std::size_t hits = 0;
  double sum = 0;
  for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
    if (!relevant.contains(ranked[r])) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(std::min(relevant.size(), k));
}

EvalReport evaluate(const Recommender& recommender, std::span<const Session> test, std::size_t vocab_size,
                    const EvalConfig& config) {
  if (config.cutoff == 0) throw UsageError("evaluation cutoff must be positive");
  EvalReport report;
  report.method = recommender.name();
  report.cutoff = config.cutoff;
  report.next_item_only = config.next_item_only;
  report.vocab_size = vocab_size;
  std::unordered_set<ItemIndex> covered;
  const std::size_t k = config.cutoff;
  for (const auto& session : test) {
    const auto& items = session.items;
    if (items.size() < 2) continue;
    ++report.sessions;
    for (std::size_t l = 1; l < items.size(); ++l) {
      const auto ranked = recommender.recommend(std::span<const ItemIndex>(items.data(), l), k);
      const std::span<const ItemIndex> top(ranked.data(), std::min(k, ranked.size()));
      covered.insert(top.begin(), top.end());
      const ItemIndex next = items[l];
      std::unordered_set<ItemIndex> relevant;
      if (config.next_item_only)
        relevant.insert(next);
      else
        relevant.insert(items.begin() + static_cast<std::ptrdiff_t>(l), items.end());
      report.hr += hr_at_k(top, next, k);
      report.mrr += mrr_at_k(top, next, k);
      auto [p, r] = prec_rec_at_k(top, relevant, k);
      report.prec += p;
      report.rec += r;
      report.map += ap_at_k(top, relevant, k);
      ++report.measurements;
    }
  }
  if (report.measurements == 0) throw DataError("evaluation needs at least one test session with 2 or more events");
  const double m = static_cast<double>(report.measurements);
  report.hr /= m;
  report.mrr /= m;
  report.prec /= m;
  report.rec /= m;
  report.map /= m;
  report.coverage = covered.size();
  return report;
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["cutoff"] = r.cutoff;
  j["ground_truth"] = r.next_item_only ? "next_item" : "remaining_items";
  j["map"] = r.map;
  j["prec"] = r.prec;
  j["rec"] = r.rec;
  j["hr"] = r.hr;
  j["mrr"] = r.mrr;
  j["coverage"] = r.coverage;
  j["vocab_size"] = r.vocab_size;
  j["measurements"] = r.measurements;
  j["sessions"] = r.sessions;
  return j.dump(2);
}

void write_table(std::span<const EvalReport> reports, std::ostream& out) {
  std::size_t k = reports.empty() ? 20 : reports.front().cutoff;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %9s %9s %9s %9s %9s %9s\n", "method", ("MAP@" + std::to_string(k)).c_str(),
                ("PREC@" + std::to_string(k)).c_str(), ("REC@" + std::to_string(k)).c_str(),
                ("HR@" + std::to_string(k)).c_str(), ("MRR@" + std::to_string(k)).c_str(), "coverage");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-28s %9.4f %9.4f %9.4f %9.4f %9.4f %9zu\n", r.method.c_str(), r.map, r.prec,
                  r.rec, r.hr, r.mrr, r.coverage);
    out << line;
  }
}

}  // namespace sml
