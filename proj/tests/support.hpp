#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sml/autodiff.hpp"
#include "sml/data.hpp"

namespace sml::testing {

inline ad::BasicTensor<double> random_tensor(const ad::Shape& shape, std::mt19937_64& rng, bool requires_grad = true,
                                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return ad::BasicTensor<double>(shape, std::move(v), requires_grad);
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> w(n);
  for (auto& x : w) x = dist(rng);
  return w;
}

/// Sessions that follow one fixed first-order rule: items sit on a random
/// cycle and every event is followed by its successor on the cycle.
struct SyntheticCorpus {
  std::vector<RawEvent> events;
  std::vector<int> successor;  // successor[i] for raw item i
};

inline SyntheticCorpus cyclic_corpus(std::size_t sessions, int vocab, std::uint64_t seed, int min_len = 2,
                                     int max_len = 10) {
  std::mt19937_64 rng(seed);
  std::vector<int> order(static_cast<std::size_t>(vocab));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  SyntheticCorpus c;
  c.successor.resize(order.size());
  for (std::size_t j = 0; j < order.size(); ++j)
    c.successor[static_cast<std::size_t>(order[j])] = order[(j + 1) % order.size()];
  std::uniform_int_distribution<int> start(0, vocab - 1), len(min_len, max_len);
  for (std::size_t s = 0; s < sessions; ++s) {
    int item = start(rng);
    const int n = len(rng);
    for (int j = 0; j < n; ++j) {
      c.events.push_back({"s" + std::to_string(s), static_cast<std::int64_t>(s * 1000 + j), "i" + std::to_string(item)});
      item = c.successor[static_cast<std::size_t>(item)];
    }
  }
  return c;
}

/// Five train sessions over items a..f = 0..5, small enough to rank by hand.
///   [a,b,c] [a,b,d] [b,c,e] [c,a,b] [e,f]
inline std::vector<Session> hand_corpus() {
  const std::vector<std::vector<ItemIndex>> items{{0, 1, 2}, {0, 1, 3}, {1, 2, 4}, {2, 0, 1}, {4, 5}};
  std::vector<Session> out;
  for (std::size_t s = 0; s < items.size(); ++s) {
    Session session;
    session.session_id = "h" + std::to_string(s);
    session.items = items[s];
    for (std::size_t j = 0; j < items[s].size(); ++j)
      session.timestamps.push_back(static_cast<std::int64_t>(s * 100 + j));
    out.push_back(std::move(session));
  }
  return out;
}
inline constexpr std::size_t kHandVocab = 6;

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sml_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sml::testing
