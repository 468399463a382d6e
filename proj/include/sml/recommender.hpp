#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sml/data.hpp"

namespace sml {

/// Anything that turns a session prefix into a ranked list of items.
/// Implementations return at most n distinct in-vocab items.
class Recommender {
 public:
  virtual ~Recommender() = default;
  virtual std::vector<ItemIndex> recommend(std::span<const ItemIndex> prefix, std::size_t n) const = 0;
  virtual std::string name() const = 0;
};

}  // namespace sml
