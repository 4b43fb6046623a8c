#pragma once

#include "arena/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <unordered_set>

namespace arena {

// Neumaier compensated summation.
class CompensatedSum {
public:
  void add(double x) noexcept
  {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }

  double value() const noexcept { return sum_ + carry_; }

private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

template <class Range>
double compensated_mean(const Range& values)
{
  CompensatedSum sum;
  std::size_t n = 0;
  for (double v : values) {
    sum.add(v);
    ++n;
  }
  return n == 0 ? 0.0 : sum.value() / static_cast<double>(n);
}

// Average precision of one ranked list truncated at k, normalized by
// min(k, |relevant|). Terms are accumulated from rank 1 downwards.
template <class Item, class Set = std::unordered_set<Item>>
double average_precision(std::span<const Item> ranked, const Set& relevant, std::size_t k)
{
  if (k == 0) {
    throw Error(ErrorKind::validation, "k must be positive");
  }
  if (relevant.empty()) {
    throw Error(ErrorKind::validation, "relevant set must not be empty");
  }
  {
    std::unordered_set<Item> seen;
    for (const auto& item : ranked) {
      if (!seen.insert(item).second) {
        throw Error(ErrorKind::validation, "ranked list contains duplicate items");
      }
    }
  }
  const std::size_t depth = std::min(k, ranked.size());
  CompensatedSum sum;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < depth; ++r) {
    if (relevant.count(ranked[r]) != 0) {
      ++hits;
      sum.add(static_cast<double>(hits) / static_cast<double>(r + 1));
    }
  }
  return sum.value() / static_cast<double>(std::min(k, relevant.size()));
}

// Publication rounding: half-to-even at 6 decimals.
inline double round_score(double x)
{
  return std::nearbyint(x * 1e6) / 1e6;
}

} // namespace arena
