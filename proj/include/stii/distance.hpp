#pragma once
// Positional distances between an interacting pair and the prediction target.

#include <cstddef>

namespace stii {

// t2 - t1; throws OrderViolation unless t1 < t2.
std::size_t pair_distance(std::size_t t1, std::size_t t2, std::size_t target);

// min(|target - t1|, |target - t2|).
std::size_t prediction_distance(std::size_t t1, std::size_t t2, std::size_t target) noexcept;

}  // namespace stii
