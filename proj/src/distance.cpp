#include "stii/distance.hpp"

#include <algorithm>
#include <string>

#include "stii/error.hpp"

namespace stii {

std::size_t pair_distance(std::size_t t1, std::size_t t2, std::size_t /*target*/) {
    if (!(t1 < t2)) {
        throw Error(ErrorCode::OrderViolation,
                    "pair distance needs t1 < t2, got (" + std::to_string(t1) + ", " + std::to_string(t2) + ")");
    }
    return t2 - t1;
}

std::size_t prediction_distance(std::size_t t1, std::size_t t2, std::size_t target) noexcept {
    auto dist = [target](std::size_t t) { return t > target ? t - target : target - t; };
    return std::min(dist(t1), dist(t2));
}

}  // namespace stii
