#pragma once

#include <array>

namespace catface {

// Canonical attribute order. Every per-attribute vector in the codebase
// (labels, predictions, loss weights, report columns) uses this order.
constexpr int kNumAttributes = 5;

inline constexpr std::array<const char*, kNumAttributes> kAttributeNames = {
    "Bald", "BigNose", "Chubby", "Male", "NarrowEye"};

}  // namespace catface
