#pragma once

#include <span>

#include "onerec/numerics/tensor.hpp"

namespace onerec {

// Rank-based AUC (Mann-Whitney) with average ranks on ties.
// Requires both classes present.
Real rocAuc(std::span<const Real> scores, std::span<const int> labels);

// Spearman rank correlation with average ranks on ties.
Real spearman(std::span<const Real> a, std::span<const Real> b);

}  // namespace onerec
