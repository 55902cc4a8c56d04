#pragma once

#include <span>

namespace lensctr {

/// Tie-aware ROC AUC (normalised Mann-Whitney U). Throws std::invalid_argument
/// ("AUC undefined ...") unless both classes are present.
double evaluate_auc(std::span<const double> scores, std::span<const double> labels);

/// O(N^2) pairwise count; ties score one half.
double pairwise_auc(std::span<const double> scores, std::span<const double> labels);

/// Mean binary cross-entropy of probabilities, clipped to [1e-15, 1 - 1e-15].
double logloss(std::span<const double> probs, std::span<const double> labels);

}  // namespace lensctr
