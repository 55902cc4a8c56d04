#include "lensctr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lensctr {

namespace {

void check_inputs(std::span<const double> scores, std::span<const double> labels, std::size_t& n_pos) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("AUC: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  n_pos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("AUC: labels must be 0 or 1");
    n_pos += y == 1.0;
  }
  if (n_pos == 0 || n_pos == labels.size()) {
    throw std::invalid_argument("AUC undefined: need at least one positive and one negative label");
  }
}

}  // namespace

double evaluate_auc(std::span<const double> scores, std::span<const double> labels) {
  std::size_t n_pos = 0;
  check_inputs(scores, labels, n_pos);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) pos_in_group += labels[order[j++]] == 1.0;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += avg_rank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n - n_pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

double pairwise_auc(std::span<const double> scores, std::span<const double> labels) {
  std::size_t n_pos = 0;
  check_inputs(scores, labels, n_pos);
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1.0) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0.0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(scores.size() - n_pos));
}

double logloss(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("logloss: size mismatch");
  if (probs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-15, 1.0 - 1e-15);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log1p(-p);
  }
  return total / static_cast<double>(probs.size());
}

}  // namespace lensctr
