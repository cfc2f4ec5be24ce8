#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "embcomp/types.hpp"

namespace embcomp {

inline constexpr double kLogLossClamp = 1e-12;

inline double logistic(double z) noexcept {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability that a
/// random positive scores above a random negative, tied pairs counting one half.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ConsistencyError("auc: scores/labels length mismatch");
  const std::size_t m = scores.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positives = 0;
  double negatives = 0;
  double wins = 0;  // sum over positives of (#negatives below + half the tied negatives)
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    double pos_in_group = 0;
    double neg_in_group = 0;
    while (j < m && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos_in_group : neg_in_group) += 1;
      ++j;
    }
    wins += pos_in_group * (negatives + 0.5 * neg_in_group);
    positives += pos_in_group;
    negatives += neg_in_group;
    i = j;
  }
  if (positives == 0 || negatives == 0)
    throw UndefinedMetricError("auc: need at least one positive and one negative label");
  return wins / (positives * negatives);
}

/// Mean negative log-likelihood; probabilities clamped to [1e-12, 1 - 1e-12].
inline double log_loss(std::span<const double> probabilities, std::span<const std::uint8_t> labels) {
  if (probabilities.size() != labels.size())
    throw ConsistencyError("log_loss: probabilities/labels length mismatch");
  if (probabilities.empty()) throw InvalidInputError("log_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = std::clamp(probabilities[i], kLogLossClamp, 1.0 - kLogLossClamp);
    total += labels[i] ? std::log(p) : std::log1p(-p);
  }
  return -total / static_cast<double>(probabilities.size());
}

}  // namespace embcomp
