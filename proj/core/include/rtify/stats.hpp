#pragma once

#include <span>
#include <vector>

namespace rtify::stats {

double mean(std::span<const double> x);

/// Ranks starting at 1; ties share their average rank.
std::vector<double> ranks(std::span<const double> x);

double pearson(std::span<const double> x, std::span<const double> y);

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, Student-t approximation
  std::size_t n = 0;
};

Correlation spearman(std::span<const double> x, std::span<const double> y);

}  // namespace rtify::stats
