#include "rtify/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rtify/error.hpp"

namespace rtify::stats {

double mean(std::span<const double> x) {
  if (x.empty()) throw ShapeError("mean: empty input");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("pearson: need two equal-length samples");
  const double mx = mean(x), my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw NumericError("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  Correlation c;
  c.n = x.size();
  c.rho = pearson(ranks(x), ranks(y));
  if (c.n < 3) return c;
  const double df = static_cast<double>(c.n) - 2.0;
  const double r = std::clamp(c.rho, -1.0, 1.0);
  if (std::abs(r) >= 1.0) {
    c.p_value = 0.0;
    return c;
  }
  const double t = r * std::sqrt(df / (1.0 - r * r));
  boost::math::students_t dist(df);
  c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return c;
}

}  // namespace rtify::stats
