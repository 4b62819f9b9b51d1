#ifndef RCM_LOG_MATH_HPP
#define RCM_LOG_MATH_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace rcm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

// log(sum_i exp(v[i])). Returns -inf for an empty range or all -inf entries.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return kNegInf;
  const double top = *std::max_element(v.begin(), v.end());
  if (top == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - top);
  return top + std::log(sum);
}

// Relative difference |a - b| / max(|a|, |b|), with 0 when both are 0.
inline double relative_difference(double a, double b) {
  if (a == b) return 0.0;
  const double scale = std::max(std::abs(a), std::abs(b));
  return std::abs(a - b) / scale;
}

}  // namespace rcm

#endif  // RCM_LOG_MATH_HPP
