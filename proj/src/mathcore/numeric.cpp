#include <algorithm>
#include <cmath>

#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"

namespace thermo::mathcore {

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw DomainError("logsumexp of empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

float logsumexp(std::span<const float> v) {
  if (v.empty()) throw DomainError("logsumexp of empty input");
  const float m = *std::max_element(v.begin(), v.end());
  if (std::isinf(m)) return m;
  float s = 0.0f;
  for (float x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::vector<double> softmax(std::span<const double> v) {
  const double lse = logsumexp(v);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] - lse);
  return out;
}

double sequential_sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

double mean(std::span<const double> v) {
  if (v.empty()) throw DomainError("mean of empty input");
  return sequential_sum(v) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw DomainError("percentile of empty input");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

double ls_slope(std::span<const double> y) {
  const std::size_t n = y.size();
  if (n < 2) return 0.0;
  const double xm = 0.5 * static_cast<double>(n - 1);
  const double ym = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (y[i] - ym);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace thermo::mathcore
