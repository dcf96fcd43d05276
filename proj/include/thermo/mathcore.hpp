#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

namespace thermo::mathcore {

/// Counter-based 64-bit generator: draw i is a pure function of (key, i).
/// Satisfies UniformRandomBitGenerator, but all library code draws through
/// the member helpers so streams are bit-stable across standard libraries.
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();

  /// Independent child stream keyed by `label`.
  SeededRng split(std::string_view label) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  template <class It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

SeededRng split_rng(std::uint64_t seed, std::string_view label);

double logsumexp(std::span<const double> v);
std::vector<double> softmax(std::span<const double> v);

// Single-precision variants used inside the training loop.
float logsumexp(std::span<const float> v);

/// Sequential (left-to-right) sum; every reduction in the library goes
/// through a fixed order so results are bit-stable run to run.
double sequential_sum(std::span<const double> v);

double mean(std::span<const double> v);
double median(std::vector<double> v);
/// Sample standard deviation (n - 1 denominator); 0 for n < 2.
double stddev(std::span<const double> v);
/// Percentile with linear interpolation between order statistics, q in [0, 1].
double percentile(std::vector<double> v, double q);

/// Least-squares slope of y against 0..n-1.
double ls_slope(std::span<const double> y);

}  // namespace thermo::mathcore
