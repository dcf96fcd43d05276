#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "thermo/errors.hpp"
#include "thermo/kernels.hpp"
#include "thermo/mathcore.hpp"

using namespace thermo;
using namespace thermo::mathcore;

namespace {

std::vector<double> random_doubles(std::size_t n, std::uint64_t seed) {
  auto rng = split_rng(seed, "test");
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-2, 2);
  return v;
}

}  // namespace

TEST_CASE("softmax of a constant length-24 vector is uniform") {
  const std::vector<double> v(24, 3.5);
  const auto p = softmax(v);
  for (double x : p) CHECK(x == doctest::Approx(1.0 / 24).epsilon(1e-15));
  CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("logsumexp shift identity and overflow safety") {
  const auto v = random_doubles(17, 1);
  for (double c : {-1000.0, -3.0, 0.5, 700.0, 1e4}) {
    std::vector<double> w(v);
    for (auto& x : w) x += c;
    CHECK(logsumexp(w) == doctest::Approx(logsumexp(v) + c).epsilon(1e-12));
  }
  const std::vector<double> big{1000.0, 1000.0};
  CHECK(logsumexp(big) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("logsumexp 3-element hand case against direct exponentiation") {
  const std::vector<double> v{0.1, -0.4, 0.25};
  const double direct = std::log(std::exp(0.1) + std::exp(-0.4) + std::exp(0.25));
  CHECK(std::abs(logsumexp(v) - direct) <= 1e-9 * std::abs(direct));
  const std::vector<float> vf{0.1f, -0.4f, 0.25f};
  CHECK(logsumexp(std::span<const float>(vf)) == doctest::Approx(direct).epsilon(1e-6));
}

TEST_CASE("softmax sums to one and empty input is a domain error") {
  const auto p = softmax(random_doubles(50, 2));
  CHECK(std::abs(sequential_sum(p) - 1.0) < 1e-12);
  CHECK_THROWS_AS(logsumexp(std::span<const double>{}), DomainError);
  CHECK_THROWS_AS(softmax(std::span<const double>{}), DomainError);
}

TEST_CASE("split_rng is deterministic per (seed, label)") {
  auto a = split_rng(7, "init"), b = split_rng(7, "init");
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct labels and seeds give distinct streams") {
  auto a = split_rng(7, "init"), b = split_rng(7, "shuffle"), c = split_rng(8, "init");
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("uniformity: chi-squared over 24 bins on 1e5 draws") {
  // Critical value of chi-squared with 23 degrees of freedom at p = 0.01.
  constexpr double kCritical = 41.638;
  for (const char* label : {"init", "shuffle", "bootstrap"}) {
    auto rng = split_rng(0, label);
    std::vector<double> counts(24, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) counts[rng.below(24)] += 1;
    double chi2 = 0;
    const double e = n / 24.0;
    for (double c : counts) chi2 += (c - e) * (c - e) / e;
    CAPTURE(label);
    CHECK(chi2 < kCritical);
  }
}

TEST_CASE("uniform() lies in [0,1) and below() in range") {
  auto rng = split_rng(3, "range");
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(rng.below(5) < 5);
  }
}

TEST_CASE("normal() has roughly zero mean and unit variance") {
  auto rng = split_rng(11, "normal");
  std::vector<double> v(20000);
  for (auto& x : v) x = rng.normal();
  CHECK(std::abs(mean(v)) < 0.03);
  CHECK(std::abs(stddev(v) - 1.0) < 0.03);
}

TEST_CASE("shuffle is a permutation") {
  auto rng = split_rng(5, "perm");
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v.begin(), v.end());
  auto s = v;
  std::sort(s.begin(), s.end());
  for (int i = 0; i < 100; ++i) CHECK(s[i] == i);
}

TEST_CASE("median, percentile, stddev, ls_slope against hand values") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK(percentile({1, 2, 3, 4, 5}, 0.25) == doctest::Approx(2.0));
  CHECK(percentile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  const std::vector<double> s{2, 4, 4, 4, 5, 5, 7, 9};
  CHECK(stddev(s) == doctest::Approx(std::sqrt(32.0 / 7.0)));
  const std::vector<double> line{1, 3, 5, 7, 9};
  CHECK(ls_slope(line) == doctest::Approx(2.0));
  CHECK_THROWS_AS(median({}), DomainError);
}

TEST_CASE("sequential_sum uses left-to-right order") {
  const std::vector<double> v{1e16, 1.0, -1e16, 1.0};
  CHECK(sequential_sum(v) == ((1e16 + 1.0) + -1e16) + 1.0);
}

namespace {

template <class T>
void naive_matmul(const std::vector<T>& a, const std::vector<T>& b, std::vector<double>& c, std::size_t m,
                  std::size_t k, std::size_t n) {
  c.assign(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += double(a[i * k + p]) * double(b[p * n + j]);
}

template <class T>
std::vector<T> rand_mat(std::size_t n, std::uint64_t seed) {
  auto rng = split_rng(seed, "mat");
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
  return v;
}

}  // namespace

TEST_CASE_TEMPLATE("kernels agree with a naive oracle and serial == parallel bitwise", T, float, double) {
  const double tol = std::is_same_v<T, float> ? 1e-4 : 1e-12;
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {65, 17, 33}, {130, 64, 24}}) {
    const auto a = rand_mat<T>(m * k, 1), b = rand_mat<T>(k * n, 2);
    std::vector<double> ref;
    naive_matmul(a, b, ref, m, k, n);
    std::vector<T> c1(m * n, T(5)), c2(m * n, T(5));
    kernels::serial::matmul<T>({a.data(), m, k}, {b.data(), k, n}, {c1.data(), m, n}, false);
    kernels::parallel::matmul<T>({a.data(), m, k}, {b.data(), k, n}, {c2.data(), m, n}, false);
    for (std::size_t i = 0; i < m * n; ++i) REQUIRE(std::abs(double(c1[i]) - ref[i]) < tol * (1 + std::abs(ref[i])));
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(T)) == 0);

    // accumulate adds onto the existing contents
    std::vector<T> acc(m * n, T(1));
    kernels::serial::matmul<T>({a.data(), m, k}, {b.data(), k, n}, {acc.data(), m, n}, true);
    for (std::size_t i = 0; i < m * n; ++i) REQUIRE(std::abs(double(acc[i]) - ref[i] - 1) < tol * (2 + std::abs(ref[i])));

    // a^T d with a: m x k, d: m x n
    const auto d = rand_mat<T>(m * n, 3);
    std::vector<T> g1(k * n, T(0)), g2(k * n, T(0));
    kernels::serial::matmul_tn<T>({a.data(), m, k}, {d.data(), m, n}, {g1.data(), k, n});
    kernels::parallel::matmul_tn<T>({a.data(), m, k}, {d.data(), m, n}, {g2.data(), k, n});
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += double(a[i * k + p]) * double(d[i * n + j]);
        REQUIRE(std::abs(double(g1[p * n + j]) - s) < tol * (1 + std::abs(s)));
      }
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(T)) == 0);

    // d b^T with d: m x n, b: k x n  -> m x k
    const auto bb = rand_mat<T>(k * n, 4);
    std::vector<T> h1(m * k, T(0)), h2(m * k, T(0));
    kernels::serial::matmul_nt<T>({d.data(), m, n}, {bb.data(), k, n}, {h1.data(), m, k});
    kernels::parallel::matmul_nt<T>({d.data(), m, n}, {bb.data(), k, n}, {h2.data(), m, k});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += double(d[i * n + j]) * double(bb[p * n + j]);
        REQUIRE(std::abs(double(h1[i * k + p]) - s) < tol * (1 + std::abs(s)));
      }
    CHECK(std::memcmp(h1.data(), h2.data(), h1.size() * sizeof(T)) == 0);

    std::vector<T> s1(n, T(0)), s2(n, T(0));
    kernels::serial::colsum<T>({d.data(), m, n}, s1);
    kernels::parallel::colsum<T>({d.data(), m, n}, s2);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += double(d[i * n + j]);
      REQUIRE(std::abs(double(s1[j]) - s) < tol * (1 + std::abs(s)));
    }
    CHECK(std::memcmp(s1.data(), s2.data(), s1.size() * sizeof(T)) == 0);
  }
}
