#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/proprio.hpp"

namespace thermo::proprio {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Probe p) { return p == Probe::DState ? "d_state" : "d_model"; }

Probe probe_from_string(std::string_view s) {
  if (s == "d_state" || s == "dstate") return Probe::DState;
  if (s == "d_model" || s == "dmodel") return Probe::DModel;
  throw ConfigError("unknown probe '" + std::string(s) + "' (expected d_state or d_model)");
}

std::string_view to_string(Estimator e) { return e == Estimator::SquaredMagnitude ? "squared" : "softmax"; }

double state_entropy(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) total += x * x;
  if (!(total > 0.0)) throw DomainError("entropy of a zero vector");
  double h = 0.0;
  for (double x : v) {
    const double p = x * x / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double softmax_entropy(std::span<const double> v) {
  if (v.empty()) throw DomainError("entropy of an empty vector");
  const double lse = mathcore::logsumexp(v);
  double h = 0.0;
  for (double x : v) {
    const double lp = x - lse;
    h -= std::exp(lp) * lp;
  }
  return h;
}

double entropy(std::span<const double> v, Estimator e) {
  return e == Estimator::SquaredMagnitude ? state_entropy(v) : softmax_entropy(v);
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson_r: lengths differ");
  if (x.size() < 3) throw DomainError("pearson_r: need at least 3 points");
  const double mx = mathcore::mean(x), my = mathcore::mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateError("pearson_r: constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LagResult derivative_xcorr_lag(std::span<const double> halt, std::span<const double> entropy, int max_lag) {
  if (max_lag < 0) throw DomainError("max_lag must be nonnegative");
  if (halt.size() != entropy.size()) throw DomainError("halt and entropy lengths differ");
  const std::size_t n = halt.size();
  if (n < static_cast<std::size_t>(max_lag) + 3) throw DomainError("series too short for the lag window");
  std::vector<double> a(n - 1), b(n - 1);
  bool a_zero = true, b_zero = true;
  for (std::size_t t = 1; t < n; ++t) {
    a[t - 1] = halt[t] - halt[t - 1];
    b[t - 1] = -(entropy[t] - entropy[t - 1]);
    a_zero = a_zero && a[t - 1] == 0.0;
    b_zero = b_zero && b[t - 1] == 0.0;
  }
  if (a_zero || b_zero) throw DegenerateError("derivative identically zero; lag undefined");

  LagResult r;
  const auto m = static_cast<std::ptrdiff_t>(a.size());
  double best = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    std::vector<double> xa, xb;
    for (std::ptrdiff_t t = 0; t < m; ++t) {
      const std::ptrdiff_t s = t + lag;
      if (s < 0 || s >= m) continue;
      xa.push_back(a[static_cast<std::size_t>(s)]);
      xb.push_back(b[static_cast<std::size_t>(t)]);
    }
    double c = std::numeric_limits<double>::quiet_NaN();
    if (xa.size() >= 3) {
      try {
        c = pearson_r(xa, xb);
      } catch (const DegenerateError&) {
      }
    }
    r.curve.push_back(c);
    if (!std::isnan(c) && c > best) {
      best = c;
      r.tau = lag;
      found = true;
    }
  }
  if (!found) throw DegenerateError("no lag with a defined correlation");
  return r;
}

BootstrapCI bootstrap_mean_ci(std::span<const double> values, std::size_t resamples, std::uint64_t seed,
                              double level) {
  if (values.empty()) throw InsufficientDataError("bootstrap of an empty sample");
  if (!(level > 0 && level < 1)) throw DomainError("confidence level must lie in (0, 1)");
  auto rng = mathcore::split_rng(seed, "bootstrap");
  std::vector<double> means(resamples);
  const std::size_t n = values.size();
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  const double tail = (1.0 - level) / 2.0;
  return {mathcore::percentile(means, tail), mathcore::percentile(means, 1.0 - tail)};
}

namespace {

// Midranks of the pooled sample, doubled so every rank is an integer.
std::vector<long> doubled_midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return pooled[i] < pooled[j]; });
  std::vector<long> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
    const long twice = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = twice;
    i = j + 1;
  }
  return r;
}

}  // namespace

MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("mann_whitney_u: empty sample");
  const std::size_t na = a.size(), nb = b.size(), N = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r2 = doubled_midranks(pooled);
  long ra2 = 0;
  for (std::size_t i = 0; i < na; ++i) ra2 += r2[i];
  MannWhitney out;
  const double nad = static_cast<double>(na), nbd = static_cast<double>(nb);
  out.u = static_cast<double>(ra2) / 2.0 - nad * (nad + 1) / 2.0;
  const double mu = nad * nbd / 2.0;
  const double dev = std::fabs(out.u - mu);

  if (N <= 20) {
    // Distribution of the doubled rank sum over all na-subsets.
    const long max_sum = std::accumulate(r2.begin(), r2.end(), 0L);
    std::vector<std::vector<double>> ways(na + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = std::min(i + 1, na); k >= 1; --k)
        for (long s = max_sum; s >= r2[i]; --s)
          ways[k][static_cast<std::size_t>(s)] += ways[k - 1][static_cast<std::size_t>(s - r2[i])];
    double total = 0.0, extreme = 0.0;
    for (long s = 0; s <= max_sum; ++s) {
      const double w = ways[na][static_cast<std::size_t>(s)];
      if (w == 0.0) continue;
      total += w;
      const double u = static_cast<double>(s) / 2.0 - nad * (nad + 1) / 2.0;
      if (std::fabs(u - mu) >= dev - 1e-9) extreme += w;
    }
    out.p = std::min(1.0, extreme / total);
    out.exact = true;
    return out;
  }

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < N;) {
    std::size_t j = i;
    while (j + 1 < N && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  const double Nd = static_cast<double>(N);
  const double var = nad * nbd / 12.0 * ((Nd + 1) - ties / (Nd * (Nd - 1)));
  if (!(var > 0)) {
    out.p = 1.0;
    return out;
  }
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  out.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

CorrelationStats group_stats(std::span<const Trajectory> trajectories, double accuracy, const StatsOptions& o) {
  CorrelationStats s;
  s.accuracy = accuracy;
  if (accuracy < o.accuracy_gate) {
    s.valid = false;
    s.invalid_reason = "accuracy below gate";
    return s;
  }
  std::vector<double> taus;
  for (const auto& tr : trajectories) {
    try {
      s.per_example_r.push_back(pearson_r(tr.entropy, tr.halt));
    } catch (const DegenerateError&) {
      ++s.excluded;
    } catch (const DomainError&) {
      ++s.excluded;
    }
    try {
      const auto lag = derivative_xcorr_lag(tr.halt, tr.entropy, o.max_lag);
      s.per_example_tau.push_back(lag.tau);
      taus.push_back(lag.tau);
    } catch (const DegenerateError&) {
      ++s.lag_excluded;
    } catch (const DomainError&) {
      ++s.lag_excluded;
    }
  }
  s.n = s.per_example_r.size();
  if (s.n < 10)
    throw InsufficientDataError("only " + std::to_string(s.n) + " trajectories with a defined correlation");
  const auto& r = s.per_example_r;
  s.mean_r = mathcore::mean(r);
  s.median_r = mathcore::median(r);
  s.r_sd = mathcore::stddev(r);
  s.frac_sig = static_cast<double>(std::count_if(r.begin(), r.end(), [&](double x) {
                 return std::fabs(x) > o.sig_threshold;
               })) /
               static_cast<double>(s.n);
  if (!taus.empty()) {
    s.tau_drv = mathcore::median(taus);
    s.tau_mean = mathcore::mean(taus);
  } else {
    s.tau_drv = s.tau_mean = std::numeric_limits<double>::quiet_NaN();
  }
  const auto ci = bootstrap_mean_ci(r, o.resamples, o.seed);
  s.ci_low = ci.low;
  s.ci_high = ci.high;
  s.valid = true;
  return s;
}

void compare_groups(CorrelationStats& a, const CorrelationStats& b) {
  const auto mw = mann_whitney_u(a.per_example_r, b.per_example_r);
  a.u_stat = mw.u;
  a.p_value = mw.p;
}

namespace {

json num_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
double num_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

std::string CorrelationStats::to_json() const {
  ordered_json j;
  j["valid"] = valid;
  if (!valid) j["invalid_reason"] = invalid_reason;
  j["accuracy"] = accuracy;
  j["n"] = n;
  j["excluded"] = excluded;
  j["lag_excluded"] = lag_excluded;
  j["mean r"] = mean_r;
  j["median r"] = median_r;
  j["frac |r|>0.3"] = frac_sig;
  j["tau_drv"] = num_or_null(tau_drv);
  j["tau_mean"] = num_or_null(tau_mean);
  j["r_sd"] = r_sd;
  j["ci_low"] = ci_low;
  j["ci_high"] = ci_high;
  j["u_stat"] = u_stat ? json(*u_stat) : json(nullptr);
  j["p_value"] = p_value ? json(*p_value) : json(nullptr);
  j["per_example_r"] = per_example_r;
  j["per_example_tau"] = per_example_tau;
  return j.dump(2);
}

CorrelationStats CorrelationStats::from_json(std::string_view text) {
  const auto j = json::parse(text);
  CorrelationStats s;
  s.valid = j.at("valid");
  if (j.contains("invalid_reason")) s.invalid_reason = j.at("invalid_reason");
  s.accuracy = j.at("accuracy");
  s.n = j.at("n");
  s.excluded = j.at("excluded");
  s.lag_excluded = j.at("lag_excluded");
  s.mean_r = j.at("mean r");
  s.median_r = j.at("median r");
  s.frac_sig = j.at("frac |r|>0.3");
  s.tau_drv = num_from(j.at("tau_drv"));
  s.tau_mean = num_from(j.at("tau_mean"));
  s.r_sd = j.at("r_sd");
  s.ci_low = j.at("ci_low");
  s.ci_high = j.at("ci_high");
  if (!j.at("u_stat").is_null()) s.u_stat = j.at("u_stat").get<double>();
  if (!j.at("p_value").is_null()) s.p_value = j.at("p_value").get<double>();
  s.per_example_r = j.at("per_example_r").get<std::vector<double>>();
  s.per_example_tau = j.at("per_example_tau").get<std::vector<int>>();
  return s;
}

}  // namespace thermo::proprio
