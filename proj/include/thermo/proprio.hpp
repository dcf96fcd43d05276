#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "thermo/model.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::proprio {

enum class Probe { DState, DModel };
enum class Estimator { SquaredMagnitude, Softmax };

std::string_view to_string(Probe p);
Probe probe_from_string(std::string_view s);  // "d_state" | "d_model"
std::string_view to_string(Estimator e);

/// H = -sum p_i ln p_i with p_i = v_i^2 / sum_j v_j^2.
double state_entropy(std::span<const double> v);
/// Entropy of softmax(v).
double softmax_entropy(std::span<const double> v);
double entropy(std::span<const double> v, Estimator e);

/// Product-moment correlation. Throws DegenerateError for a constant input.
double pearson_r(std::span<const double> x, std::span<const double> y);

struct LagResult {
  int tau = 0;
  std::vector<double> curve;  // index k <-> lag k - max_lag; NaN where undefined
};

/// a(t) = halt(t) - halt(t-1), b(t) = -(entropy(t) - entropy(t-1)).
/// curve(L) = pearson over the overlap of a(t + L) and b(t); tau is the
/// first lag (scanning -max_lag .. +max_lag) with the largest value.
LagResult derivative_xcorr_lag(std::span<const double> halt, std::span<const double> entropy, int max_lag = 5);

struct Trajectory {
  std::size_t id = 0;
  Probe probe = Probe::DModel;
  std::size_t start = 0;  // absolute position of entropy[0] in the sequence
  std::vector<double> entropy;
  std::vector<double> halt;
  std::vector<std::vector<double>> states;  // probe vectors, one per position
  bool correct = false;
};

/// One trajectory per example from teacher-forced forward passes, over the
/// positions from the last prompt token to HALT inclusive.
std::vector<Trajectory> collect_trajectories(const model::Parameters& params,
                                             std::span<const taskgen::Example> examples, Probe probe,
                                             Estimator estimator = Estimator::SquaredMagnitude);

/// Builds a trajectory from an existing trace (no model call).
Trajectory trajectory_from_trace(const model::ForwardTrace<float>& trace, const taskgen::Example& ex, Probe probe,
                                 Estimator estimator, std::size_t id, bool correct);

struct BootstrapCI {
  double low = 0.0, high = 0.0;
};
/// Percentile bootstrap of the mean.
BootstrapCI bootstrap_mean_ci(std::span<const double> values, std::size_t resamples, std::uint64_t seed,
                              double level = 0.95);

struct MannWhitney {
  double u = 0.0;
  double p = 1.0;
  bool exact = false;
};
/// U of sample a (midranks for ties); exact two-sided p when n_a + n_b <= 20,
/// otherwise a tie-corrected normal approximation with continuity correction.
MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct CorrelationStats {
  bool valid = false;
  std::string invalid_reason;
  double accuracy = 0.0;
  std::size_t n = 0;         // trajectories with a defined r
  std::size_t excluded = 0;  // undefined r
  std::size_t lag_excluded = 0;
  double mean_r = 0.0, median_r = 0.0, r_sd = 0.0, frac_sig = 0.0;
  double tau_drv = 0.0;       // median per-example tau
  double tau_mean = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  std::optional<double> u_stat, p_value;  // vs a comparison group
  std::vector<double> per_example_r;
  std::vector<int> per_example_tau;

  std::string to_json() const;
  static CorrelationStats from_json(std::string_view text);
};

struct StatsOptions {
  double accuracy_gate = 0.95;
  std::size_t resamples = 10000;
  std::uint64_t seed = 0;
  int max_lag = 5;
  double sig_threshold = 0.3;
};

/// Group-level coupling statistics. Throws InsufficientDataError when fewer
/// than 10 trajectories have a defined correlation. When the accuracy is
/// below the gate the result is marked invalid and carries no numbers.
CorrelationStats group_stats(std::span<const Trajectory> trajectories, double accuracy,
                             const StatsOptions& options = {});

/// Fills u_stat/p_value of `a` from the per-example r of both groups.
void compare_groups(CorrelationStats& a, const CorrelationStats& b);

/// Columnar dump: example_id,t,entropy,halt[,regime]
void write_trajectory_csv(std::ostream& os, std::span<const Trajectory> trajectories,
                          const std::vector<std::vector<std::string>>* regimes = nullptr);

}  // namespace thermo::proprio
