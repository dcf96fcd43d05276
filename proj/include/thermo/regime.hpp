#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "thermo/model.hpp"
#include "thermo/proprio.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::regime {

struct Signals {
  double s_c = 0.0;     // cycling score in [0, 1]
  double grad_h = 0.0;  // least-squares entropy slope over the window, nats/token
  double h_abs = 0.0;   // entropy at the window end
};

enum class RegimeLabel { CONVERGING, ORBITING, DIFFUSING, PROGRESSING };

std::string_view to_string(RegimeLabel r);

struct RegimeConfig {
  double s_c_hi = 0.5;
  double flat_band = 0.02;
  double h_hi = 0.6 * 2.0794415416798357;  // 60% of ln 8
  double epsilon = 0.5;
  std::size_t window = 8;

  /// Defaults with h_hi = 0.6 ln(dim).
  static RegimeConfig for_dimension(std::size_t dim);
  void validate() const;
  std::string to_json() const;
};

/// Recurrence rate: fraction of pairs (i, j), j >= i + 2, whose distance is
/// below epsilon times the median distance over all pairs. Pairs at distance
/// zero always recur. Needs at least 4 vectors.
double cycling_score(std::span<const std::vector<double>> states, double epsilon = 0.5);

/// First match wins: CONVERGING (grad < -flat, s_c < hi), ORBITING (s_c >= hi,
/// |grad| < flat), DIFFUSING (h >= h_hi, |grad| < flat), else PROGRESSING.
RegimeLabel classify_regime(const Signals& s, const RegimeConfig& c);

/// Signals over the window ending at t. Windows shorter than 4 give s_c = 0.
Signals signals_at(std::span<const std::vector<double>> states, std::span<const double> entropy, std::size_t t,
                   const RegimeConfig& c);
std::vector<Signals> signal_series(std::span<const std::vector<double>> states, std::span<const double> entropy,
                                   const RegimeConfig& c);
std::vector<RegimeLabel> label_trajectory(const proprio::Trajectory& tr, const RegimeConfig& c);

/// Signals of the last `window` positions ending at t (zeros before the
/// series start), then halt_conf at t: 3 * window + 1 values.
std::vector<double> confusion_features(std::span<const Signals> series, std::span<const double> halt, std::size_t t,
                                       std::size_t window);

struct LabeledFeatures {
  std::vector<std::vector<double>> x;
  std::vector<std::uint8_t> y;
  void append(const LabeledFeatures& other);
};

/// Standardized logistic regression.
struct ConfusionHead {
  std::vector<double> mean, scale, weights;
  double bias = 0.0;

  double predict(std::span<const double> features) const;  // in (0, 1)
  std::string to_json() const;
  static ConfusionHead from_json(std::string_view text);
};

struct ConfusionTrainOptions {
  int iterations = 2000;
  double lr = 0.5;
  double l2 = 1e-3;
};

/// Full-batch gradient descent on the mean log loss. Throws DegenerateError
/// when only one class is present.
ConfusionHead train_confusion_head(const LabeledFeatures& data, const ConfusionTrainOptions& options = {});

struct ClassifierScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};
ClassifierScore score_confusion_head(const ConfusionHead& head, const LabeledFeatures& data, double threshold = 0.5);

enum class Decision { HALT, CONTINUE };

struct VetoConfig {
  double threshold = 0.5;       // halt confidence
  double veto_threshold = 0.5;  // confusion output
};

Decision halt_veto(double halt_conf, double confusion_out, RegimeLabel regime, const VetoConfig& v = {});

/// Probe vectors and entropies of generation trace rows [lo, hi).
struct TraceSeries {
  std::vector<std::vector<double>> states;
  std::vector<double> entropy;
  std::vector<double> halt;
};
TraceSeries trace_series(const model::ForwardTrace<float>& trace, std::size_t lo, std::size_t hi,
                         proprio::Probe probe, proprio::Estimator estimator);

struct SampleOptions {
  proprio::Probe probe = proprio::Probe::DState;
  proprio::Estimator estimator = proprio::Estimator::SquaredMagnitude;
  RegimeConfig regime;
  double threshold = 0.5;
  std::size_t max_len = 128;
};

/// Free generations of each example; every position from the last prompt
/// token on whose halt confidence reaches the threshold becomes a sample,
/// labelled 1 when the answer generated so far is wrong or absent.
LabeledFeatures confusion_samples(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                  const SampleOptions& options);

/// Generation controller that stops iff halt_veto says HALT. Stateless, so
/// one instance may serve concurrent generations.
std::function<bool(const model::ForwardTrace<float>&, std::size_t)> make_veto_controller(
    ConfusionHead head, const SampleOptions& options, const VetoConfig& veto);

/// Per-position controller log: position, halt, confusion, regime, decision.
struct ControllerStep {
  std::size_t position = 0;
  double halt = 0.0, confusion = 0.0;
  RegimeLabel regime = RegimeLabel::PROGRESSING;
  Decision decision = Decision::CONTINUE;
};
std::vector<ControllerStep> controller_log(const ConfusionHead& head, const model::ForwardTrace<float>& trace,
                                           std::size_t start, const SampleOptions& options, const VetoConfig& veto);

}  // namespace thermo::regime
