#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/regime.hpp"

namespace thermo::regime {

std::string_view to_string(RegimeLabel r) {
  switch (r) {
    case RegimeLabel::CONVERGING: return "CONVERGING";
    case RegimeLabel::ORBITING: return "ORBITING";
    case RegimeLabel::DIFFUSING: return "DIFFUSING";
    case RegimeLabel::PROGRESSING: return "PROGRESSING";
  }
  return "PROGRESSING";
}

RegimeConfig RegimeConfig::for_dimension(std::size_t dim) {
  if (dim < 2) throw ConfigError("regime entropy threshold needs a dimension of at least 2");
  RegimeConfig c;
  c.h_hi = 0.6 * std::log(static_cast<double>(dim));
  return c;
}

void RegimeConfig::validate() const {
  if (!(s_c_hi > 0 && s_c_hi <= 1)) throw ConfigError("s_c_hi must lie in (0, 1]");
  if (!(flat_band > 0)) throw ConfigError("flat_band must be positive");
  if (!(h_hi > 0)) throw ConfigError("h_hi must be positive");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (window < 4) throw ConfigError("regime window must hold at least 4 positions");
}

std::string RegimeConfig::to_json() const {
  nlohmann::ordered_json j;
  j["s_c_hi"] = s_c_hi;
  j["flat_band"] = flat_band;
  j["h_hi"] = h_hi;
  j["epsilon"] = epsilon;
  j["window"] = window;
  return j.dump();
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DomainError("state vectors differ in size");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

double cycling_score(std::span<const std::vector<double>> states, double epsilon) {
  const std::size_t n = states.size();
  if (n < 4) throw DomainError("cycling window needs at least 4 states");
  std::vector<double> all;
  all.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) all.push_back(distance(states[i], states[j]));
  const double radius = epsilon * mathcore::median(all);
  std::size_t pairs = 0, recur = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      const double d = all[i * (2 * n - i - 1) / 2 + (j - i - 1)];
      ++pairs;
      recur += d == 0.0 || d < radius;
    }
  return static_cast<double>(recur) / static_cast<double>(pairs);
}

RegimeLabel classify_regime(const Signals& s, const RegimeConfig& c) {
  const bool flat = std::fabs(s.grad_h) < c.flat_band;
  if (s.grad_h <= -c.flat_band && s.s_c < c.s_c_hi) return RegimeLabel::CONVERGING;
  if (s.s_c >= c.s_c_hi && flat) return RegimeLabel::ORBITING;
  if (s.h_abs >= c.h_hi && flat) return RegimeLabel::DIFFUSING;
  return RegimeLabel::PROGRESSING;
}

Signals signals_at(std::span<const std::vector<double>> states, std::span<const double> entropy, std::size_t t,
                   const RegimeConfig& c) {
  if (states.size() != entropy.size()) throw DomainError("states and entropy lengths differ");
  if (t >= states.size()) throw DomainError("signal position outside the series");
  const std::size_t lo = t + 1 >= c.window ? t + 1 - c.window : 0;
  const std::size_t len = t + 1 - lo;
  Signals s;
  s.h_abs = entropy[t];
  s.grad_h = mathcore::ls_slope(entropy.subspan(lo, len));
  s.s_c = len >= 4 ? cycling_score(states.subspan(lo, len), c.epsilon) : 0.0;
  return s;
}

std::vector<Signals> signal_series(std::span<const std::vector<double>> states, std::span<const double> entropy,
                                   const RegimeConfig& c) {
  std::vector<Signals> out;
  out.reserve(states.size());
  for (std::size_t t = 0; t < states.size(); ++t) out.push_back(signals_at(states, entropy, t, c));
  return out;
}

std::vector<RegimeLabel> label_trajectory(const proprio::Trajectory& tr, const RegimeConfig& c) {
  std::vector<RegimeLabel> out;
  for (const auto& s : signal_series(tr.states, tr.entropy, c)) out.push_back(classify_regime(s, c));
  return out;
}

Decision halt_veto(double halt_conf, double confusion_out, RegimeLabel regime, const VetoConfig& v) {
  const bool settled = regime == RegimeLabel::CONVERGING || regime == RegimeLabel::PROGRESSING;
  return halt_conf >= v.threshold && confusion_out < v.veto_threshold && settled ? Decision::HALT
                                                                                 : Decision::CONTINUE;
}

TraceSeries trace_series(const model::ForwardTrace<float>& trace, std::size_t lo, std::size_t hi,
                         proprio::Probe probe, proprio::Estimator estimator) {
  if (hi > trace.length || lo > hi) throw DomainError("trace rows out of range");
  if (probe == proprio::Probe::DState && trace.d_state == 0)
    throw ConfigError("d_state probe needs a model with a recurrent state");
  TraceSeries s;
  for (std::size_t t = lo; t < hi; ++t) {
    const auto row = probe == proprio::Probe::DState ? trace.state_at(t) : trace.hidden_at(t);
    std::vector<double> v(row.begin(), row.end());
    double h = 0.0;
    try {
      h = proprio::entropy(v, estimator);
    } catch (const DomainError&) {
    }
    s.states.push_back(std::move(v));
    s.entropy.push_back(h);
    s.halt.push_back(trace.halt_conf[t]);
  }
  return s;
}

}  // namespace thermo::regime
