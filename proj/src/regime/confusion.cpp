#include <cmath>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/regime.hpp"

namespace thermo::regime {

using nlohmann::json;

void LabeledFeatures::append(const LabeledFeatures& other) {
  x.insert(x.end(), other.x.begin(), other.x.end());
  y.insert(y.end(), other.y.begin(), other.y.end());
}

std::vector<double> confusion_features(std::span<const Signals> series, std::span<const double> halt, std::size_t t,
                                       std::size_t window) {
  if (series.size() != halt.size()) throw DomainError("signal and halt series lengths differ");
  if (t >= series.size()) throw DomainError("feature position outside the series");
  std::vector<double> f(3 * window + 1, 0.0);
  for (std::size_t k = 0; k < window; ++k) {
    // slot k holds position t - (window - 1) + k
    if (t + k + 1 < window) continue;
    const auto& s = series[t + k + 1 - window];
    f[3 * k] = s.s_c;
    f[3 * k + 1] = s.grad_h;
    f[3 * k + 2] = s.h_abs;
  }
  f[3 * window] = halt[t];
  return f;
}

double ConfusionHead::predict(std::span<const double> features) const {
  if (features.size() != weights.size()) throw DomainError("confusion feature count mismatch");
  double z = bias;
  for (std::size_t k = 0; k < weights.size(); ++k) z += weights[k] * (features[k] - mean[k]) / scale[k];
  // Keep the output strictly inside (0, 1).
  z = std::clamp(z, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-z));
}

std::string ConfusionHead::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["scale"] = scale;
  j["weights"] = weights;
  j["bias"] = bias;
  return j.dump();
}

ConfusionHead ConfusionHead::from_json(std::string_view text) {
  const auto j = json::parse(text);
  ConfusionHead h;
  h.mean = j.at("mean").get<std::vector<double>>();
  h.scale = j.at("scale").get<std::vector<double>>();
  h.weights = j.at("weights").get<std::vector<double>>();
  h.bias = j.at("bias");
  if (h.mean.size() != h.weights.size() || h.scale.size() != h.weights.size())
    throw ParseError("confusion head vectors differ in length", 0);
  return h;
}

ConfusionHead train_confusion_head(const LabeledFeatures& data, const ConfusionTrainOptions& o) {
  const std::size_t n = data.x.size();
  if (n == 0 || data.y.size() != n) throw DomainError("confusion training set is empty or mislabelled");
  std::size_t pos = 0;
  for (auto v : data.y) pos += v != 0;
  if (pos == 0 || pos == n) throw DegenerateError("confusion training set holds a single class");
  const std::size_t m = data.x[0].size();
  for (const auto& row : data.x)
    if (row.size() != m) throw DomainError("confusion feature rows differ in size");

  ConfusionHead h;
  h.mean.assign(m, 0.0);
  h.scale.assign(m, 0.0);
  h.weights.assign(m, 0.0);
  for (const auto& row : data.x)
    for (std::size_t k = 0; k < m; ++k) h.mean[k] += row[k];
  for (auto& v : h.mean) v /= static_cast<double>(n);
  for (const auto& row : data.x)
    for (std::size_t k = 0; k < m; ++k) h.scale[k] += (row[k] - h.mean[k]) * (row[k] - h.mean[k]);
  for (auto& v : h.scale) v = v > 0 ? std::sqrt(v / static_cast<double>(n)) : 1.0;

  std::vector<std::vector<double>> z(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k) z[i][k] = (data.x[i][k] - h.mean[k]) / h.scale[k];

  std::vector<double> gw(m);
  for (int it = 0; it < o.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double a = h.bias;
      for (std::size_t k = 0; k < m; ++k) a += h.weights[k] * z[i][k];
      const double err = 1.0 / (1.0 + std::exp(-a)) - static_cast<double>(data.y[i] != 0);
      for (std::size_t k = 0; k < m; ++k) gw[k] += err * z[i][k];
      gb += err;
    }
    for (std::size_t k = 0; k < m; ++k)
      h.weights[k] -= o.lr * (gw[k] / static_cast<double>(n) + o.l2 * h.weights[k]);
    h.bias -= o.lr * gb / static_cast<double>(n);
  }
  return h;
}

ClassifierScore score_confusion_head(const ConfusionHead& head, const LabeledFeatures& data, double threshold) {
  ClassifierScore s;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    const bool pred = head.predict(data.x[i]) >= threshold;
    const bool gold = data.y[i] != 0;
    s.tp += pred && gold;
    s.fp += pred && !gold;
    s.fn += !pred && gold;
    s.tn += !pred && !gold;
  }
  const auto tp = static_cast<double>(s.tp);
  s.precision = s.tp + s.fp ? tp / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn ? tp / static_cast<double>(s.tp + s.fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

namespace {

std::vector<double> features_at_position(const model::ForwardTrace<float>& trace, std::size_t pos,
                                         const SampleOptions& o, RegimeLabel* label) {
  const std::size_t w = o.regime.window;
  const std::size_t span = 2 * w - 1;
  const std::size_t lo = pos + 1 >= span ? pos + 1 - span : 0;
  const auto series = trace_series(trace, lo, pos + 1, o.probe, o.estimator);
  const auto signals = signal_series(series.states, series.entropy, o.regime);
  if (label) *label = classify_regime(signals.back(), o.regime);
  return confusion_features(signals, series.halt, pos - lo, w);
}

}  // namespace

LabeledFeatures confusion_samples(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                  const SampleOptions& o) {
  o.regime.validate();
  model::GenerationOptions g;
  g.max_len = o.max_len;
  g.policy = model::HaltPolicy::Token;
  std::vector<LabeledFeatures> per(examples.size());
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto& ex = examples[i];
    const auto gen = model::generate(params, ex.prompt, g);
    const std::size_t p = ex.prompt.size();
    for (std::size_t t = p - 1; t < gen.trace.length; ++t) {
      if (gen.trace.halt_conf[t] < o.threshold) continue;
      const std::span<const taskgen::Token> so_far(gen.tokens.data() + p, t + 1 - p);
      const auto ans = taskgen::parse_answer(so_far);
      per[i].x.push_back(features_at_position(gen.trace, t, o, nullptr));
      per[i].y.push_back(!(ans && *ans == ex.answer));
    }
  }
  LabeledFeatures out;
  for (const auto& f : per) out.append(f);
  return out;
}

std::function<bool(const model::ForwardTrace<float>&, std::size_t)> make_veto_controller(
    ConfusionHead head, const SampleOptions& options, const VetoConfig& veto) {
  options.regime.validate();
  return [head = std::move(head), options, veto](const model::ForwardTrace<float>& trace, std::size_t pos) {
    const double halt = trace.halt_conf[pos];
    if (halt < veto.threshold) return false;
    RegimeLabel label{};
    const auto f = features_at_position(trace, pos, options, &label);
    return halt_veto(halt, head.predict(f), label, veto) == Decision::HALT;
  };
}

std::vector<ControllerStep> controller_log(const ConfusionHead& head, const model::ForwardTrace<float>& trace,
                                           std::size_t start, const SampleOptions& options, const VetoConfig& veto) {
  std::vector<ControllerStep> log;
  for (std::size_t t = start; t < trace.length; ++t) {
    ControllerStep s;
    s.position = t;
    s.halt = trace.halt_conf[t];
    s.confusion = head.predict(features_at_position(trace, t, options, &s.regime));
    s.decision = halt_veto(s.halt, s.confusion, s.regime, veto);
    log.push_back(s);
  }
  return log;
}

}  // namespace thermo::regime
