#include "thermo/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"

namespace thermo::loss {

namespace {

constexpr double kClamp = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kClamp, 1.0 - kClamp); }

}  // namespace

void LossConfig::validate() const {
  if (!std::isfinite(alpha) || alpha < 0) throw ConfigError("alpha must be finite and nonnegative");
  if (!std::isfinite(beta) || beta < 0) throw ConfigError("beta must be finite and nonnegative");
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  ce += o.ce;
  energy += o.energy;
  halt += o.halt;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const { return {ce * s, energy * s, halt * s, total * s}; }

double cross_entropy(std::span<const double> logits, std::size_t vocab, std::span<const taskgen::Token> targets,
                     std::span<const std::uint8_t> mask) {
  if (mask.size() != targets.size()) throw DomainError("mask and targets differ in length");
  if (logits.size() != targets.size() * vocab) throw DomainError("logits do not match targets");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab)
      throw DomainError("target id " + std::to_string(targets[t]) + " outside vocabulary");
    const auto row = logits.subspan(t * vocab, vocab);
    sum += mathcore::logsumexp(row) - row[static_cast<std::size_t>(targets[t])];
    ++count;
  }
  if (count == 0) throw DomainError("cross-entropy over an all-masked sequence");
  return sum / static_cast<double>(count);
}

double energy_term(std::span<const double> halt_conf, std::size_t optimal_stop, double alpha) {
  if (optimal_stop >= halt_conf.size()) throw DomainError("optimal stop outside the sequence");
  double s = 0.0;
  for (std::size_t t = 0; t < halt_conf.size(); ++t) s += t < optimal_stop ? halt_conf[t] : 1.0 - halt_conf[t];
  return alpha * s;
}

double halt_bce(std::span<const double> halt_conf, std::span<const std::uint8_t> labels, double beta) {
  if (halt_conf.size() != labels.size()) throw DomainError("halt labels differ in length");
  if (halt_conf.empty()) throw DomainError("empty halt sequence");
  double s = 0.0;
  for (std::size_t t = 0; t < halt_conf.size(); ++t) {
    const double p = clamp_prob(halt_conf[t]);
    s -= labels[t] ? std::log(p) : std::log(1.0 - p);
  }
  return beta * s / static_cast<double>(halt_conf.size());
}

namespace {

struct Aligned {
  std::vector<taskgen::Token> tokens;
  std::vector<std::uint8_t> ce_mask;  // per logit row 0..L-2
  std::vector<std::uint8_t> labels;
  std::size_t w0 = 0;
};

template <class T>
Aligned align(const model::ForwardTrace<T>& trace, const taskgen::Example& ex, const LossConfig& config) {
  Aligned a;
  a.tokens = ex.tokens();
  const std::size_t L = a.tokens.size();
  if (trace.length != L) throw DomainError("trace length does not match example");
  if (ex.prompt.empty() || L < 2) throw DomainError("example too short");
  a.w0 = window_start(ex);
  a.ce_mask.assign(L - 1, 1);
  if (config.mask_prompt)
    for (std::size_t t = 0; t < a.w0; ++t) a.ce_mask[t] = 0;
  a.labels = taskgen::halt_labels(ex);
  if (ex.optimal_stop < a.w0 || ex.optimal_stop >= L) throw DomainError("optimal stop outside the trace");
  return a;
}

template <class T>
LossBreakdown evaluate(const model::ForwardTrace<T>& trace, const taskgen::Example& ex, const LossConfig& config,
                       const Aligned& a) {
  const std::size_t L = a.tokens.size(), V = trace.vocab;
  const std::vector<double> logits(trace.logits.begin(), trace.logits.begin() + static_cast<std::ptrdiff_t>((L - 1) * V));
  const std::vector<double> conf(trace.halt_conf.begin(), trace.halt_conf.end());
  LossBreakdown out;
  out.ce = cross_entropy(logits, V, std::span(a.tokens).subspan(1), a.ce_mask);
  out.energy = energy_term(std::span(conf).subspan(a.w0), ex.optimal_stop - a.w0, config.alpha);
  out.halt = halt_bce(conf, a.labels, config.beta);
  out.total = out.ce + out.energy + out.halt;
  return out;
}

}  // namespace

template <class T>
LossBreakdown thermodynamic_loss(const model::ForwardTrace<T>& trace, const taskgen::Example& ex,
                                 const LossConfig& config) {
  config.validate();
  return evaluate(trace, ex, config, align(trace, ex, config));
}

template <class T>
LossBreakdown thermodynamic_loss_grad(const model::ForwardTrace<T>& trace, const taskgen::Example& ex,
                                      const LossConfig& config, T scale, std::span<T> dlogits,
                                      std::span<T> dhalt_logit) {
  config.validate();
  const Aligned a = align(trace, ex, config);
  const LossBreakdown value = evaluate(trace, ex, config, a);
  const std::size_t L = a.tokens.size(), V = trace.vocab;
  if (dlogits.size() != L * V || dhalt_logit.size() != L) throw DomainError("gradient buffers have wrong size");
  std::fill(dlogits.begin(), dlogits.end(), T(0));

  std::size_t count = 0;
  for (auto m : a.ce_mask) count += m;
  const double w = static_cast<double>(scale) / static_cast<double>(count);
  std::vector<double> probs(V);
  for (std::size_t t = 0; t + 1 < L; ++t) {
    if (!a.ce_mask[t]) continue;
    const auto row = trace.logits_at(t);
    double m = row[0];
    for (std::size_t j = 1; j < V; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += probs[j] = std::exp(static_cast<double>(row[j]) - m);
    for (std::size_t j = 0; j < V; ++j) {
      const double target = static_cast<std::size_t>(a.tokens[t + 1]) == j ? 1.0 : 0.0;
      dlogits[t * V + j] = static_cast<T>(w * (probs[j] / z - target));
    }
  }

  const double bce_w = config.beta * static_cast<double>(scale) / static_cast<double>(L);
  for (std::size_t t = 0; t < L; ++t) {
    const double p = trace.halt_conf[t];
    double g = bce_w * (p - a.labels[t]);
    if (t >= a.w0) {
      const double sign = t < ex.optimal_stop ? 1.0 : -1.0;
      g += config.alpha * static_cast<double>(scale) * sign * p * (1.0 - p);
    }
    dhalt_logit[t] = static_cast<T>(g);
  }
  return value;
}

template LossBreakdown thermodynamic_loss<float>(const model::ForwardTrace<float>&, const taskgen::Example&,
                                                 const LossConfig&);
template LossBreakdown thermodynamic_loss<double>(const model::ForwardTrace<double>&, const taskgen::Example&,
                                                  const LossConfig&);
template LossBreakdown thermodynamic_loss_grad<float>(const model::ForwardTrace<float>&, const taskgen::Example&,
                                                      const LossConfig&, float, std::span<float>, std::span<float>);
template LossBreakdown thermodynamic_loss_grad<double>(const model::ForwardTrace<double>&, const taskgen::Example&,
                                                       const LossConfig&, double, std::span<double>,
                                                       std::span<double>);

}  // namespace thermo::loss
