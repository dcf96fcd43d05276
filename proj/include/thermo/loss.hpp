#pragma once

#include <cstdint>
#include <span>

#include "thermo/forward_trace.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::loss {

struct LossConfig {
  double alpha = 0.0;  // energy weight
  double beta = 0.0;   // halt BCE weight
  bool mask_prompt = true;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  double ce = 0.0;
  double energy = 0.0;  // already multiplied by alpha
  double halt = 0.0;    // already multiplied by beta
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double s) const;
};

/// Mean negative log-likelihood (natural log) over positions with mask = 1.
/// logits is T x vocab row-major.
double cross_entropy(std::span<const double> logits, std::size_t vocab, std::span<const taskgen::Token> targets,
                     std::span<const std::uint8_t> mask);

/// alpha * [sum_{t<t*} p(t) + sum_{t>=t*} (1 - p(t))] over the given positions.
double energy_term(std::span<const double> halt_conf, std::size_t optimal_stop, double alpha);

/// beta * mean BCE; probabilities are clamped to [1e-7, 1 - 1e-7].
double halt_bce(std::span<const double> halt_conf, std::span<const std::uint8_t> labels, double beta);

/// First position of the energy window: the position that reads the last
/// prompt token and emits the first reasoning token.
inline std::size_t window_start(const taskgen::Example& ex) { return ex.prompt.size() - 1; }

/// Full thermodynamic loss of one teacher-forced trace.
template <class T>
LossBreakdown thermodynamic_loss(const model::ForwardTrace<T>& trace, const taskgen::Example& ex,
                                 const LossConfig& config);

/// Same value, plus d(scale * total)/d(logits) and d(scale * total)/d(halt
/// pre-activation) written (overwritten) into the given spans.
template <class T>
LossBreakdown thermodynamic_loss_grad(const model::ForwardTrace<T>& trace, const taskgen::Example& ex,
                                      const LossConfig& config, T scale, std::span<T> dlogits,
                                      std::span<T> dhalt_logit);

}  // namespace thermo::loss
