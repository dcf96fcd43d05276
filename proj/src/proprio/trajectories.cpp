#include <ostream>

#include "thermo/errors.hpp"
#include "thermo/eval.hpp"
#include "thermo/proprio.hpp"

namespace thermo::proprio {

Trajectory trajectory_from_trace(const model::ForwardTrace<float>& trace, const taskgen::Example& ex, Probe probe,
                                 Estimator estimator, std::size_t id, bool correct) {
  if (trace.length != ex.length()) throw DomainError("trace length does not match the example");
  if (probe == Probe::DState && trace.d_state == 0)
    throw ConfigError("d_state probe needs a model with a recurrent state");
  Trajectory tr;
  tr.id = id;
  tr.probe = probe;
  tr.correct = correct;
  tr.start = ex.prompt.size() - 1;
  for (std::size_t t = tr.start; t < trace.length; ++t) {
    const auto row = probe == Probe::DState ? trace.state_at(t) : trace.hidden_at(t);
    std::vector<double> v(row.begin(), row.end());
    double h;
    try {
      h = entropy(v, estimator);
    } catch (const DomainError&) {
      h = 0.0;  // all-zero state carries no mass to spread
    }
    tr.entropy.push_back(h);
    tr.halt.push_back(trace.halt_conf[t]);
    tr.states.push_back(std::move(v));
  }
  return tr;
}

std::vector<Trajectory> collect_trajectories(const model::Parameters& params,
                                             std::span<const taskgen::Example> examples, Probe probe,
                                             Estimator estimator) {
  if (probe == Probe::DState && params.config.arch != model::Arch::SSM)
    throw ConfigError("d_state probe needs an SSM model");
  const auto traces = eval::forward_all(params, examples);
  std::vector<Trajectory> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    out.push_back(trajectory_from_trace(traces[i], examples[i], probe, estimator, i,
                                        eval::answer_correct(traces[i], examples[i])));
  return out;
}

void write_trajectory_csv(std::ostream& os, std::span<const Trajectory> trajectories,
                          const std::vector<std::vector<std::string>>* regimes) {
  if (regimes && regimes->size() != trajectories.size())
    throw DomainError("regime labels do not match the trajectories");
  os << "example_id,t,entropy,halt" << (regimes ? ",regime" : "") << "\n";
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& tr = trajectories[k];
    for (std::size_t i = 0; i < tr.entropy.size(); ++i) {
      os << tr.id << ',' << tr.start + i << ',' << tr.entropy[i] << ',' << tr.halt[i];
      if (regimes) {
        const auto& labels = (*regimes)[k];
        os << ',' << (i < labels.size() ? labels[i] : "");
      }
      os << "\n";
    }
  }
}

}  // namespace thermo::proprio
