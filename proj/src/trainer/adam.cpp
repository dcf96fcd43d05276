#include <cmath>

#include "thermo/errors.hpp"
#include "thermo/trainer.hpp"

namespace thermo::trainer {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!std::isfinite(grad_clip)) throw ConfigError("grad_clip must be finite");
}

Adam::Adam(std::size_t n, const TrainConfig& c)
    : lr_(c.lr), b1_(c.beta1), b2_(c.beta2), eps_(c.eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<float>& params, const std::vector<float>& grads, const std::vector<std::uint8_t>* mask) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw DomainError("Adam size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const double g = grads[i];
    m_[i] = b1_ * m_[i] + (1 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1 - b2_) * g * g;
    const double mh = m_[i] / c1, vh = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr_ * mh / (std::sqrt(vh) + eps_));
  }
}

double clip_global_norm(std::vector<float>& grads, double max_norm) {
  double ss = 0.0;
  for (float g : grads) ss += static_cast<double>(g) * g;
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& g : grads) g *= s;
  }
  return norm;
}

}  // namespace thermo::trainer
