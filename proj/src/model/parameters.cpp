#include <cmath>

#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/model.hpp"

namespace thermo::model {

Layout::Layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, v = c.vocab_size, s = c.d_state, h = c.mlp_hidden();
  add("embed.tok", {v, d}, 1);
  if (c.arch == Arch::Transformer) add("embed.pos", {static_cast<std::size_t>(c.max_seq_len), d}, 1);
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    add(p + "norm1.g", {d}, 1);
    if (c.arch == Arch::SSM) {
      add(p + "ssm.dt.w", {d, d}, d);
      add(p + "ssm.dt.b", {d}, d);
      add(p + "ssm.B.w", {d, s}, d);
      add(p + "ssm.C.w", {d, s}, d);
      add(p + "ssm.a", {d, s}, 1);
      add(p + "ssm.D", {d}, 1);
      add(p + "ssm.out.w", {d, d}, d);
      add(p + "norm2.g", {d}, 1);
      add(p + "mlp.gate.w", {d, h}, d);
      add(p + "mlp.up.w", {d, h}, d);
      add(p + "mlp.down.w", {h, d}, h);
    } else {
      add(p + "attn.q.w", {d, d}, d);
      add(p + "attn.k.w", {d, d}, d);
      add(p + "attn.v.w", {d, d}, d);
      add(p + "attn.o.w", {d, d}, d);
      add(p + "norm2.g", {d}, 1);
      add(p + "mlp.fc1.w", {d, h}, d);
      add(p + "mlp.fc1.b", {h}, d);
      add(p + "mlp.fc2.w", {h, d}, h);
      add(p + "mlp.fc2.b", {d}, h);
    }
  }
  add("final_norm.g", {d}, 1);
  add("head.tok.w", {d, v}, d);
  add("head.tok.b", {v}, d);
  add("head.halt.w", {d, 1}, d);
  add("head.halt.b", {1}, d);
}

void Layout::add(std::string name, std::vector<std::size_t> shape, std::size_t fan_in) {
  std::size_t size = 1;
  for (auto n : shape) size *= n;
  index_.emplace(name, tensors_.size());
  tensors_.push_back({std::move(name), std::move(shape), total_, size, fan_in});
  total_ += size;
}

const TensorSpec& Layout::at(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no tensor named '" + std::string(name) + "'");
  return tensors_[it->second];
}

bool Layout::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

template <class T>
bool ParameterSet<T>::all_finite() const {
  for (T x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, v = c.vocab_size, s = c.d_state, h = c.mlp_hidden(), L = c.n_layers;
  const std::size_t embed = v * d + (c.arch == Arch::Transformer ? c.max_seq_len * d : 0);
  const std::size_t layer = c.arch == Arch::SSM ? 2 * d * d + 4 * d + 3 * d * s + 3 * d * h  //
                                                : 3 * d + 4 * d * d + 2 * d * h + h;
  const std::size_t heads = d + d * v + v + d + 1;
  return embed + L * layer + heads;
}

Parameters init_model(const ModelConfig& config) {
  auto layout = std::make_shared<const Layout>(config);
  Parameters p{config, layout, std::vector<float>(layout->total())};
  const auto base = mathcore::split_rng(config.seed, "init");
  for (const auto& spec : layout->tensors()) {
    auto t = p.tensor(spec.name);
    const std::string& n = spec.name;
    const bool is_gain = n.ends_with(".g") || n.ends_with("ssm.D");
    if (is_gain) {
      std::fill(t.begin(), t.end(), 1.0f);
    } else if (n.ends_with("ssm.a")) {
      // softplus(a) = -ln(0.9)  =>  exp(-1 * softplus(a)) = 0.9
      const double rate = -std::log(static_cast<double>(kInitialTransition));
      std::fill(t.begin(), t.end(), static_cast<float>(std::log(std::expm1(rate))));
    } else if (n == "head.halt.b") {
      const double p0 = kInitialHaltConf;
      t[0] = static_cast<float>(std::log(p0 / (1.0 - p0)));
    } else {
      auto rng = base.split(n);
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (auto& x : t) x = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  return p;
}

}  // namespace thermo::model
