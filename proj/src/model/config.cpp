#include <cmath>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/model.hpp"

namespace thermo::model {

std::string_view to_string(Arch a) { return a == Arch::SSM ? "ssm" : "transformer"; }

Arch arch_from_string(std::string_view s) {
  if (s == "ssm" || s == "SSM") return Arch::SSM;
  if (s == "transformer" || s == "Transformer") return Arch::Transformer;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || d_state <= 0 || vocab_size <= 0 || max_seq_len <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (vocab_size != static_cast<int>(taskgen::kVocabSize)) throw ConfigError("vocab_size must be 24");
}

int ModelConfig::mlp_hidden() const {
  if (arch == Arch::Transformer) return 2 * d_model;
  const double d = d_model, s = d_state;
  const double transformer_layer = 8.0 * d * d + 5.0 * d;
  const double ssm_core = 2.0 * d * d + 4.0 * d + 3.0 * d * s;
  const double width = (transformer_layer - ssm_core) / (3.0 * d);
  return std::max(8, static_cast<int>(std::lround(width / 8.0)) * 8);
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["arch"] = std::string(to_string(arch));
  j["n_layers"] = n_layers;
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["d_state"] = d_state;
  j["vocab_size"] = vocab_size;
  j["max_seq_len"] = max_seq_len;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.arch = arch_from_string(j.at("arch").get<std::string>());
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_state = j.at("d_state").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

}  // namespace thermo::model
