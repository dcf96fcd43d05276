#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "thermo/forward_trace.hpp"
#include "thermo/loss.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::model {

enum class Arch { SSM, Transformer };

std::string_view to_string(Arch a);
Arch arch_from_string(std::string_view s);

struct ModelConfig {
  Arch arch = Arch::SSM;
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;  // Transformer only
  int d_state = 8;  // SSM only
  int vocab_size = static_cast<int>(taskgen::kVocabSize);
  int max_seq_len = 256;
  std::uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  /// Hidden width of the per-layer MLP. The SSM's gated MLP width is chosen
  /// so an SSM layer holds as many parameters as a Transformer layer.
  int mlp_hidden() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::size_t fan_in = 1;
};

/// Ordered table of named tensors inside one flat buffer.
class Layout {
 public:
  explicit Layout(const ModelConfig& config);

  std::span<const TensorSpec> tensors() const { return tensors_; }
  const TensorSpec& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t total() const { return total_; }

 private:
  void add(std::string name, std::vector<std::size_t> shape, std::size_t fan_in);
  std::vector<TensorSpec> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t total_ = 0;
};

/// Named real-valued tensors of a model (also used for gradients and
/// optimizer moments, which share the layout).
template <class T>
struct ParameterSet {
  ModelConfig config;
  std::shared_ptr<const Layout> layout;
  std::vector<T> data;

  std::span<T> tensor(std::string_view name) {
    const auto& s = layout->at(name);
    return {data.data() + s.offset, s.size};
  }
  std::span<const T> tensor(std::string_view name) const {
    const auto& s = layout->at(name);
    return {data.data() + s.offset, s.size};
  }
  std::size_t count() const { return data.size(); }

  ParameterSet zeros_like() const { return {config, layout, std::vector<T>(data.size(), T(0))}; }

  template <class U>
  ParameterSet<U> cast() const {
    return {config, layout, std::vector<U>(data.begin(), data.end())};
  }

  bool all_finite() const;
};

using Parameters = ParameterSet<float>;
using Gradients = ParameterSet<float>;

/// Closed-form parameter count from the layer recipe (independent of Layout).
std::size_t expected_parameter_count(const ModelConfig& config);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; norm gains 1, D = 1,
/// transition parameter set so exp(-softplus(a)) = 0.9, halt bias so the
/// initial halt confidence is about 0.1.
Parameters init_model(const ModelConfig& config);

inline constexpr float kInitialHaltConf = 0.1f;
inline constexpr float kInitialTransition = 0.9f;

/// Full teacher-forced pass over one sequence.
template <class T>
ForwardTrace<T> forward(const ParameterSet<T>& params, std::span<const taskgen::Token> tokens);

/// Packed pass over many sequences (identical results to one-at-a-time).
template <class T>
std::vector<ForwardTrace<T>> forward_batch(const ParameterSet<T>& params,
                                           std::span<const std::vector<taskgen::Token>> sequences);

/// Exact reverse-mode gradient of the mean per-example thermodynamic loss.
template <class T>
std::pair<loss::LossBreakdown, ParameterSet<T>> backward(const ParameterSet<T>& params,
                                                         std::span<const taskgen::Example> batch,
                                                         const loss::LossConfig& config);

/// Internal activations exposed for tests of the selective recurrence.
/// Every channel c of a layer carries its own state h[c] of size d_state:
///   h_t[c] = exp(-delta_t[c] * softplus(a[c])) * h_{t-1}[c] + delta_t[c] * B_t * x_t[c]
///   y_t[c] = C_t . h_t[c] + D[c] * x_t[c]
template <class T>
struct SsmProbe {
  std::vector<T> input;  // T x d_model, normalized layer input x_t
  std::vector<T> delta;  // T x d_model, softplus step size per channel
  std::vector<T> drive;  // T x d_state, B_t = W_B x_t
  std::vector<T> decay;  // T x d_model x d_state
  std::vector<T> state;  // T x d_model x d_state
};
template <class T>
SsmProbe<T> probe_ssm_layer(const ParameterSet<T>& params, std::span<const taskgen::Token> tokens, int layer);

// ---------------------------------------------------------------------------
// Incremental decoding

/// O(1)-per-token recurrent state for the SSM, growing KV cache for the
/// Transformer. step() reproduces the corresponding row of forward().
class Decoder {
 public:
  explicit Decoder(const Parameters& params);
  ~Decoder();
  Decoder(Decoder&&) noexcept;
  Decoder& operator=(Decoder&&) noexcept;

  /// Consume one token; returns the position index it occupied.
  std::size_t step(taskgen::Token token);

  std::span<const float> logits() const;
  float halt_conf() const;
  std::span<const float> hidden() const;
  /// Last-layer state summary (d_state values, as in ForwardTrace::state);
  /// empty for the Transformer.
  std::span<const float> state() const;
  /// Last-layer state, d_model x d_state.
  std::span<const float> full_state() const;
  std::size_t position() const;
  /// Size of the recurrent working set (constant in t for the SSM).
  std::size_t working_set() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

enum class HaltPolicy {
  Never,       // run to max_len
  Token,       // stop after emitting HALT
  Confidence,  // HALT token, or halt_conf >= threshold after reading a token
  Controller,  // HALT token, or controller callback returns true
};

struct GenerationOptions {
  std::size_t max_len = 128;  // generated tokens, excluding the prompt
  HaltPolicy policy = HaltPolicy::Token;
  double threshold = 0.5;
  /// Called after each consumed token with the trace so far; return true to
  /// stop. Only used with HaltPolicy::Controller.
  std::function<bool(const ForwardTrace<float>&, std::size_t position)> controller;
};

struct Generation {
  std::vector<taskgen::Token> tokens;  // prompt + generated
  std::vector<taskgen::Token> generated;
  ForwardTrace<float> trace;  // one row per consumed token
  bool truncated = false;     // stopped at max_len
  bool halted_by_policy = false;
};

/// Greedy decoding.
Generation generate(const Parameters& params, std::span<const taskgen::Token> prompt,
                    const GenerationOptions& options);

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, config JSON, then named tensors as
// length-prefixed little-endian float32 arrays.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Parameters& params, const std::string& path);
Parameters load_checkpoint(const std::string& path);
/// Loads and additionally rejects a config that differs from `expected`.
Parameters load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace thermo::model
