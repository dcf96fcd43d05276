#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace thermo::model {

/// Per-position outputs of one sequence.
template <class T>
struct ForwardTrace {
  std::size_t length = 0;
  std::size_t vocab = 0;
  std::size_t d_model = 0;
  std::size_t d_state = 0;  // 0 for the Transformer

  std::vector<T> logits;     // length x vocab
  std::vector<T> halt_conf;  // length, sigmoid of the halt head
  std::vector<T> hidden;     // length x d_model, final pre-head hidden
  // length x d_state: last-layer recurrent state summarized per state index
  // as the root energy across channels.
  std::vector<T> state;

  std::span<const T> logits_at(std::size_t t) const { return {logits.data() + t * vocab, vocab}; }
  std::span<const T> hidden_at(std::size_t t) const { return {hidden.data() + t * d_model, d_model}; }
  std::span<const T> state_at(std::size_t t) const { return {state.data() + t * d_state, d_state}; }

  bool operator==(const ForwardTrace&) const = default;
};

}  // namespace thermo::model
