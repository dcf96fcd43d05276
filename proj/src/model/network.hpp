#pragma once

#include <vector>

#include "thermo/model.hpp"

namespace thermo::model::detail {

struct PackedBatch {
  std::vector<taskgen::Token> tokens;
  std::vector<std::size_t> starts;  // size = n_seq + 1
  std::vector<std::size_t> pos;     // position inside its own sequence

  std::size_t n_seq() const { return starts.size() - 1; }
  std::size_t rows() const { return tokens.size(); }
  std::size_t seq_len(std::size_t b) const { return starts[b + 1] - starts[b]; }

  static PackedBatch pack(std::span<const std::vector<taskgen::Token>> seqs, std::size_t max_len);
};

template <class T>
struct LayerCache {
  std::vector<T> u, r1, z, u1, r2, z2;
  // SSM: pre/delta are rows x d, drive (B) and cgate (C) rows x d_state,
  // decay and h rows x d x d_state, y rows x d.
  std::vector<T> pre, delta, drive, cgate, decay, h, y;
  // Transformer
  std::vector<T> q, k, v, attn, probs;
  std::vector<std::size_t> prob_offsets;  // per sequence
  // MLP: SSM uses (m1 = gate pre, m2 = up, act); Transformer (m1 = fc1 pre, act)
  std::vector<T> m1, m2, act;
};

template <class T>
struct Cache {
  PackedBatch batch;
  std::vector<LayerCache<T>> layers;
  std::vector<T> u_final, rf, hidden, logits, halt_logit, halt_conf;
};

template <class T>
void forward(const ParameterSet<T>& p, Cache<T>& cache);

/// Accumulates parameter gradients into `grads` given upstream gradients of
/// the logits (rows x vocab) and halt pre-activations (rows).
template <class T>
void backward(const ParameterSet<T>& p, const Cache<T>& cache, const std::vector<T>& dlogits,
              const std::vector<T>& dhalt, ParameterSet<T>& grads);

/// Slice sequence b of a packed forward into a ForwardTrace.
template <class T>
ForwardTrace<T> extract(const ParameterSet<T>& p, const Cache<T>& cache, std::size_t b);

}  // namespace thermo::model::detail
