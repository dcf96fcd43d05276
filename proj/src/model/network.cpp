#include "network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ops.hpp"
#include "thermo/errors.hpp"

namespace thermo::model::detail {

namespace K = kernels::parallel;
using namespace ops;

PackedBatch PackedBatch::pack(std::span<const std::vector<taskgen::Token>> seqs, std::size_t max_len) {
  PackedBatch b;
  b.starts.push_back(0);
  for (const auto& s : seqs) {
    if (s.empty()) throw LengthError("empty sequence");
    if (s.size() > max_len)
      throw LengthError("sequence of length " + std::to_string(s.size()) + " exceeds max_seq_len " +
                        std::to_string(max_len));
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t] < 0 || static_cast<std::size_t>(s[t]) >= taskgen::kVocabSize)
        throw EncodingError("token id " + std::to_string(s[t]) + " outside vocabulary");
      b.tokens.push_back(s[t]);
      b.pos.push_back(t);
    }
    b.starts.push_back(b.tokens.size());
  }
  return b;
}

namespace {

struct Dims {
  std::size_t d, s, h, v, heads, hd;
  explicit Dims(const ModelConfig& c)
      : d(c.d_model), s(c.d_state), h(c.mlp_hidden()), v(c.vocab_size), heads(c.n_heads), hd(c.head_dim()) {}
};

std::string lp(int l, const char* name) { return "layers." + std::to_string(l) + "." + name; }

// y = x w (+ b), x: n x in, w: in x out.
template <class T>
void linear(const Buf<T>& x, std::size_t n, std::size_t in, std::span<const T> w, std::size_t out, const T* b,
            Buf<T>& y) {
  y.resize(n * out);
  K::matmul(cm(x, n, in), cm(w, in, out), mm(y, n, out), false);
  if (b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out; ++j) y[i * out + j] += b[j];
}

// dx += dy w^T ; dw += x^T dy ; db += colsum(dy)
template <class T>
void linear_backward(const Buf<T>& x, std::size_t n, std::size_t in, std::span<const T> w, std::size_t out,
                     const Buf<T>& dy, Buf<T>* dx, std::span<T> dw, T* db) {
  if (dx) K::matmul_nt(cm(dy, n, out), cm(w, in, out), mm(*dx, n, in));
  K::matmul_tn(cm(x, n, in), cm(dy, n, out), mm(dw, in, out));
  if (db) K::colsum(cm(dy, n, out), std::span<T>(db, out));
}

template <class T>
void rmsnorm(const Buf<T>& x, std::size_t n, std::size_t d, std::span<const T> g, Buf<T>& y, Buf<T>& r) {
  y.resize(n * d);
  r.resize(n);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n >= 64)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto k = static_cast<std::size_t>(i);
    r[k] = rmsnorm_row(x.data() + k * d, g.data(), y.data() + k * d, d);
  }
}

template <class T>
void rmsnorm_backward(const Buf<T>& x, std::size_t n, std::size_t d, std::span<const T> g, const Buf<T>& r,
                      const Buf<T>& dy, Buf<T>& dx, std::span<T> dg) {
  Buf<T> gain_terms(n * d);
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n >= 64)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const T* xr = x.data() + k * d;
    const T* dyr = dy.data() + k * d;
    rmsnorm_backward_row(xr, g.data(), r[k], dyr, dx.data() + k * d, d);
    for (std::size_t j = 0; j < d; ++j) gain_terms[k * d + j] = dyr[j] * xr[j] * r[k];
  }
  K::colsum(cm(gain_terms, n, d), dg);
}

template <class T>
void ssm_forward(const ParameterSet<T>& p, int l, const Dims& D, const PackedBatch& batch, LayerCache<T>& c,
                 Buf<T>& out) {
  const std::size_t n = batch.rows();
  const std::size_t d = D.d, s = D.s, h = D.h, ds = d * s;
  rmsnorm(c.u, n, d, p.tensor(lp(l, "norm1.g")), c.z, c.r1);
  linear(c.z, n, d, p.tensor(lp(l, "ssm.dt.w")), d, p.tensor(lp(l, "ssm.dt.b")).data(), c.pre);
  linear<T>(c.z, n, d, p.tensor(lp(l, "ssm.B.w")), s, nullptr, c.drive);
  linear<T>(c.z, n, d, p.tensor(lp(l, "ssm.C.w")), s, nullptr, c.cgate);
  c.delta.resize(n * d);
  for (std::size_t i = 0; i < n * d; ++i) c.delta[i] = softplus(c.pre[i]);
  const auto a = p.tensor(lp(l, "ssm.a"));
  std::vector<T> rate(ds);
  for (std::size_t k = 0; k < ds; ++k) rate[k] = softplus(a[k]);
  const auto skip = p.tensor(lp(l, "ssm.D"));

  c.decay.resize(n * ds);
  c.h.resize(n * ds);
  c.y.resize(n * d);
  const auto n_seq = static_cast<std::ptrdiff_t>(batch.n_seq());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t bi = 0; bi < n_seq; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t row = batch.starts[b]; row < batch.starts[b + 1]; ++row) {
      const bool first = row == batch.starts[b];
      const T* Bv = c.drive.data() + row * s;
      const T* Cv = c.cgate.data() + row * s;
      for (std::size_t ch = 0; ch < d; ++ch) {
        const T delta = c.delta[row * d + ch];
        const T x = c.z[row * d + ch];
        const std::size_t base = row * ds + ch * s;
        T acc = T(0);
        for (std::size_t j = 0; j < s; ++j) {
          const T decay = std::exp(-delta * rate[ch * s + j]);
          const T prev = first ? T(0) : c.h[base + j - ds];
          c.decay[base + j] = decay;
          c.h[base + j] = decay * prev + delta * Bv[j] * x;
          acc += Cv[j] * c.h[base + j];
        }
        c.y[row * d + ch] = acc + skip[ch] * x;
      }
    }
  }

  Buf<T> mixed;
  linear<T>(c.y, n, d, p.tensor(lp(l, "ssm.out.w")), d, nullptr, mixed);
  c.u1.resize(n * d);
  for (std::size_t i = 0; i < n * d; ++i) c.u1[i] = c.u[i] + mixed[i];

  rmsnorm(c.u1, n, d, p.tensor(lp(l, "norm2.g")), c.z2, c.r2);
  linear<T>(c.z2, n, d, p.tensor(lp(l, "mlp.gate.w")), h, nullptr, c.m1);
  linear<T>(c.z2, n, d, p.tensor(lp(l, "mlp.up.w")), h, nullptr, c.m2);
  c.act.resize(n * h);
  for (std::size_t i = 0; i < n * h; ++i) c.act[i] = silu(c.m1[i]) * c.m2[i];
  linear<T>(c.act, n, h, p.tensor(lp(l, "mlp.down.w")), d, nullptr, out);
  for (std::size_t i = 0; i < n * d; ++i) out[i] += c.u1[i];
}

template <class T>
void ssm_backward(const ParameterSet<T>& p, int l, const Dims& D, const PackedBatch& batch, const LayerCache<T>& c,
                  const Buf<T>& dout, Buf<T>& du, ParameterSet<T>& g) {
  const std::size_t n = batch.rows();
  const std::size_t d = D.d, s = D.s, h = D.h, ds = d * s;

  // Gated MLP.
  Buf<T> du1(dout);
  Buf<T> dact(n * h, T(0));
  linear_backward<T>(c.act, n, h, p.tensor(lp(l, "mlp.down.w")), d, dout, &dact, g.tensor(lp(l, "mlp.down.w")),
                     nullptr);
  Buf<T> dgate(n * h), dup(n * h);
  for (std::size_t i = 0; i < n * h; ++i) {
    dgate[i] = dact[i] * c.m2[i] * silu_grad(c.m1[i]);
    dup[i] = dact[i] * silu(c.m1[i]);
  }
  Buf<T> dz2(n * d, T(0));
  linear_backward<T>(c.z2, n, d, p.tensor(lp(l, "mlp.gate.w")), h, dgate, &dz2, g.tensor(lp(l, "mlp.gate.w")),
                     nullptr);
  linear_backward<T>(c.z2, n, d, p.tensor(lp(l, "mlp.up.w")), h, dup, &dz2, g.tensor(lp(l, "mlp.up.w")), nullptr);
  rmsnorm_backward(c.u1, n, d, p.tensor(lp(l, "norm2.g")), c.r2, dz2, du1, g.tensor(lp(l, "norm2.g")));

  // Selective scan; du1 is the gradient at the block output.
  Buf<T> dy(n * d, T(0));
  linear_backward<T>(c.y, n, d, p.tensor(lp(l, "ssm.out.w")), d, du1, &dy, g.tensor(lp(l, "ssm.out.w")), nullptr);
  const auto skip = p.tensor(lp(l, "ssm.D"));
  Buf<T> dz(n * d), skip_terms(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < d; ++ch) {
      dz[i * d + ch] = dy[i * d + ch] * skip[ch];
      skip_terms[i * d + ch] = dy[i * d + ch] * c.z[i * d + ch];
    }
  K::colsum(cm(skip_terms, n, d), g.tensor(lp(l, "ssm.D")));

  const auto a = p.tensor(lp(l, "ssm.a"));
  std::vector<T> rate(ds);
  for (std::size_t k = 0; k < ds; ++k) rate[k] = softplus(a[k]);

  Buf<T> dC(n * s, T(0)), dB(n * s, T(0)), ddelta(n * d, T(0));
  const std::size_t n_seq = batch.n_seq();
  Buf<T> drate_partial(n_seq * ds, T(0));
  const auto n_seq_i = static_cast<std::ptrdiff_t>(n_seq);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t bi = 0; bi < n_seq_i; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    std::vector<T> carry(ds, T(0));
    T* drate = drate_partial.data() + b * ds;
    for (std::size_t row = batch.starts[b + 1]; row-- > batch.starts[b];) {
      const bool first = row == batch.starts[b];
      const T* Bv = c.drive.data() + row * s;
      const T* Cv = c.cgate.data() + row * s;
      T* dBr = dB.data() + row * s;
      T* dCr = dC.data() + row * s;
      for (std::size_t ch = 0; ch < d; ++ch) {
        const T dyc = dy[row * d + ch];
        const T delta = c.delta[row * d + ch];
        const T x = c.z[row * d + ch];
        const std::size_t base = row * ds + ch * s;
        T dd = T(0), dx = T(0);
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t k = ch * s + j;
          dCr[j] += dyc * c.h[base + j];
          const T gh = carry[k] + dyc * Cv[j];  // dL/dh_t
          const T prev = first ? T(0) : c.h[base + j - ds];
          const T dprod = gh * c.decay[base + j] * prev;  // dL/d(decay) * decay
          dd += gh * Bv[j] * x - dprod * rate[k];
          dBr[j] += gh * delta * x;
          dx += gh * delta * Bv[j];
          drate[k] -= dprod * delta;
          carry[k] = gh * c.decay[base + j];
        }
        ddelta[row * d + ch] = dd;
        dz[row * d + ch] += dx;
      }
    }
  }
  auto da = g.tensor(lp(l, "ssm.a"));
  for (std::size_t b = 0; b < n_seq; ++b)
    for (std::size_t k = 0; k < ds; ++k) da[k] += drate_partial[b * ds + k] * sigmoid(a[k]);

  Buf<T> dpre(n * d);
  for (std::size_t i = 0; i < n * d; ++i) dpre[i] = ddelta[i] * sigmoid(c.pre[i]);
  linear_backward<T>(c.z, n, d, p.tensor(lp(l, "ssm.dt.w")), d, dpre, &dz, g.tensor(lp(l, "ssm.dt.w")),
                     g.tensor(lp(l, "ssm.dt.b")).data());
  linear_backward<T>(c.z, n, d, p.tensor(lp(l, "ssm.B.w")), s, dB, &dz, g.tensor(lp(l, "ssm.B.w")), nullptr);
  linear_backward<T>(c.z, n, d, p.tensor(lp(l, "ssm.C.w")), s, dC, &dz, g.tensor(lp(l, "ssm.C.w")), nullptr);

  du = du1;
  rmsnorm_backward(c.u, n, d, p.tensor(lp(l, "norm1.g")), c.r1, dz, du, g.tensor(lp(l, "norm1.g")));
}

template <class T>
void transformer_forward(const ParameterSet<T>& p, int l, const Dims& D, const PackedBatch& batch, LayerCache<T>& c,
                         Buf<T>& out) {
  const std::size_t n = batch.rows();
  const std::size_t d = D.d, h = D.h, nh = D.heads, hd = D.hd;
  rmsnorm(c.u, n, d, p.tensor(lp(l, "norm1.g")), c.z, c.r1);
  linear<T>(c.z, n, d, p.tensor(lp(l, "attn.q.w")), d, nullptr, c.q);
  linear<T>(c.z, n, d, p.tensor(lp(l, "attn.k.w")), d, nullptr, c.k);
  linear<T>(c.z, n, d, p.tensor(lp(l, "attn.v.w")), d, nullptr, c.v);

  const std::size_t n_seq = batch.n_seq();
  c.prob_offsets.assign(n_seq + 1, 0);
  for (std::size_t b = 0; b < n_seq; ++b) {
    const std::size_t len = batch.seq_len(b);
    c.prob_offsets[b + 1] = c.prob_offsets[b] + nh * len * len;
  }
  c.probs.assign(c.prob_offsets[n_seq], T(0));
  c.attn.assign(n * d, T(0));
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const auto n_seq_i = static_cast<std::ptrdiff_t>(n_seq);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t bi = 0; bi < n_seq_i; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const std::size_t base = batch.starts[b], len = batch.seq_len(b);
    for (std::size_t head = 0; head < nh; ++head) {
      T* P = c.probs.data() + c.prob_offsets[b] + head * len * len;
      const std::size_t off = head * hd;
      for (std::size_t t = 0; t < len; ++t) {
        const T* qt = c.q.data() + (base + t) * d + off;
        T* pt = P + t * len;
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t u = 0; u <= t; ++u) {
          const T* ku = c.k.data() + (base + u) * d + off;
          T acc = T(0);
          for (std::size_t e = 0; e < hd; ++e) acc += qt[e] * ku[e];
          pt[u] = acc * scale;
          m = std::max(m, pt[u]);
        }
        T z = T(0);
        for (std::size_t u = 0; u <= t; ++u) z += pt[u] = std::exp(pt[u] - m);
        for (std::size_t u = 0; u <= t; ++u) pt[u] /= z;
        T* ot = c.attn.data() + (base + t) * d + off;
        for (std::size_t u = 0; u <= t; ++u) {
          const T* vu = c.v.data() + (base + u) * d + off;
          for (std::size_t e = 0; e < hd; ++e) ot[e] += pt[u] * vu[e];
        }
      }
    }
  }

  Buf<T> y;
  linear<T>(c.attn, n, d, p.tensor(lp(l, "attn.o.w")), d, nullptr, y);
  c.u1.resize(n * d);
  for (std::size_t i = 0; i < n * d; ++i) c.u1[i] = c.u[i] + y[i];

  rmsnorm(c.u1, n, d, p.tensor(lp(l, "norm2.g")), c.z2, c.r2);
  linear(c.z2, n, d, p.tensor(lp(l, "mlp.fc1.w")), h, p.tensor(lp(l, "mlp.fc1.b")).data(), c.m1);
  c.act.resize(n * h);
  for (std::size_t i = 0; i < n * h; ++i) c.act[i] = gelu(c.m1[i]);
  linear(c.act, n, h, p.tensor(lp(l, "mlp.fc2.w")), d, p.tensor(lp(l, "mlp.fc2.b")).data(), out);
  for (std::size_t i = 0; i < n * d; ++i) out[i] += c.u1[i];
}

template <class T>
void transformer_backward(const ParameterSet<T>& p, int l, const Dims& D, const PackedBatch& batch,
                          const LayerCache<T>& c, const Buf<T>& dout, Buf<T>& du, ParameterSet<T>& g) {
  const std::size_t n = batch.rows();
  const std::size_t d = D.d, h = D.h, nh = D.heads, hd = D.hd;

  Buf<T> du1(dout);
  Buf<T> dact(n * h, T(0));
  linear_backward<T>(c.act, n, h, p.tensor(lp(l, "mlp.fc2.w")), d, dout, &dact, g.tensor(lp(l, "mlp.fc2.w")),
                     g.tensor(lp(l, "mlp.fc2.b")).data());
  Buf<T> da1(n * h);
  for (std::size_t i = 0; i < n * h; ++i) da1[i] = dact[i] * gelu_grad(c.m1[i]);
  Buf<T> dz2(n * d, T(0));
  linear_backward<T>(c.z2, n, d, p.tensor(lp(l, "mlp.fc1.w")), h, da1, &dz2, g.tensor(lp(l, "mlp.fc1.w")),
                     g.tensor(lp(l, "mlp.fc1.b")).data());
  rmsnorm_backward(c.u1, n, d, p.tensor(lp(l, "norm2.g")), c.r2, dz2, du1, g.tensor(lp(l, "norm2.g")));

  Buf<T> dattn(n * d, T(0));
  linear_backward<T>(c.attn, n, d, p.tensor(lp(l, "attn.o.w")), d, du1, &dattn, g.tensor(lp(l, "attn.o.w")),
                     nullptr);

  Buf<T> dq(n * d, T(0)), dk(n * d, T(0)), dv(n * d, T(0));
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const auto n_seq_i = static_cast<std::ptrdiff_t>(batch.n_seq());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t bi = 0; bi < n_seq_i; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    const std::size_t base = batch.starts[b], len = batch.seq_len(b);
    std::vector<T> dp(len);
    for (std::size_t head = 0; head < nh; ++head) {
      const T* P = c.probs.data() + c.prob_offsets[b] + head * len * len;
      const std::size_t off = head * hd;
      for (std::size_t t = 0; t < len; ++t) {
        const T* pt = P + t * len;
        const T* dot = dattn.data() + (base + t) * d + off;
        T inner = T(0);
        for (std::size_t u = 0; u <= t; ++u) {
          const T* vu = c.v.data() + (base + u) * d + off;
          T acc = T(0);
          for (std::size_t e = 0; e < hd; ++e) acc += dot[e] * vu[e];
          dp[u] = acc;
          inner += pt[u] * acc;
          T* dvu = dv.data() + (base + u) * d + off;
          for (std::size_t e = 0; e < hd; ++e) dvu[e] += pt[u] * dot[e];
        }
        const T* qt = c.q.data() + (base + t) * d + off;
        T* dqt = dq.data() + (base + t) * d + off;
        for (std::size_t u = 0; u <= t; ++u) {
          const T dscore = pt[u] * (dp[u] - inner) * scale;
          const T* ku = c.k.data() + (base + u) * d + off;
          T* dku = dk.data() + (base + u) * d + off;
          for (std::size_t e = 0; e < hd; ++e) {
            dqt[e] += dscore * ku[e];
            dku[e] += dscore * qt[e];
          }
        }
      }
    }
  }

  Buf<T> dz(n * d, T(0));
  linear_backward<T>(c.z, n, d, p.tensor(lp(l, "attn.q.w")), d, dq, &dz, g.tensor(lp(l, "attn.q.w")), nullptr);
  linear_backward<T>(c.z, n, d, p.tensor(lp(l, "attn.k.w")), d, dk, &dz, g.tensor(lp(l, "attn.k.w")), nullptr);
  linear_backward<T>(c.z, n, d, p.tensor(lp(l, "attn.v.w")), d, dv, &dz, g.tensor(lp(l, "attn.v.w")), nullptr);

  du = du1;
  rmsnorm_backward(c.u, n, d, p.tensor(lp(l, "norm1.g")), c.r1, dz, du, g.tensor(lp(l, "norm1.g")));
}

}  // namespace

template <class T>
void forward(const ParameterSet<T>& p, Cache<T>& cache) {
  const ModelConfig& cfg = p.config;
  const Dims D(cfg);
  const PackedBatch& batch = cache.batch;
  const std::size_t n = batch.rows(), d = D.d;

  Buf<T> x(n * d);
  const auto emb = p.tensor("embed.tok");
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(emb.data() + static_cast<std::size_t>(batch.tokens[i]) * d, d, x.data() + i * d);
  if (cfg.arch == Arch::Transformer) {
    const auto pos = p.tensor("embed.pos");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] += pos[batch.pos[i] * d + j];
  }

  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& c = cache.layers[static_cast<std::size_t>(l)];
    c.u = std::move(x);
    x.assign(n * d, T(0));
    if (cfg.arch == Arch::SSM)
      ssm_forward(p, l, D, batch, c, x);
    else
      transformer_forward(p, l, D, batch, c, x);
  }

  cache.u_final = std::move(x);
  rmsnorm(cache.u_final, n, d, p.tensor("final_norm.g"), cache.hidden, cache.rf);
  linear(cache.hidden, n, d, p.tensor("head.tok.w"), D.v, p.tensor("head.tok.b").data(), cache.logits);
  linear(cache.hidden, n, d, p.tensor("head.halt.w"), 1, p.tensor("head.halt.b").data(), cache.halt_logit);
  cache.halt_conf.resize(n);
  for (std::size_t i = 0; i < n; ++i) cache.halt_conf[i] = sigmoid(cache.halt_logit[i]);
}

template <class T>
void backward(const ParameterSet<T>& p, const Cache<T>& cache, const std::vector<T>& dlogits,
              const std::vector<T>& dhalt, ParameterSet<T>& g) {
  const ModelConfig& cfg = p.config;
  const Dims D(cfg);
  const PackedBatch& batch = cache.batch;
  const std::size_t n = batch.rows(), d = D.d;

  Buf<T> dhidden(n * d, T(0));
  linear_backward<T>(cache.hidden, n, d, p.tensor("head.tok.w"), D.v, dlogits, &dhidden, g.tensor("head.tok.w"),
                     g.tensor("head.tok.b").data());
  linear_backward<T>(cache.hidden, n, d, p.tensor("head.halt.w"), 1, dhalt, &dhidden, g.tensor("head.halt.w"),
                     g.tensor("head.halt.b").data());
  Buf<T> dx(n * d, T(0));
  rmsnorm_backward(cache.u_final, n, d, p.tensor("final_norm.g"), cache.rf, dhidden, dx, g.tensor("final_norm.g"));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& c = cache.layers[static_cast<std::size_t>(l)];
    Buf<T> du;
    if (cfg.arch == Arch::SSM)
      ssm_backward(p, l, D, batch, c, dx, du, g);
    else
      transformer_backward(p, l, D, batch, c, dx, du, g);
    dx = std::move(du);
  }

  auto demb = g.tensor("embed.tok");
  for (std::size_t i = 0; i < n; ++i) {
    T* row = demb.data() + static_cast<std::size_t>(batch.tokens[i]) * d;
    for (std::size_t j = 0; j < d; ++j) row[j] += dx[i * d + j];
  }
  if (cfg.arch == Arch::Transformer) {
    auto dpos = g.tensor("embed.pos");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) dpos[batch.pos[i] * d + j] += dx[i * d + j];
  }
}

template <class T>
ForwardTrace<T> extract(const ParameterSet<T>& p, const Cache<T>& cache, std::size_t b) {
  const Dims D(p.config);
  const std::size_t lo = cache.batch.starts[b], hi = cache.batch.starts[b + 1], len = hi - lo;
  ForwardTrace<T> tr;
  tr.length = len;
  tr.vocab = D.v;
  tr.d_model = D.d;
  tr.logits.assign(cache.logits.begin() + lo * D.v, cache.logits.begin() + hi * D.v);
  tr.halt_conf.assign(cache.halt_conf.begin() + lo, cache.halt_conf.begin() + hi);
  tr.hidden.assign(cache.hidden.begin() + lo * D.d, cache.hidden.begin() + hi * D.d);
  if (p.config.arch == Arch::SSM) {
    tr.d_state = D.s;
    const auto& last = cache.layers.back();
    tr.state.resize(len * D.s);
    for (std::size_t t = 0; t < len; ++t) state_summary(last.h.data() + (lo + t) * D.d * D.s, D.d, D.s, tr.state.data() + t * D.s);
  }
  return tr;
}

template void forward<float>(const ParameterSet<float>&, Cache<float>&);
template void forward<double>(const ParameterSet<double>&, Cache<double>&);
template void backward<float>(const ParameterSet<float>&, const Cache<float>&, const std::vector<float>&,
                              const std::vector<float>&, ParameterSet<float>&);
template void backward<double>(const ParameterSet<double>&, const Cache<double>&, const std::vector<double>&,
                               const std::vector<double>&, ParameterSet<double>&);
template ForwardTrace<float> extract<float>(const ParameterSet<float>&, const Cache<float>&, std::size_t);
template ForwardTrace<double> extract<double>(const ParameterSet<double>&, const Cache<double>&, std::size_t);

}  // namespace thermo::model::detail

namespace thermo::model {

template <class T>
std::vector<ForwardTrace<T>> forward_batch(const ParameterSet<T>& params,
                                           std::span<const std::vector<taskgen::Token>> sequences) {
  detail::Cache<T> cache;
  cache.batch = detail::PackedBatch::pack(sequences, static_cast<std::size_t>(params.config.max_seq_len));
  detail::forward(params, cache);
  std::vector<ForwardTrace<T>> out;
  out.reserve(sequences.size());
  for (std::size_t b = 0; b < sequences.size(); ++b) out.push_back(detail::extract(params, cache, b));
  return out;
}

template <class T>
ForwardTrace<T> forward(const ParameterSet<T>& params, std::span<const taskgen::Token> tokens) {
  const std::vector<taskgen::Token> seq(tokens.begin(), tokens.end());
  return std::move(forward_batch(params, std::span(&seq, 1)).front());
}

template <class T>
std::pair<loss::LossBreakdown, ParameterSet<T>> backward(const ParameterSet<T>& params,
                                                         std::span<const taskgen::Example> batch,
                                                         const loss::LossConfig& config) {
  if (batch.empty()) throw DomainError("backward on an empty batch");
  config.validate();
  std::vector<std::vector<taskgen::Token>> seqs;
  seqs.reserve(batch.size());
  for (const auto& ex : batch) seqs.push_back(ex.tokens());

  detail::Cache<T> cache;
  cache.batch = detail::PackedBatch::pack(seqs, static_cast<std::size_t>(params.config.max_seq_len));
  detail::forward(params, cache);

  const std::size_t n = cache.batch.rows(), v = params.config.vocab_size;
  std::vector<T> dlogits(n * v, T(0)), dhalt(n, T(0));
  loss::LossBreakdown total;
  const T scale = T(1) / static_cast<T>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto trace = detail::extract(params, cache, b);
    const std::size_t lo = cache.batch.starts[b];
    const auto part = loss::thermodynamic_loss_grad(trace, batch[b], config, scale,
                                                    std::span<T>(dlogits.data() + lo * v, trace.length * v),
                                                    std::span<T>(dhalt.data() + lo, trace.length));
    total += part;
  }
  total = total.scaled(1.0 / static_cast<double>(batch.size()));

  auto grads = params.zeros_like();
  detail::backward(params, cache, dlogits, dhalt, grads);
  return {total, std::move(grads)};
}

template <class T>
SsmProbe<T> probe_ssm_layer(const ParameterSet<T>& params, std::span<const taskgen::Token> tokens, int layer) {
  if (params.config.arch != Arch::SSM) throw ConfigError("probe_ssm_layer requires an SSM");
  if (layer < 0 || layer >= params.config.n_layers) throw ConfigError("layer index out of range");
  const std::vector<taskgen::Token> seq(tokens.begin(), tokens.end());
  detail::Cache<T> cache;
  cache.batch = detail::PackedBatch::pack(std::span(&seq, 1), static_cast<std::size_t>(params.config.max_seq_len));
  detail::forward(params, cache);
  const auto& c = cache.layers[static_cast<std::size_t>(layer)];
  return {c.z, c.delta, c.drive, c.decay, c.h};
}

template std::vector<ForwardTrace<float>> forward_batch<float>(const ParameterSet<float>&,
                                                               std::span<const std::vector<taskgen::Token>>);
template std::vector<ForwardTrace<double>> forward_batch<double>(const ParameterSet<double>&,
                                                                 std::span<const std::vector<taskgen::Token>>);
template ForwardTrace<float> forward<float>(const ParameterSet<float>&, std::span<const taskgen::Token>);
template ForwardTrace<double> forward<double>(const ParameterSet<double>&, std::span<const taskgen::Token>);
template std::pair<loss::LossBreakdown, ParameterSet<float>> backward<float>(const ParameterSet<float>&,
                                                                             std::span<const taskgen::Example>,
                                                                             const loss::LossConfig&);
template std::pair<loss::LossBreakdown, ParameterSet<double>> backward<double>(const ParameterSet<double>&,
                                                                               std::span<const taskgen::Example>,
                                                                               const loss::LossConfig&);
template SsmProbe<float> probe_ssm_layer<float>(const ParameterSet<float>&, std::span<const taskgen::Token>, int);
template SsmProbe<double> probe_ssm_layer<double>(const ParameterSet<double>&, std::span<const taskgen::Token>, int);

}  // namespace thermo::model
