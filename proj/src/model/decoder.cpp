#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ops.hpp"
#include "thermo/errors.hpp"
#include "thermo/model.hpp"

namespace thermo::model {

namespace K = kernels::serial;
using namespace ops;

namespace {

struct LayerRefs {
  // Shared.
  std::span<const float> norm1, norm2;
  // SSM.
  std::span<const float> dt_w, dt_b, B_w, C_w, a, out_w, D, gate_w, up_w, down_w;
  std::vector<float> rate;
  // Transformer.
  std::span<const float> q_w, k_w, v_w, o_w, fc1_w, fc1_b, fc2_w, fc2_b;
};

// y = x w (+ b) for one row.
void row_linear(std::span<const float> x, std::span<const float> w, std::size_t out, const float* b,
                std::vector<float>& y) {
  const std::size_t in = x.size();
  y.resize(out);
  K::matmul<float>({x.data(), 1, in}, {w.data(), in, out}, {y.data(), 1, out}, false);
  if (b)
    for (std::size_t j = 0; j < out; ++j) y[j] += b[j];
}

}  // namespace

struct Decoder::Impl {
  Parameters params;
  std::size_t d, s, h, v, heads, hd;
  std::vector<LayerRefs> layers;
  std::vector<std::vector<float>> state;     // SSM: per layer d_model x d_state
  std::vector<std::vector<float>> kcache;    // Transformer: per layer t x d
  std::vector<std::vector<float>> vcache;
  std::vector<float> logits, hidden, summary;
  float halt = 0.f;
  std::size_t pos = 0;

  explicit Impl(const Parameters& p)
      : params(p),
        d(p.config.d_model),
        s(p.config.d_state),
        h(p.config.mlp_hidden()),
        v(p.config.vocab_size),
        heads(p.config.n_heads),
        hd(p.config.head_dim()) {
    const auto& P = params;
    for (int l = 0; l < P.config.n_layers; ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      auto t = [&](const char* n) { return P.tensor(pre + n); };
      LayerRefs r;
      r.norm1 = t("norm1.g");
      r.norm2 = t("norm2.g");
      if (P.config.arch == Arch::SSM) {
        r.dt_w = t("ssm.dt.w");
        r.dt_b = t("ssm.dt.b");
        r.B_w = t("ssm.B.w");
        r.C_w = t("ssm.C.w");
        r.a = t("ssm.a");
        r.out_w = t("ssm.out.w");
        r.D = t("ssm.D");
        r.gate_w = t("mlp.gate.w");
        r.up_w = t("mlp.up.w");
        r.down_w = t("mlp.down.w");
        for (float a : r.a) r.rate.push_back(softplus(a));
        state.emplace_back(d * s, 0.f);
      } else {
        r.q_w = t("attn.q.w");
        r.k_w = t("attn.k.w");
        r.v_w = t("attn.v.w");
        r.o_w = t("attn.o.w");
        r.fc1_w = t("mlp.fc1.w");
        r.fc1_b = t("mlp.fc1.b");
        r.fc2_w = t("mlp.fc2.w");
        r.fc2_b = t("mlp.fc2.b");
        kcache.emplace_back();
        vcache.emplace_back();
      }
      layers.push_back(std::move(r));
    }
  }

  bool ssm() const { return params.config.arch == Arch::SSM; }

  void ssm_layer(std::size_t l, std::vector<float>& u) {
    const LayerRefs& r = layers[l];
    std::vector<float> z(d), pre, drive, cg, y(d), mixed, z2(d), g, up, out;
    rmsnorm_row(u.data(), r.norm1.data(), z.data(), d);
    row_linear(z, r.dt_w, d, r.dt_b.data(), pre);
    row_linear(z, r.B_w, s, nullptr, drive);
    row_linear(z, r.C_w, s, nullptr, cg);
    std::vector<float>& hs = state[l];
    for (std::size_t ch = 0; ch < d; ++ch) {
      const float delta = softplus(pre[ch]);
      const float x = z[ch];
      float acc = 0.f;
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t k = ch * s + j;
        const float decay = std::exp(-delta * r.rate[k]);
        hs[k] = decay * hs[k] + delta * drive[j] * x;
        acc += cg[j] * hs[k];
      }
      y[ch] = acc + r.D[ch] * x;
    }
    row_linear(y, r.out_w, d, nullptr, mixed);
    std::vector<float> u1(d);
    for (std::size_t j = 0; j < d; ++j) u1[j] = u[j] + mixed[j];
    rmsnorm_row(u1.data(), r.norm2.data(), z2.data(), d);
    row_linear(z2, r.gate_w, h, nullptr, g);
    row_linear(z2, r.up_w, h, nullptr, up);
    std::vector<float> act(h);
    for (std::size_t j = 0; j < h; ++j) act[j] = silu(g[j]) * up[j];
    row_linear(act, r.down_w, d, nullptr, out);
    for (std::size_t j = 0; j < d; ++j) u[j] = out[j] + u1[j];
  }

  void transformer_layer(std::size_t l, std::vector<float>& u) {
    const LayerRefs& r = layers[l];
    std::vector<float> z(d), q, k, vv, y, z2(d), m1, out;
    rmsnorm_row(u.data(), r.norm1.data(), z.data(), d);
    row_linear(z, r.q_w, d, nullptr, q);
    row_linear(z, r.k_w, d, nullptr, k);
    row_linear(z, r.v_w, d, nullptr, vv);
    auto& kc = kcache[l];
    auto& vc = vcache[l];
    kc.insert(kc.end(), k.begin(), k.end());
    vc.insert(vc.end(), vv.begin(), vv.end());
    const std::size_t len = pos + 1;
    const float scale = 1.f / std::sqrt(static_cast<float>(hd));
    std::vector<float> attn(d, 0.f), pt(len);
    for (std::size_t head = 0; head < heads; ++head) {
      const std::size_t off = head * hd;
      float m = -std::numeric_limits<float>::infinity();
      for (std::size_t t = 0; t < len; ++t) {
        const float* kt = kc.data() + t * d + off;
        float acc = 0.f;
        for (std::size_t e = 0; e < hd; ++e) acc += q[off + e] * kt[e];
        pt[t] = acc * scale;
        m = std::max(m, pt[t]);
      }
      float zsum = 0.f;
      for (std::size_t t = 0; t < len; ++t) zsum += pt[t] = std::exp(pt[t] - m);
      for (std::size_t t = 0; t < len; ++t) pt[t] /= zsum;
      for (std::size_t t = 0; t < len; ++t) {
        const float* vt = vc.data() + t * d + off;
        for (std::size_t e = 0; e < hd; ++e) attn[off + e] += pt[t] * vt[e];
      }
    }
    row_linear(attn, r.o_w, d, nullptr, y);
    std::vector<float> u1(d);
    for (std::size_t j = 0; j < d; ++j) u1[j] = u[j] + y[j];
    rmsnorm_row(u1.data(), r.norm2.data(), z2.data(), d);
    row_linear(z2, r.fc1_w, h, r.fc1_b.data(), m1);
    for (auto& x : m1) x = gelu(x);
    row_linear(m1, r.fc2_w, d, r.fc2_b.data(), out);
    for (std::size_t j = 0; j < d; ++j) u[j] = out[j] + u1[j];
  }

  std::size_t step(taskgen::Token token) {
    if (token < 0 || static_cast<std::size_t>(token) >= v)
      throw EncodingError("token id " + std::to_string(token) + " outside vocabulary");
    if (!ssm() && pos >= static_cast<std::size_t>(params.config.max_seq_len))
      throw LengthError("position exceeds max_seq_len");
    const auto emb = params.tensor("embed.tok");
    std::vector<float> u(emb.begin() + static_cast<std::ptrdiff_t>(token * d),
                         emb.begin() + static_cast<std::ptrdiff_t>((token + 1) * d));
    if (!ssm()) {
      const auto pe = params.tensor("embed.pos");
      for (std::size_t j = 0; j < d; ++j) u[j] += pe[pos * d + j];
    }
    for (std::size_t l = 0; l < layers.size(); ++l) ssm() ? ssm_layer(l, u) : transformer_layer(l, u);
    hidden.resize(d);
    rmsnorm_row(u.data(), params.tensor("final_norm.g").data(), hidden.data(), d);
    row_linear(hidden, params.tensor("head.tok.w"), v, params.tensor("head.tok.b").data(), logits);
    std::vector<float> hl;
    row_linear(hidden, params.tensor("head.halt.w"), 1, params.tensor("head.halt.b").data(), hl);
    halt = sigmoid(hl[0]);
    if (ssm()) {
      summary.resize(s);
      state_summary(state.back().data(), d, s, summary.data());
    }
    return pos++;
  }
};

Decoder::Decoder(const Parameters& params) : impl_(std::make_unique<Impl>(params)) {}
Decoder::~Decoder() = default;
Decoder::Decoder(Decoder&&) noexcept = default;
Decoder& Decoder::operator=(Decoder&&) noexcept = default;

std::size_t Decoder::step(taskgen::Token token) { return impl_->step(token); }
std::span<const float> Decoder::logits() const { return impl_->logits; }
float Decoder::halt_conf() const { return impl_->halt; }
std::span<const float> Decoder::hidden() const { return impl_->hidden; }
std::span<const float> Decoder::state() const { return impl_->summary; }
std::span<const float> Decoder::full_state() const {
  if (!impl_->ssm()) return {};
  return impl_->state.back();
}
std::size_t Decoder::position() const { return impl_->pos; }

std::size_t Decoder::working_set() const {
  std::size_t n = 0;
  for (const auto& x : impl_->state) n += x.size();
  for (const auto& x : impl_->kcache) n += x.size();
  for (const auto& x : impl_->vcache) n += x.size();
  return n;
}

namespace {

void record(const Decoder& dec, ForwardTrace<float>& tr) {
  tr.length += 1;
  tr.logits.insert(tr.logits.end(), dec.logits().begin(), dec.logits().end());
  tr.halt_conf.push_back(dec.halt_conf());
  tr.hidden.insert(tr.hidden.end(), dec.hidden().begin(), dec.hidden().end());
  tr.state.insert(tr.state.end(), dec.state().begin(), dec.state().end());
}

taskgen::Token argmax(std::span<const float> logits) {
  return static_cast<taskgen::Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

}  // namespace

Generation generate(const Parameters& params, std::span<const taskgen::Token> prompt,
                    const GenerationOptions& options) {
  if (prompt.empty()) throw LengthError("empty prompt");
  if (options.policy == HaltPolicy::Confidence && !(options.threshold > 0.0 && options.threshold < 1.0))
    throw DomainError("halt threshold must lie in (0, 1)");
  if (options.policy == HaltPolicy::Controller && !options.controller)
    throw DomainError("controller policy without a controller");

  Decoder dec(params);
  Generation g;
  g.trace.vocab = static_cast<std::size_t>(params.config.vocab_size);
  g.trace.d_model = static_cast<std::size_t>(params.config.d_model);
  g.trace.d_state = params.config.arch == Arch::SSM ? static_cast<std::size_t>(params.config.d_state) : 0;
  g.tokens.assign(prompt.begin(), prompt.end());
  for (auto tok : prompt) {
    dec.step(tok);
    record(dec, g.trace);
  }
  const std::size_t limit = params.config.arch == Arch::Transformer
                                ? static_cast<std::size_t>(params.config.max_seq_len)
                                : std::numeric_limits<std::size_t>::max();

  while (true) {
    const std::size_t at = dec.position() - 1;
    if (options.policy == HaltPolicy::Confidence && dec.halt_conf() >= options.threshold) {
      g.halted_by_policy = true;
      break;
    }
    if (options.policy == HaltPolicy::Controller && options.controller(g.trace, at)) {
      g.halted_by_policy = true;
      break;
    }
    if (g.generated.size() >= options.max_len) {
      g.truncated = true;
      break;
    }
    const taskgen::Token next = argmax(dec.logits());
    g.generated.push_back(next);
    g.tokens.push_back(next);
    if (next == taskgen::kHalt && options.policy != HaltPolicy::Never) break;
    if (dec.position() >= limit) {
      g.truncated = true;
      break;
    }
    dec.step(next);
    record(dec, g.trace);
  }
  return g;
}

}  // namespace thermo::model
