#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "thermo/errors.hpp"
#include "thermo/model.hpp"

using namespace thermo;
using namespace thermo::model;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(Arch arch, std::uint64_t seed = 3) {
  ModelConfig c;
  c.arch = arch;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_state = 4;
  c.seed = seed;
  return c;
}

ModelConfig small(Arch arch, std::uint64_t seed = 3) {
  ModelConfig c = tiny(arch, seed);
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  return c;
}

std::string tmp(const std::string& name) {
  fs::create_directories(THERMO_TEST_TMP);
  return std::string(THERMO_TEST_TMP) + "/" + name;
}

const Arch kArchs[] = {Arch::SSM, Arch::Transformer};

}  // namespace

TEST_CASE("init is deterministic and seed-dependent") {
  for (auto arch : kArchs) {
    const auto a = init_model(small(arch)), b = init_model(small(arch)), c = init_model(small(arch, 4));
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    CHECK(a.all_finite());
  }
}

TEST_CASE("desk parameter count equals the closed-form layer sum") {
  for (auto arch : kArchs) {
    ModelConfig c;
    c.arch = arch;
    const auto p = init_model(c);
    CHECK(p.count() == expected_parameter_count(c));
    // hand-written recipe for d=64, L=2, S=8, vocab 24, max_len 256
    const std::size_t d = 64, v = 24, s = 8, h = static_cast<std::size_t>(c.mlp_hidden());
    const std::size_t heads = d + d * v + v + d + 1;
    const std::size_t hand = arch == Arch::SSM
                                 ? v * d + 2 * (d + d * d + d + 2 * d * s + d * s + d + d * d + d + 3 * d * h) + heads
                                 : v * d + 256 * d + 2 * (d + 4 * d * d + d + d * h + h + h * d + d) + heads;
    CHECK(p.count() == hand);
  }
}

TEST_CASE("full-scale config: SSM and Transformer counts within 5%") {
  ModelConfig s, t;
  s.arch = Arch::SSM;
  t.arch = Arch::Transformer;
  for (auto* c : {&s, &t}) {
    c->d_model = 512;
    c->n_layers = 6;
    c->n_heads = 8;
    c->d_state = 16;
  }
  const double a = static_cast<double>(expected_parameter_count(s)), b = static_cast<double>(expected_parameter_count(t));
  CHECK(std::abs(a - b) / std::max(a, b) < 0.05);
}

TEST_CASE("initial halt confidence is about 0.1") {
  for (auto arch : kArchs) {
    const auto p = init_model(small(arch));
    const auto tr = forward<float>(p, taskgen::make_parity("10110").tokens());
    double m = 0;
    for (float x : tr.halt_conf) m += x;
    m /= static_cast<double>(tr.length);
    CHECK(m == doctest::Approx(0.1).epsilon(0.5));
  }
}

TEST_CASE("forward shape contract and halt range") {
  for (auto arch : kArchs) {
    const auto p = init_model(small(arch));
    const auto toks = taskgen::make_parity("1101").tokens();
    const auto tr = forward<float>(p, toks);
    CHECK(tr.length == toks.size());
    CHECK(tr.logits.size() == toks.size() * 24);
    CHECK(tr.halt_conf.size() == toks.size());
    CHECK(tr.hidden.size() == toks.size() * 32);
    if (arch == Arch::SSM)
      CHECK(tr.state.size() == toks.size() * 4);
    else
      CHECK(tr.state.empty());
    for (float x : tr.halt_conf) CHECK((x > 0.0f && x < 1.0f));
    for (float x : tr.logits) CHECK(std::isfinite(x));
  }
}

TEST_CASE("forward errors: overlong input and bad token ids") {
  auto c = small(Arch::SSM);
  c.max_seq_len = 8;
  const auto p = init_model(c);
  std::vector<taskgen::Token> longseq(9, taskgen::Vocabulary::digit(1));
  CHECK_THROWS_AS(forward<float>(p, longseq), LengthError);
  std::vector<taskgen::Token> bad{1, 30};
  CHECK_THROWS_AS(forward<float>(p, bad), EncodingError);
}

TEST_CASE("causality: perturbing token t+1 leaves outputs at positions <= t unchanged") {
  auto rng = mathcore::split_rng(0, "causality");
  for (auto arch : kArchs) {
    const auto p = init_model(small(arch));
    const auto base = taskgen::make_parity("10110110").tokens();
    const auto ref = forward<float>(p, base);
    for (int trial = 0; trial < 12; ++trial) {
      auto toks = base;
      const std::size_t k = 1 + rng.below(toks.size() - 1);
      toks[k] = static_cast<taskgen::Token>(3 + (toks[k] - 3 + 1 + rng.below(20)) % 21);
      const auto tr = forward<float>(p, toks);
      for (std::size_t t = 0; t < k; ++t) {
        for (std::size_t j = 0; j < 24; ++j) REQUIRE(tr.logits[t * 24 + j] == ref.logits[t * 24 + j]);
        REQUIRE(tr.halt_conf[t] == ref.halt_conf[t]);
      }
    }
  }
}

TEST_CASE("forward is bit-identical across runs and batch packing") {
  for (auto arch : kArchs) {
    const auto p = init_model(small(arch));
    std::vector<std::vector<taskgen::Token>> seqs;
    for (const char* b : {"01", "1101", "10110111", "0000"}) seqs.push_back(taskgen::make_parity(b).tokens());
    const auto batch = forward_batch<float>(p, seqs);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      CHECK(batch[i] == forward<float>(p, seqs[i]));
      CHECK(forward<float>(p, seqs[i]) == forward<float>(p, seqs[i]));
    }
  }
}

TEST_CASE("SSM with zero transition is memoryless: h_t = delta_t * B_t * x_t") {
  auto p = init_model(tiny(Arch::SSM)).cast<double>();
  for (auto& a : p.tensor("layers.0.ssm.a")) a = 1e4;  // exp(-delta * softplus(a)) underflows to 0
  const auto toks = taskgen::make_parity("1011").tokens();
  const auto pr = probe_ssm_layer<double>(p, toks, 0);
  const std::size_t d = 16, s = 4;
  for (std::size_t t = 0; t < toks.size(); ++t)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < s; ++j) {
        REQUIRE(pr.decay[(t * d + c) * s + j] == 0.0);
        const double expect = pr.delta[t * d + c] * pr.drive[t * s + j] * pr.input[t * d + c];
        REQUIRE(pr.state[(t * d + c) * s + j] == doctest::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("SSM recurrence matches the closed form with memory") {
  const auto p = init_model(tiny(Arch::SSM)).cast<double>();
  const auto toks = taskgen::make_parity("0110").tokens();
  const auto pr = probe_ssm_layer<double>(p, toks, 0);
  const std::size_t d = 16, s = 4;
  const auto a = p.tensor("layers.0.ssm.a");
  std::vector<double> h(d * s, 0.0);
  for (std::size_t t = 0; t < toks.size(); ++t)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < s; ++j) {
        const double delta = pr.delta[t * d + c];
        const double decay = std::exp(-delta * std::log1p(std::exp(a[c * s + j])));
        auto& hv = h[c * s + j];
        hv = decay * hv + delta * pr.drive[t * s + j] * pr.input[t * d + c];
        REQUIRE(pr.state[(t * d + c) * s + j] == doctest::Approx(hv).epsilon(1e-10));
      }
  // initial transition 0.9 at delta = 1
  CHECK(std::exp(-std::log1p(std::exp(a[0]))) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("gradient check: analytic vs central differences, >= 20 parameters per tensor") {
  const std::vector<taskgen::Example> batch{taskgen::make_parity("1101"), taskgen::make_parity("011")};
  const loss::LossConfig lc{0.05, 0.1, true};
  for (auto arch : kArchs) {
    auto p = init_model(tiny(arch)).cast<double>();
    auto rng = mathcore::split_rng(11, "gradcheck");
    for (auto& x : p.data) x += 0.1 * rng.normal();
    const auto grads = backward<double>(p, batch, lc).second;
    for (const auto& t : p.layout->tensors()) {
      std::vector<std::size_t> idx;
      if (t.size <= 20) {
        for (std::size_t i = 0; i < t.size; ++i) idx.push_back(i);
      } else {
        while (idx.size() < 20) idx.push_back(rng.below(t.size));
      }
      for (auto i : idx) {
        const std::size_t k = t.offset + i;
        const double orig = p.data[k], eps = 1e-4;
        p.data[k] = orig + eps;
        const double up = backward<double>(p, batch, lc).first.total;
        p.data[k] = orig - eps;
        const double down = backward<double>(p, batch, lc).first.total;
        p.data[k] = orig;
        const double num = (up - down) / (2 * eps), ana = grads.data[k];
        const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
        CAPTURE(t.name);
        CAPTURE(i);
        REQUIRE(rel < 1e-3);
      }
    }
  }
}

TEST_CASE("loss linearity in alpha through backward") {
  const std::vector<taskgen::Example> batch{taskgen::make_parity("1001")};
  const auto p = init_model(tiny(Arch::SSM)).cast<double>();
  const auto g0 = backward<double>(p, batch, {0.0, 0.0, true});
  const auto g1 = backward<double>(p, batch, {0.05, 0.0, true});
  const auto g2 = backward<double>(p, batch, {0.10, 0.0, true});
  CHECK(g2.first.energy == doctest::Approx(2 * g1.first.energy).epsilon(1e-12));
  for (std::size_t k = 0; k < p.count(); ++k) {
    const double e1 = g1.second.data[k] - g0.second.data[k], e2 = g2.second.data[k] - g0.second.data[k];
    REQUIRE(std::abs(e2 - 2 * e1) <= 1e-9 * (1 + std::abs(e2)));
  }
}

TEST_CASE("zero learning signal: targets equal to a saturated argmax give near-zero gradients") {
  // A model whose token head bias overwhelmingly predicts each gold next token
  // cannot exist for a varied sequence, so use a sequence whose targets are constant.
  auto p = init_model(tiny(Arch::SSM)).cast<double>();
  for (auto& w : p.tensor("head.tok.w")) w = 0;
  auto b = p.tensor("head.tok.b");
  std::fill(b.begin(), b.end(), -50.0);
  const auto zero = taskgen::Vocabulary::digit(0);
  b[static_cast<std::size_t>(zero)] = 50.0;
  taskgen::Example ex = taskgen::make_parity("00");
  ex.trace.assign(ex.trace.size(), zero);
  const auto [l, g] = backward<double>(p, std::vector{ex}, {0.0, 0.0, true});
  CHECK(l.ce < 1e-12);
  double worst = 0;
  for (double x : g.data) worst = std::max(worst, std::abs(x));
  CHECK(worst < 1e-12);
}

TEST_CASE("decoder step reproduces forward rows") {
  for (auto arch : kArchs) {
    const auto p = init_model(small(arch));
    const auto toks = taskgen::make_parity("1011011").tokens();
    const auto tr = forward<float>(p, toks);
    Decoder dec(p);
    std::size_t ws = 0;
    for (std::size_t t = 0; t < toks.size(); ++t) {
      CHECK(dec.step(toks[t]) == t);
      const auto lg = dec.logits();
      for (std::size_t j = 0; j < 24; ++j) REQUIRE(lg[j] == doctest::Approx(tr.logits[t * 24 + j]).epsilon(1e-5));
      REQUIRE(dec.halt_conf() == doctest::Approx(tr.halt_conf[t]).epsilon(1e-5));
      if (arch == Arch::SSM) {
        const auto st = dec.state();
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(st[j] == doctest::Approx(tr.state[t * 4 + j]).epsilon(1e-4));
        if (t == 0) ws = dec.working_set();
        REQUIRE(dec.working_set() == ws);  // O(1) state
        REQUIRE(dec.full_state().size() == 32 * 4);
      }
    }
  }
}

TEST_CASE("generation: max_len = 1 truncates; Never vs Token share prefixes") {
  for (auto arch : kArchs) {
    const auto p = init_model(small(arch));
    const auto prompt = taskgen::make_parity("11").prompt;
    GenerationOptions o;
    o.max_len = 1;
    o.policy = HaltPolicy::Never;
    const auto g = generate(p, prompt, o);
    CHECK(g.generated.size() == 1);
    CHECK(g.truncated);

    GenerationOptions tok, never;
    tok.max_len = never.max_len = 40;
    tok.policy = HaltPolicy::Token;
    never.policy = HaltPolicy::Never;
    const auto a = generate(p, prompt, tok), b = generate(p, prompt, never);
    REQUIRE(a.generated.size() <= b.generated.size());
    for (std::size_t i = 0; i < a.generated.size(); ++i) CHECK(a.generated[i] == b.generated[i]);
    CHECK(b.generated.size() == 40);
  }
}

TEST_CASE("checkpoint round trip, wrong d_state and truncation") {
  const auto p = init_model(small(Arch::SSM));
  const auto path = tmp("model_rt.bin");
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  CHECK(q.config == p.config);
  CHECK(std::memcmp(q.data.data(), p.data.data(), p.data.size() * sizeof(float)) == 0);

  auto other = small(Arch::SSM);
  other.d_state = 8;
  CHECK_THROWS(load_checkpoint(path, other));
  CHECK_NOTHROW(load_checkpoint(path, p.config));

  const auto size = fs::file_size(path);
  const auto cut = tmp("model_cut.bin");
  fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
  fs::resize_file(cut, size - 37);
  try {
    load_checkpoint(cut);
    FAIL("truncated checkpoint loaded");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset <= size);
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::ofstream(tmp("garbage.bin")) << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(tmp("garbage.bin")), ParseError);
}

TEST_CASE("config JSON round trip and validation") {
  const auto c = small(Arch::Transformer, 9);
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  auto bad = c;
  bad.n_heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.d_state = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
