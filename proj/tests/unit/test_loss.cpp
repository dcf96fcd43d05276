#include <cmath>
#include <vector>

#include "doctest.h"
#include "thermo/errors.hpp"
#include "thermo/loss.hpp"
#include "thermo/model.hpp"

using namespace thermo;
using namespace thermo::loss;

namespace {

model::ForwardTrace<double> synthetic_trace(const taskgen::Example& ex, std::uint64_t seed) {
  model::ForwardTrace<double> tr;
  tr.length = ex.length();
  tr.vocab = 24;
  tr.d_model = 1;
  auto rng = mathcore::split_rng(seed, "trace");
  tr.logits.resize(tr.length * 24);
  for (auto& x : tr.logits) x = rng.uniform(-3, 3);
  tr.halt_conf.resize(tr.length);
  for (auto& x : tr.halt_conf) x = rng.uniform(0.01, 0.99);
  tr.hidden.assign(tr.length, 0.0);
  return tr;
}

}  // namespace

TEST_CASE("cross_entropy: uniform logits give ln 24") {
  const std::vector<double> logits(5 * 24, 0.3);
  const std::vector<taskgen::Token> targets{3, 4, 5, 6, 7};
  const std::vector<std::uint8_t> mask(5, 1);
  CHECK(cross_entropy(logits, 24, targets, mask) == doctest::Approx(std::log(24.0)).epsilon(1e-12));
  CHECK(std::log(24.0) == doctest::Approx(3.17805).epsilon(1e-5));
}

TEST_CASE("cross_entropy: +20 on every target is near zero") {
  const std::vector<taskgen::Token> targets{3, 9, 1, 22};
  std::vector<double> logits(4 * 24, 0.0);
  for (std::size_t t = 0; t < 4; ++t) logits[t * 24 + static_cast<std::size_t>(targets[t])] = 20.0;
  const std::vector<std::uint8_t> mask(4, 1);
  // 23 e^-20 is about 4.7e-8
  CHECK(cross_entropy(logits, 24, targets, mask) < 1e-6);
}

TEST_CASE("cross_entropy: 2-position hand case against a direct softmax-log oracle") {
  std::vector<double> logits(2 * 24, 0.0);
  logits[5] = 1.0;
  logits[7] = -0.5;
  logits[24 + 2] = 2.0;
  logits[24 + 10] = 0.25;
  const std::vector<taskgen::Token> targets{7, 10};
  const std::vector<std::uint8_t> mask{1, 1};
  auto nll = [&](std::size_t row, std::size_t target) {
    double z = 0;
    for (std::size_t j = 0; j < 24; ++j) z += std::exp(logits[row * 24 + j]);
    return -std::log(std::exp(logits[row * 24 + target]) / z);
  };
  const double expect = 0.5 * (nll(0, 7) + nll(1, 10));
  CHECK(std::abs(cross_entropy(logits, 24, targets, mask) - expect) <= 1e-9 * expect);
  // masking a row drops it from the mean
  const std::vector<std::uint8_t> half{0, 1};
  CHECK(cross_entropy(logits, 24, targets, half) == doctest::Approx(nll(1, 10)).epsilon(1e-12));
  const std::vector<std::uint8_t> none{0, 0};
  CHECK_THROWS_AS(cross_entropy(logits, 24, targets, none), DomainError);
}

TEST_CASE("energy_term examples") {
  const std::vector<double> p{0.2, 0.3, 0.6, 0.9};
  CHECK(energy_term(p, 2, 0.0) == 0.0);
  CHECK(energy_term(p, 2, 0.05) == doctest::Approx(0.05).epsilon(1e-12));
  const std::vector<double> calibrated{0, 0, 1, 1};
  CHECK(energy_term(calibrated, 2, 0.05) == 0.0);
  CHECK_THROWS_AS(energy_term(p, 4, 0.05), DomainError);
}

TEST_CASE("energy_term monotonicity and alpha linearity") {
  auto rng = mathcore::split_rng(2, "mono");
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(10);
    for (auto& x : p) x = rng.uniform(0.05, 0.9);
    const std::size_t stop = rng.below(10), t = rng.below(10);
    const double base = energy_term(p, stop, 0.05);
    auto q = p;
    q[t] += 0.05;
    const double bumped = energy_term(q, stop, 0.05);
    if (t < stop)
      CHECK(bumped >= base);
    else
      CHECK(bumped <= base);
    CHECK(energy_term(p, stop, 0.15) == doctest::Approx(3 * energy_term(p, stop, 0.05)).epsilon(1e-12));
  }
}

TEST_CASE("halt_bce examples") {
  const std::vector<double> half(6, 0.5);
  const std::vector<std::uint8_t> labels{0, 0, 0, 1, 1, 1};
  CHECK(halt_bce(half, labels, 0.0) == 0.0);
  CHECK(halt_bce(half, labels, 0.1) == doctest::Approx(0.1 * std::log(2.0)).epsilon(1e-12));

  const std::vector<double> p{0.2, 0.7, 0.9};
  const std::vector<std::uint8_t> y{0, 1, 1};
  const double expect = -(std::log(0.8) + std::log(0.7) + std::log(0.9)) / 3.0;
  CHECK(std::abs(halt_bce(p, y, 1.0) - expect) <= 1e-9 * expect);

  const std::vector<double> extreme{0.0, 1.0};
  const std::vector<std::uint8_t> wrong{1, 0};
  const double v = halt_bce(extreme, wrong, 1.0);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(1e-7)).epsilon(1e-6));
}

TEST_CASE("thermodynamic_loss composition") {
  const auto ex = taskgen::make_parity("10110");
  const auto tr = synthetic_trace(ex, 1);
  const auto plain = thermodynamic_loss(tr, ex, {0.0, 0.0, true});
  CHECK(plain.total == plain.ce);
  CHECK(plain.energy == 0.0);
  CHECK(plain.halt == 0.0);

  const auto full = thermodynamic_loss(tr, ex, {0.05, 0.10, true});
  CHECK(std::abs(full.total - (full.ce + full.energy + full.halt)) < 1e-6);
  CHECK(full.ce == plain.ce);
  CHECK(full.ce >= 0);
  CHECK(full.energy >= 0);
  CHECK(full.halt >= 0);

  // energy over the window from the last prompt token, halt BCE over every position
  const std::size_t w0 = window_start(ex);
  std::vector<double> window(tr.halt_conf.begin() + static_cast<std::ptrdiff_t>(w0), tr.halt_conf.end());
  CHECK(full.energy == doctest::Approx(energy_term(window, ex.optimal_stop - w0, 0.05)).epsilon(1e-12));
  CHECK(full.halt == doctest::Approx(halt_bce(tr.halt_conf, taskgen::halt_labels(ex), 0.10)).epsilon(1e-12));

  const auto doubled = thermodynamic_loss(tr, ex, {0.10, 0.20, true});
  CHECK(doubled.energy == doctest::Approx(2 * full.energy).epsilon(1e-12));
  CHECK(doubled.halt == doctest::Approx(2 * full.halt).epsilon(1e-12));

  // unmasked CE also scores the prompt continuation
  const auto unmasked = thermodynamic_loss(tr, ex, {0.0, 0.0, false});
  CHECK(unmasked.ce != plain.ce);
}

TEST_CASE("invalid loss configs") {
  CHECK_THROWS_AS((LossConfig{-0.1, 0.0, true}).validate(), ConfigError);
  CHECK_THROWS_AS((LossConfig{0.0, NAN, true}).validate(), ConfigError);
}

TEST_CASE("loss gradient w.r.t. logits and halt logit matches finite differences") {
  const auto ex = taskgen::make_parity("011");
  auto tr = synthetic_trace(ex, 4);
  const LossConfig cfg{0.05, 0.1, true};
  std::vector<double> dl(tr.logits.size()), dh(tr.length);
  thermodynamic_loss_grad<double>(tr, ex, cfg, 1.0, dl, dh);
  const double eps = 1e-6;
  for (std::size_t k = 0; k < tr.logits.size(); k += 7) {
    const double o = tr.logits[k];
    tr.logits[k] = o + eps;
    const double up = thermodynamic_loss(tr, ex, cfg).total;
    tr.logits[k] = o - eps;
    const double dn = thermodynamic_loss(tr, ex, cfg).total;
    tr.logits[k] = o;
    REQUIRE(dl[k] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5));
  }
  for (std::size_t t = 0; t < tr.length; ++t) {
    // perturb through the sigmoid pre-activation
    const double p = tr.halt_conf[t], z = std::log(p / (1 - p));
    auto at = [&](double zz) {
      tr.halt_conf[t] = 1 / (1 + std::exp(-zz));
      return thermodynamic_loss(tr, ex, cfg).total;
    };
    const double num = (at(z + eps) - at(z - eps)) / (2 * eps);
    tr.halt_conf[t] = p;
    REQUIRE(dh[t] == doctest::Approx(num).epsilon(1e-5));
  }
}

TEST_CASE("batch loss equals the mean of per-example losses") {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_state = 4;
  for (auto arch : {model::Arch::SSM, model::Arch::Transformer}) {
    c.arch = arch;
    const auto p = model::init_model(c);
    const std::vector<taskgen::Example> batch{taskgen::make_parity("1101"), taskgen::make_parity("01"),
                                              taskgen::make_parity("1110001")};
    const LossConfig cfg{0.05, 0.1, true};
    const auto [total, g] = model::backward<float>(p, batch, cfg);
    double sum = 0;
    for (const auto& ex : batch) sum += thermodynamic_loss(model::forward<float>(p, ex.tokens()), ex, cfg).total;
    CHECK(total.total == doctest::Approx(sum / 3).epsilon(1e-5));
  }
}
