#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/regime.hpp"

using namespace thermo;
using namespace thermo::regime;

namespace {

// Pair-enumeration oracle, written independently of the library.
double recurrence_oracle(const std::vector<std::vector<double>>& s, double eps) {
  auto dist = [&](std::size_t i, std::size_t j) {
    double acc = 0;
    for (std::size_t k = 0; k < s[i].size(); ++k) acc += (s[i][k] - s[j][k]) * (s[i][k] - s[j][k]);
    return std::sqrt(acc);
  };
  std::vector<double> d;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) d.push_back(dist(i, j));
  std::sort(d.begin(), d.end());
  const double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  int pairs = 0, rec = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 2; j < s.size(); ++j) {
      ++pairs;
      const double x = dist(i, j);
      rec += x == 0 || x < eps * med;
    }
  return static_cast<double>(rec) / pairs;
}

LabeledFeatures separable(std::size_t n, std::uint64_t seed) {
  auto rng = mathcore::split_rng(seed, "sep");
  LabeledFeatures d;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = rng.uniform() < 0.4;
    std::vector<double> x(5);
    for (auto& v : x) v = rng.normal();
    x[2] = (pos ? 1.0 : -1.0) * (0.5 + rng.uniform());
    d.x.push_back(x);
    d.y.push_back(pos);
  }
  return d;
}

}  // namespace

TEST_CASE("cycling_score examples") {
  const std::vector<std::vector<double>> constant(8, std::vector<double>{0.3, -1.0, 2.0});
  CHECK(cycling_score(constant, 0.5) == 1.0);

  std::vector<std::vector<double>> line;
  for (int t = 0; t < 8; ++t) line.push_back({1.0 * t, 2.0 * t});
  CHECK(cycling_score(line, 0.5) == 0.0);

  std::vector<std::vector<double>> alt;
  for (int t = 0; t < 8; ++t) alt.push_back(t % 2 ? std::vector<double>{1, 0} : std::vector<double>{0, 1});
  // 21 pairs with j >= i + 2; the 12 with even gap coincide.
  CHECK(cycling_score(alt, 0.5) == doctest::Approx(12.0 / 21.0));
  CHECK(recurrence_oracle(alt, 0.5) == doctest::Approx(12.0 / 21.0));

  CHECK_THROWS_AS(cycling_score(std::span(constant).first(3), 0.5), DomainError);
}

TEST_CASE("cycling_score matches the oracle and is scale invariant") {
  auto rng = mathcore::split_rng(1, "cyc");
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 4 + rng.below(9);
    std::vector<std::vector<double>> s(n, std::vector<double>(6));
    for (auto& v : s)
      for (auto& x : v) x = std::round(rng.normal() * 2) / 2;
    const double eps = rng.uniform(0.2, 1.5);
    const double c = cycling_score(s, eps);
    CHECK(c == doctest::Approx(recurrence_oracle(s, eps)));
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
    auto scaled = s;
    for (auto& v : scaled)
      for (auto& x : v) x *= 0.25;  // power of two keeps distances exact
    CHECK(cycling_score(scaled, eps) == c);
  }
}

TEST_CASE("classify_regime examples") {
  const RegimeConfig c;
  CHECK(classify_regime({0.9, 0.001, 0.8}, c) == RegimeLabel::ORBITING);
  CHECK(classify_regime({0.1, -0.5, 0.8}, c) == RegimeLabel::CONVERGING);
  CHECK(classify_regime({0.1, 0.0, c.h_hi + 0.1}, c) == RegimeLabel::DIFFUSING);
  CHECK(classify_regime({0.1, 0.3, 0.5}, c) == RegimeLabel::PROGRESSING);
  CHECK(classify_regime({0.9, -0.5, 0.5}, c) == RegimeLabel::PROGRESSING);
}

TEST_CASE("classify_regime partitions signal space") {
  const RegimeConfig c;
  auto rng = mathcore::split_rng(2, "partition");
  for (int i = 0; i < 5000; ++i) {
    const Signals s{rng.uniform(), rng.uniform(-0.1, 0.1), rng.uniform(0, 2.5)};
    const bool flat = std::abs(s.grad_h) < c.flat_band;
    const bool conv = s.grad_h <= -c.flat_band && s.s_c < c.s_c_hi;
    const bool orb = s.s_c >= c.s_c_hi && flat;
    const bool dif = !orb && s.h_abs >= c.h_hi && flat;
    REQUIRE(conv + orb + dif <= 1);
    const auto label = classify_regime(s, c);
    const auto expected = conv  ? RegimeLabel::CONVERGING
                          : orb ? RegimeLabel::ORBITING
                          : dif ? RegimeLabel::DIFFUSING
                                : RegimeLabel::PROGRESSING;
    REQUIRE(label == expected);
    REQUIRE(classify_regime(s, c) == label);
  }
}

TEST_CASE("regime config") {
  CHECK(RegimeConfig::for_dimension(8).h_hi == doctest::Approx(0.6 * std::log(8.0)));
  CHECK(RegimeConfig::for_dimension(16).h_hi == doctest::Approx(0.6 * std::log(16.0)));
  CHECK_THROWS_AS(RegimeConfig::for_dimension(1), ConfigError);
  RegimeConfig c;
  c.validate();
  c.window = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("signals over a window") {
  RegimeConfig c;
  std::vector<std::vector<double>> states;
  std::vector<double> ent;
  for (int t = 0; t < 12; ++t) {
    states.push_back({std::cos(t * 0.3), std::sin(t * 0.3)});
    ent.push_back(2.0 - 0.1 * t);
  }
  const auto s = signals_at(states, ent, 11, c);
  CHECK(s.grad_h == doctest::Approx(-0.1));
  CHECK(s.h_abs == ent[11]);
  CHECK(s.s_c == doctest::Approx(cycling_score(std::span(states).subspan(4, 8), c.epsilon)));
  CHECK(signals_at(states, ent, 2, c).s_c == 0.0);
  const auto series = signal_series(states, ent, c);
  CHECK(series.size() == 12);
  CHECK(series[11].s_c == s.s_c);

  const std::vector<double> halt(12, 0.25);
  const auto f = confusion_features(series, halt, 3, 8);
  REQUIRE(f.size() == 25);
  for (std::size_t k = 0; k < 12; ++k) CHECK(f[k] == 0.0);  // slots before the series start
  CHECK(f[21] == series[3].s_c);
  CHECK(f[22] == series[3].grad_h);
  CHECK(f[23] == series[3].h_abs);
  CHECK(f[24] == 0.25);
}

TEST_CASE("confusion head: separable data gives F1 1") {
  const auto train = separable(400, 3), test = separable(200, 4);
  const auto head = train_confusion_head(train);
  const auto s = score_confusion_head(head, test);
  CHECK(s.f1 == 1.0);
  CHECK(s.tp + s.fp + s.fn + s.tn == 200);
  for (const auto& x : test.x) {
    const double p = head.predict(x);
    REQUIRE((p > 0.0 && p < 1.0));
  }
  const auto back = ConfusionHead::from_json(head.to_json());
  CHECK(back.predict(test.x[0]) == head.predict(test.x[0]));
}

TEST_CASE("confusion head: shuffled labels stay near the label-independent baseline") {
  // A predictor independent of the labels with positive rate q has
  // F1 = 2pq / (p + q) <= 2p / (1 + p) for class prior p.
  auto train = separable(400, 5), test = separable(400, 6);
  auto rng = mathcore::split_rng(7, "shuffle");
  rng.shuffle(train.y.begin(), train.y.end());
  rng.shuffle(test.y.begin(), test.y.end());
  double prior = 0;
  for (auto v : test.y) prior += v;
  prior /= static_cast<double>(test.y.size());
  const auto s = score_confusion_head(train_confusion_head(train), test);
  CHECK(s.f1 <= 2 * prior / (1 + prior) + 0.1);
}

TEST_CASE("confusion head errors") {
  auto d = separable(50, 8);
  std::fill(d.y.begin(), d.y.end(), 1);
  CHECK_THROWS_AS(train_confusion_head(d), DegenerateError);
  CHECK_THROWS_AS(train_confusion_head(LabeledFeatures{}), DomainError);
}

TEST_CASE("halt_veto examples and subset property") {
  CHECK(halt_veto(0.95, 0.1, RegimeLabel::ORBITING) == Decision::CONTINUE);
  CHECK(halt_veto(0.95, 0.1, RegimeLabel::DIFFUSING) == Decision::CONTINUE);
  CHECK(halt_veto(0.95, 0.1, RegimeLabel::CONVERGING) == Decision::HALT);
  CHECK(halt_veto(0.95, 0.1, RegimeLabel::PROGRESSING) == Decision::HALT);
  CHECK(halt_veto(0.95, 0.9, RegimeLabel::CONVERGING) == Decision::CONTINUE);
  auto rng = mathcore::split_rng(9, "veto");
  for (int i = 0; i < 2000; ++i) {
    const double h = rng.uniform(), c = rng.uniform();
    const auto r = static_cast<RegimeLabel>(rng.below(4));
    if (h < 0.5) REQUIRE(halt_veto(h, c, r) == Decision::CONTINUE);
    if (halt_veto(h, c, r) == Decision::HALT) REQUIRE(h >= 0.5);
  }
}

TEST_CASE("veto controller only removes halts") {
  model::ModelConfig mc;
  mc.arch = model::Arch::SSM;
  mc.d_model = 16;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_state = 4;
  const auto p = model::init_model(mc);
  SampleOptions o;
  o.max_len = 24;
  o.threshold = 0.0;  // every position becomes a sample
  o.regime = RegimeConfig::for_dimension(4);
  std::vector<taskgen::Example> ex{taskgen::make_parity("1101"), taskgen::make_parity("010")};
  const auto samples = confusion_samples(p, ex, o);
  REQUIRE(!samples.x.empty());
  for (const auto& x : samples.x) REQUIRE(x.size() == 3 * o.regime.window + 1);

  ConfusionHead head;
  head.mean.assign(25, 0.0);
  head.scale.assign(25, 1.0);
  head.weights.assign(25, 0.0);
  head.weights[24] = 4.0;
  head.bias = -0.2;
  VetoConfig v;
  v.threshold = 0.05;
  model::GenerationOptions g;
  g.max_len = 24;
  const auto gen = model::generate(p, ex[0].prompt, g);
  const auto log = controller_log(head, gen.trace, ex[0].prompt.size() - 1, o, v);
  CHECK(log.size() == gen.trace.length - ex[0].prompt.size() + 1);
  const auto ctrl = make_veto_controller(head, o, v);
  for (const auto& step : log) {
    const bool plain_halt = step.halt >= v.threshold;
    if (step.decision == Decision::HALT) REQUIRE(plain_halt);
    REQUIRE((step.decision == Decision::HALT) == ctrl(gen.trace, step.position));
  }
}
