#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "thermo/errors.hpp"
#include "thermo/trainer.hpp"

using namespace thermo;
using namespace thermo::trainer;
namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny(model::Arch arch) {
  model::ModelConfig c;
  c.arch = arch;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_state = 4;
  return c;
}

const taskgen::Dataset& data() {
  static const auto ds = taskgen::build_dataset(taskgen::Task::Parity, {240, 60, 60},
                                                taskgen::TierRanges::defaults(taskgen::Task::Parity), 0,
                                                taskgen::Sampling::DisjointPools);
  return ds;
}

TrainConfig quick(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.lr = 3e-3;
  return c;
}

std::string fresh_dir(const std::string& name) {
  const auto d = std::string(THERMO_TEST_TMP) + "/" + name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("Adam matches a hand computation on a 2-parameter toy") {
  TrainConfig c;
  c.lr = 0.1;
  Adam adam(2, c);
  std::vector<float> p{1.0f, -2.0f};
  const std::vector<double> g1{0.5, -0.25}, g2{0.1, 0.3};
  std::vector<double> ref{1.0, -2.0}, m(2, 0), v(2, 0);
  for (int step = 1; step <= 2; ++step) {
    const auto& g = step == 1 ? g1 : g2;
    std::vector<float> gf{static_cast<float>(g[0]), static_cast<float>(g[1])};
    adam.step(p, gf);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      ref[i] = static_cast<float>(ref[i] - 0.1 * mh / (std::sqrt(vh) + 1e-8));
      CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-7));
    }
  }
  // first step moves each parameter by about lr against its gradient sign
  Adam fresh(2, c);
  std::vector<float> q{0.0f, 0.0f};
  fresh.step(q, {0.5f, -0.25f});
  CHECK(q[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(fresh.steps() == 1);
}

TEST_CASE("Adam mask leaves masked parameters untouched") {
  TrainConfig c;
  Adam adam(3, c);
  std::vector<float> p{1, 2, 3};
  const std::vector<std::uint8_t> mask{1, 0, 1};
  adam.step(p, {1, 1, 1}, &mask);
  CHECK(p[1] == 2.0f);
  CHECK(p[0] != 1.0f);
}

TEST_CASE("global norm clipping") {
  std::vector<float> g{3, 4};
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  std::vector<float> small{0.3f, 0.4f};
  clip_global_norm(small, 1.0);
  CHECK(small[0] == 0.3f);
}

TEST_CASE("zero epochs returns the initial parameters and an empty history") {
  const auto init = model::init_model(tiny(model::Arch::SSM));
  const auto r = train(init, data(), {}, quick(0));
  CHECK(r.final.data == init.data);
  CHECK(r.best.data == init.data);
  CHECK(r.history.epochs.empty());
  CHECK(r.history.best_epoch == 0);
}

TEST_CASE("training is deterministic, decreases CE and writes the run directory") {
  for (auto arch : {model::Arch::SSM, model::Arch::Transformer}) {
    const auto init = model::init_model(tiny(arch));
    const loss::LossConfig lc{0.05, 0.1, true};
    const auto dir = fresh_dir(std::string("trainer_") + std::string(model::to_string(arch)));
    TrainOptions opt;
    opt.run_dir = dir;
    const auto a = train(init, data(), lc, quick(3), opt);
    const auto b = train(init, data(), lc, quick(3));
    CHECK(std::memcmp(a.final.data.data(), b.final.data.data(), a.final.data.size() * sizeof(float)) == 0);
    REQUIRE(a.history.epochs.size() == 3);
    CHECK(a.history.epochs.back().train.ce < a.history.epochs.front().train.ce);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.history.epochs[i].epoch == static_cast<int>(i + 1));
    for (const char* f : {"config.json", "history.jsonl", "ckpt_best.bin", "ckpt_final.bin"})
      CHECK(fs::exists(dir + "/" + f));
    const auto hist = read_history(dir + "/history.jsonl");
    REQUIRE(hist.size() == 3);
    CHECK(hist[2].train.ce == doctest::Approx(a.history.epochs[2].train.ce).epsilon(1e-12));
    const auto final_ck = model::load_checkpoint(dir + "/ckpt_final.bin");
    CHECK(final_ck.data == a.final.data);
    const auto best_ck = model::load_checkpoint(dir + "/ckpt_best.bin");
    CHECK(best_ck.data == a.best.data);
    // the best epoch has the highest validation accuracy
    const auto& best = a.history.epochs[static_cast<std::size_t>(a.history.best_epoch - 1)];
    for (const auto& e : a.history.epochs) CHECK(e.val_tf_accuracy <= best.val_tf_accuracy);
  }
}

TEST_CASE("different seeds give different runs") {
  const auto init = model::init_model(tiny(model::Arch::SSM));
  auto c1 = quick(1), c2 = quick(1);
  c2.seed = 1;
  const auto a = train(init, data(), {}, c1), b = train(init, data(), {}, c2);
  CHECK(a.final.data != b.final.data);
}

TEST_CASE("frozen tensors are bitwise unchanged") {
  const auto init = model::init_model(tiny(model::Arch::SSM));
  TrainOptions opt;
  opt.frozen = {"head.halt.w", "head.halt.b"};
  const auto r = train(init, data(), {0.05, 0.1, true}, quick(2), opt);
  for (const auto& name : opt.frozen) {
    const auto before = init.tensor(name), after = r.final.tensor(name);
    CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(float)) == 0);
  }
  CHECK(r.final.tensor("head.tok.w")[0] != init.tensor("head.tok.w")[0]);
  TrainOptions bad;
  bad.frozen = {"no.such.tensor"};
  CHECK_THROWS_AS(train(init, data(), {}, quick(1), bad), ConfigError);
}

TEST_CASE("non-finite parameters abort training with a numeric error") {
  auto init = model::init_model(tiny(model::Arch::SSM));
  init.tensor("head.tok.b")[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train(init, data(), {}, quick(1)), NumericError);
}

TEST_CASE("train config validation and JSON round trip") {
  auto c = quick(4);
  c.grad_clip = 0.5;
  CHECK(train_config_from_json(to_json(c)) == c);
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick(1);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
