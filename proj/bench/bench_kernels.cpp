// Serial vs OpenMP kernels on layer-sized shapes, plus a full training-batch
// backward pass. Prints median wall time over repeats and checks the two
// kernel families agree bitwise.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "thermo/kernels.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/model.hpp"

using namespace thermo;
using Clock = std::chrono::steady_clock;

namespace {

double median_ms(const std::function<void()>& fn, int repeats) {
  std::vector<double> t;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = Clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  auto rng = mathcore::split_rng(seed, "bench");
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 9;
  std::printf("threads: %d, repeats: %d\n", kernels::thread_count(), repeats);
  std::printf("%-34s %10s %10s %8s %s\n", "kernel", "serial ms", "omp ms", "speedup", "bitwise");

  struct Shape {
    std::size_t m, k, n;
  };
  for (const Shape s : {Shape{1024, 64, 64}, Shape{1024, 64, 128}, Shape{4096, 64, 256}, Shape{2048, 512, 512}}) {
    const auto a = random_vec(s.m * s.k, 1), b = random_vec(s.k * s.n, 2), bt = random_vec(s.m * s.n, 3);
    std::vector<float> c1(s.m * s.n), c2(s.m * s.n), g1(s.k * s.n), g2(s.k * s.n);
    const kernels::ConstMat<float> A{a.data(), s.m, s.k}, B{b.data(), s.k, s.n}, D{bt.data(), s.m, s.n};

    const double ts = median_ms([&] { kernels::serial::matmul<float>(A, B, {c1.data(), s.m, s.n}, false); }, repeats);
    const double tp =
        median_ms([&] { kernels::parallel::matmul<float>(A, B, {c2.data(), s.m, s.n}, false); }, repeats);
    const bool same = std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0;
    char label[64];
    std::snprintf(label, sizeof label, "matmul %zux%zu * %zux%zu", s.m, s.k, s.k, s.n);
    std::printf("%-34s %10.3f %10.3f %8.2f %s\n", label, ts, tp, ts / tp, same ? "yes" : "NO");

    const double ts2 = median_ms(
        [&] {
          std::fill(g1.begin(), g1.end(), 0.f);
          kernels::serial::matmul_tn<float>(A, D, {g1.data(), s.k, s.n});
        },
        repeats);
    const double tp2 = median_ms(
        [&] {
          std::fill(g2.begin(), g2.end(), 0.f);
          kernels::parallel::matmul_tn<float>(A, D, {g2.data(), s.k, s.n});
        },
        repeats);
    const bool same2 = std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0;
    std::snprintf(label, sizeof label, "matmul_tn %zux%zu^T * %zux%zu", s.m, s.k, s.m, s.n);
    std::printf("%-34s %10.3f %10.3f %8.2f %s\n", label, ts2, tp2, ts2 / tp2, same2 ? "yes" : "NO");
  }

  for (auto arch : {model::Arch::SSM, model::Arch::Transformer}) {
    model::ModelConfig cfg;
    cfg.arch = arch;
    const auto p = model::init_model(cfg);
    std::vector<taskgen::Example> batch;
    auto rng = mathcore::split_rng(0, "bench-batch");
    for (int i = 0; i < 32; ++i) batch.push_back(taskgen::gen_parity(2 + static_cast<int>(rng.below(7)), rng));
    const loss::LossConfig lc{0.05, 0.1, true};
    const double t = median_ms([&] { (void)model::backward<float>(p, batch, lc); }, repeats);
    std::printf("%-34s %10s %10.3f\n", (std::string("backward batch32 ") + std::string(model::to_string(arch))).c_str(),
                "-", t);
  }
  return 0;
}
