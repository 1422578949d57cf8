// Serial reference vs OpenMP kernels at the reference synthetic scale.
#include <benchmark/benchmark.h>

#include <random>

#include "rclp/affinity.hpp"
#include "rclp/kernels.hpp"
#include "rclp/parallel.hpp"

namespace {

using namespace rclp;

constexpr std::size_t kNodes = 2010;
constexpr std::size_t kDims = 64;
constexpr std::size_t kClasses = 10;

Matrix unit_rows(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (double& v : m.row(i)) s += (v = g(rng)) * v;
    for (double& v : m.row(i)) v /= std::sqrt(s);
  }
  return m;
}

/// Threads come from the benchmark argument; 0 means serial.
template <typename Serial, typename Omp>
void run(benchmark::State& state, Serial serial, Omp omp) {
  const int threads = static_cast<int>(state.range(0));
  if (threads > 0) set_num_threads(threads);
  for (auto _ : state) {
    if (threads == 0) {
      benchmark::DoNotOptimize(serial());
    } else {
      benchmark::DoNotOptimize(omp());
    }
  }
  set_num_threads(0);
}

void BM_GramNT(benchmark::State& state) {
  const Matrix a = unit_rows(kNodes, kDims, 1);
  run(state, [&] { return kernels::serial::gram_nt(a, a); }, [&] { return kernels::omp::gram_nt(a, a); });
}

void BM_TopK(benchmark::State& state) {
  const Matrix x = unit_rows(kNodes, kDims, 2);
  run(state, [&] { return kernels::serial::topk_similarity(x, 20, 3.0); },
      [&] { return kernels::omp::topk_similarity(x, 20, 3.0); });
}

void BM_Diffusion(benchmark::State& state) {
  const SparseMatrix w = normalize_symmetric(kernels::serial::topk_similarity(unit_rows(kNodes, kDims, 3), 20, 3.0));
  const kernels::CgOptions options{1e-6, 200};
  run(state,
      [&] {
        Matrix z;
        return kernels::serial::diffusion_columns(w, kClasses, 0.99, options, z);
      },
      [&] {
        Matrix z;
        return kernels::omp::diffusion_columns(w, kClasses, 0.99, options, z);
      });
}

void BM_ProjectRows(benchmark::State& state) {
  const Matrix basis = unit_rows(kDims, kClasses - 1, 4);
  const Matrix x = unit_rows(kNodes, kDims, 5);
  run(state, [&] { return kernels::serial::project_rows(basis, x); },
      [&] { return kernels::omp::project_rows(basis, x); });
}

#define RCLP_THREAD_ARGS ->ArgName("threads")->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)

BENCHMARK(BM_GramNT) RCLP_THREAD_ARGS;
BENCHMARK(BM_TopK) RCLP_THREAD_ARGS;
BENCHMARK(BM_Diffusion) RCLP_THREAD_ARGS;
BENCHMARK(BM_ProjectRows) RCLP_THREAD_ARGS;

}  // namespace
BENCHMARK_MAIN();
