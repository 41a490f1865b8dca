// Serial reference vs OpenMP kernels. Thread count for the parallel variants
// comes from ONCOCLIP_THREADS, defaulting to the OpenMP maximum.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <cstdlib>

#include "oncoclip/kernels.hpp"
#include "oncoclip/parallel.hpp"
#include "oncoclip/random.hpp"

using namespace oncoclip;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

struct Survival {
  std::vector<double> time, risk, weight;
  std::vector<int> event;
};

Survival random_survival(std::size_t n) {
  Rng rng(7);
  Survival s;
  for (std::size_t i = 0; i < n; ++i) {
    s.time.push_back(rng.exponential(1.0));
    s.event.push_back(rng.uniform() < 0.7);
    s.risk.push_back(rng.normal());
    s.weight.push_back(1.0);
  }
  return s;
}

void use_threads(bool parallel) {
  const char* env = std::getenv("ONCOCLIP_THREADS");
  parallel::set_threads(parallel ? (env ? std::atoi(env) : omp_get_max_threads()) : 1);
}

template <bool Parallel>
void BM_cosine_matrix(benchmark::State& state) {
  use_threads(Parallel);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto u = random_matrix(n, 128, 1), v = random_matrix(n, 128, 2);
  for (auto _ : state) {
    auto s = Parallel ? kernels::cosine_matrix(u, v) : kernels::cosine_matrix_serial(u, v);
    benchmark::DoNotOptimize(s.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <bool Parallel>
void BM_affine(benchmark::State& state) {
  use_threads(Parallel);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix(n, 256, 3);
  const auto w = random_matrix(256, 256, 4);
  const std::vector<double> b(256, 0.1);
  Matrix y(n, 256);
  for (auto _ : state) {
    if (Parallel)
      kernels::affine(x, w.data, b, y);
    else
      kernels::affine_serial(x, w.data, b, y);
    benchmark::DoNotOptimize(y.data.data());
  }
}

template <bool Parallel>
void BM_concordance(benchmark::State& state) {
  use_threads(Parallel);
  const auto s = random_survival(static_cast<std::size_t>(state.range(0)));
  const double tau = std::numeric_limits<double>::infinity();
  for (auto _ : state) {
    auto r = Parallel ? kernels::concordance_pairs(s.time, s.event, s.risk, s.weight, tau)
                      : kernels::concordance_pairs_serial(s.time, s.event, s.risk, s.weight, tau);
    benchmark::DoNotOptimize(r);
  }
}

template <bool Parallel>
void BM_sample_grid(benchmark::State& state) {
  use_threads(Parallel);
  const kernels::GridGeometry src{{160, 160, 40}, {0.8, 0.8, 4.0}, {0, 0, 0}};
  const kernels::GridGeometry dst{{140, 140, 32}, {1.0, 1.0, 5.0}, {0, 0, 0}};
  std::vector<float> in(160 * 160 * 40), out(140 * 140 * 32);
  Rng rng(5);
  for (auto& v : in) v = static_cast<float>(rng.normal());
  const std::array<double, 12> id{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  for (auto _ : state) {
    if (Parallel)
      kernels::sample_grid(in, src, out, dst, id, false, 0.0f);
    else
      kernels::sample_grid_serial(in, src, out, dst, id, false, 0.0f);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_cosine_matrix<false>)->Name("cosine_matrix/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_cosine_matrix<true>)->Name("cosine_matrix/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_affine<false>)->Name("affine/serial")->Arg(512);
BENCHMARK(BM_affine<true>)->Name("affine/parallel")->Arg(512);
BENCHMARK(BM_concordance<false>)->Name("concordance_pairs/serial")->Arg(2000)->Arg(8000);
BENCHMARK(BM_concordance<true>)->Name("concordance_pairs/parallel")->Arg(2000)->Arg(8000);
BENCHMARK(BM_sample_grid<false>)->Name("sample_grid/serial");
BENCHMARK(BM_sample_grid<true>)->Name("sample_grid/parallel");

BENCHMARK_MAIN();
