// Serial vs OpenMP timings for the probe gradient kernel and the grid sweep.
//
//   bench_probes [rows] [dim] [layers]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <vector>

#include <omp.h>

#include "toolgap/kernels.hpp"
#include "toolgap/probes.hpp"
#include "toolgap/rng.hpp"

using namespace toolgap;
using clk = std::chrono::steady_clock;

namespace {

template <typename F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clk::now();
    f();
    best = std::min(best, std::chrono::duration<double>(clk::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t rows = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 20000;
  const std::size_t dim = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 256;
  const std::size_t layers = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 4;
  std::printf("threads=%d rows=%zu dim=%zu layers=%zu\n", omp_get_max_threads(), rows, dim, layers);

  Rng rng(42);
  std::vector<double> x(rows * dim);
  std::vector<int> y(rows);
  for (auto& v : x) v = rng.uniform01() * 2.0 - 1.0;
  for (auto& v : y) v = static_cast<int>(rng.uniform_int(0, 1));
  std::vector<double> w(dim, 0.01), g(dim);
  double gb = 0.0;
  const kernels::Batch batch{x, y, rows, dim};

  double ls = 0.0, lp = 0.0;
  const double ts = best_of(5, [&] { ls = kernels::loss_grad_serial(batch, w, 0.1, g, gb); });
  const double tp = best_of(5, [&] { lp = kernels::loss_grad_parallel(batch, w, 0.1, g, gb); });
  std::printf("loss_grad  serial %8.3f ms  parallel %8.3f ms  speedup %.2fx  |dloss| %.3g\n", ts * 1e3, tp * 1e3,
              ts / tp, std::abs(ls - lp));

  // Grid sweep over a small synthetic dump.
  const std::size_t samples = 600, sdim = 32;
  DumpHeader h;
  h.model = "bench";
  h.dim = sdim;
  h.n_layers = layers;
  std::vector<float> body;
  std::map<std::string, int> labels;
  for (std::size_t s = 0; s < samples; ++s) {
    char id[32];
    std::snprintf(id, sizeof id, "s%04zu", s);
    h.sample_ids.push_back(id);
    labels[id] = static_cast<int>(rng.uniform_int(0, 1));
    for (std::size_t i = 0; i < h.floats_per_sample(); ++i)
      body.push_back(static_cast<float>(rng.uniform01() + (i % sdim == 0 ? labels[id] : 0)));
  }
  const auto path = std::filesystem::temp_directory_path() / "toolgap_bench.hsd";
  write_dump(path, h, body);
  const auto dump = HiddenStateDump::open(path);
  ProbeHyper hyper;
  const double ss = best_of(1, [&] { sweep_grid(dump, labels, ProbeTarget::Cognition, hyper, {false, Execution::Serial}); });
  const double sp = best_of(1, [&] { sweep_grid(dump, labels, ProbeTarget::Cognition, hyper, {false, Execution::Parallel}); });
  std::printf("sweep      serial %8.3f ms  parallel %8.3f ms  speedup %.2fx  (%zu cells)\n", ss * 1e3, sp * 1e3,
              ss / sp, layers * kPositions);
  std::filesystem::remove(path);
  return 0;
}
