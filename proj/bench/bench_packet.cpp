// Serial vs OpenMP packet steps on a synthetic haphazard stream.
//   bench_packet [--features N] [--steps T] [--hidden S] [--threads K]
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "haphazard/packet.hpp"

using namespace haphazard;

namespace {

std::vector<Instance> make_stream(std::size_t features, std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Instance> out(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    out[t].index = t;
    double sum = 0.0;
    for (FeatureId id = 1; id <= features; ++id) {
      if (!rng.bernoulli(0.5)) continue;
      const double v = rng.uniform(-1.0, 1.0);
      sum += v;
      out[t].features.push_back({id, v});
    }
    out[t].label = sum > 0.0 ? 1 : 0;
  }
  return out;
}

struct Timing {
  double seconds = 0.0;
  double checksum = 0.0;
};

Timing time_policy(ExecPolicy exec, const PacketConfig& base, const std::vector<Instance>& stream) {
  PacketConfig cfg = base;
  cfg.exec = exec;
  PacketModel model(cfg, 7);
  Timing tm;
  const auto t0 = std::chrono::steady_clock::now();
  for (const Instance& inst : stream) tm.checksum += model.train_step(inst).loss;
  tm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return tm;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"packet step benchmark"};
  std::size_t features = 32, steps = 500, hidden = 64;
  int threads = 0;
  app.add_option("--features", features);
  app.add_option("--steps", steps);
  app.add_option("--hidden", hidden);
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
  const int used = omp_get_max_threads();
#else
  const int used = 1;
#endif

  PacketConfig cfg;
  cfg.hidden = hidden;
  cfg.optim.lr = 0.0006;
  const auto stream = make_stream(features, steps, 11);

  std::printf("features=%zu steps=%zu hidden=%zu threads=%d\n", features, steps, hidden, used);
  const Timing serial = time_policy(ExecPolicy::Serial, cfg, stream);
  const Timing parallel = time_policy(ExecPolicy::Parallel, cfg, stream);
  std::printf("%-9s %10.3f s  %8.1f steps/s\n", "serial", serial.seconds, steps / serial.seconds);
  std::printf("%-9s %10.3f s  %8.1f steps/s\n", "parallel", parallel.seconds,
              steps / parallel.seconds);
  std::printf("speedup   %10.2fx\n", serial.seconds / parallel.seconds);
  if (serial.checksum != parallel.checksum) {
    std::printf("MISMATCH: loss sums differ (%.17g vs %.17g)\n", serial.checksum,
                parallel.checksum);
    return 1;
  }
  std::printf("identical loss trajectories\n");
  return 0;
}
