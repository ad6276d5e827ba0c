#include <benchmark/benchmark.h>

#include "vardlab/config.hpp"
#include "vardlab/ddpm.hpp"
#include "vardlab/metrics.hpp"
#include "vardlab/nn.hpp"
#include "vardlab/so3flow.hpp"
#include "vardlab/tape.hpp"

namespace {

using namespace vardlab;

void BM_MlpForward(benchmark::State& state) {
  Rng rng(1);
  Mlp mlp = Mlp::make(16, {64, 64}, 4, Activation::Tanh, rng);
  Tensor x = rng.gaussian_tensor({32, 16});
  for (auto _ : state) {
    Tape tape;
    Var out = mlp.forward(tape, tape.leaf(x));
    benchmark::DoNotOptimize(tape.value(out).data.data());
  }
}
BENCHMARK(BM_MlpForward);

void BM_MlpBackward(benchmark::State& state) {
  Rng rng(1);
  Mlp mlp = Mlp::make(16, {64, 64}, 4, Activation::Tanh, rng);
  Tensor x = rng.gaussian_tensor({32, 16});
  for (auto _ : state) {
    Tape tape;
    ParamBinding bind;
    Var out = mlp.forward(tape, tape.leaf(x), &bind);
    Var loss = tape.mean(tape.mul(out, out));
    tape.backward(loss);
    bind.accumulate(tape);
    for (Param* p : mlp.parameters()) p->zero_grad();
    benchmark::DoNotOptimize(tape.grad(out).data.data());
  }
}
BENCHMARK(BM_MlpBackward);

void BM_Rollout(benchmark::State& state) {
  Rng rng(1);
  DataConfig data = default_mixture_dataset();
  NoiseSchedule sched = make_schedule(50, "linear", 0.001, 0.2);
  Denoiser model = Denoiser::make(2, 1, {32, 32}, 16, 4, rng);
  for (auto _ : state) {
    Trajectory traj = sample_trajectory(model, 0, sched, rng);
    benchmark::DoNotOptimize(traj.x0().data.data());
  }
}
BENCHMARK(BM_Rollout);

void BM_SlicedWasserstein(benchmark::State& state) {
  Rng rng(1);
  std::vector<Tensor> a, b;
  for (int i = 0; i < 1024; ++i) {
    a.push_back(rng.gaussian_tensor({2}));
    b.push_back(rng.gaussian_tensor({2}));
  }
  for (auto _ : state) {
    Rng proj(7);
    benchmark::DoNotOptimize(sliced_wasserstein(a, b, 32, proj));
  }
}
BENCHMARK(BM_SlicedWasserstein);

void BM_So3ExpLog(benchmark::State& state) {
  Rng rng(1);
  so3::Vec3 w{{0.3, -0.8, 0.5}};
  for (auto _ : state) {
    so3::Rot3 R = so3::exp_map(w);
    so3::Vec3 back = so3::log_map(R);
    benchmark::DoNotOptimize(back[2]);
  }
}
BENCHMARK(BM_So3ExpLog);

}  // namespace

BENCHMARK_MAIN();
