#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "evb/events.hpp"
#include "evb/kernels.hpp"
#include "evb/networks.hpp"
#include "evb/simulator.hpp"
#include "support.hpp"

using namespace evb;
namespace k = evb::nn::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

k::ConvGeometry geometry(const benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  return {c, c, s, s, 3};
}

template <bool Reference>
void conv_forward(benchmark::State& state) {
  const auto g = geometry(state);
  const auto x = random_vec(static_cast<std::size_t>(g.in_channels) * g.height * g.width, 1);
  const auto w = random_vec(static_cast<std::size_t>(g.out_channels) * g.reduction(), 2);
  const auto b = random_vec(g.out_channels, 3);
  std::vector<float> y(static_cast<std::size_t>(g.out_channels) * g.height * g.width);
  for (auto _ : state) {
    if constexpr (Reference) {
      k::reference::conv2d_forward(g, x.data(), w.data(), b.data(), y.data());
    } else {
      k::conv2d_forward(g, x.data(), w.data(), b.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * g.out_channels * g.reduction() * g.height * g.width);
}

template <bool Reference>
void conv_backward(benchmark::State& state) {
  const auto g = geometry(state);
  const std::size_t act = static_cast<std::size_t>(g.in_channels) * g.height * g.width;
  const auto x = random_vec(act, 1);
  const auto w = random_vec(static_cast<std::size_t>(g.out_channels) * g.reduction(), 2);
  const auto gy = random_vec(act, 3);
  std::vector<float> gx(act), gw(w.size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (Reference) {
      k::reference::conv2d_backward_input(g, gy.data(), w.data(), gx.data());
      k::reference::conv2d_backward_params(g, x.data(), gy.data(), gw.data(), gb.data());
    } else {
      k::conv2d_backward_input(g, gy.data(), w.data(), gx.data());
      k::conv2d_backward_params(g, x.data(), gy.data(), gw.data(), gb.data());
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

const Sample& scene() {
  static const Sample s = evbtest::scene_sample(128, 128, 6, 1);
  return s;
}

void voxelize_fast(benchmark::State& state) {
  const auto& s = scene();
  for (auto _ : state) benchmark::DoNotOptimize(voxelize(s.events, s.exposure.window(), 6));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(s.events.size()));
}

void voxelize_reference(benchmark::State& state) {
  const auto& s = scene();
  for (auto _ : state) benchmark::DoNotOptimize(reference::voxelize(s.events, s.exposure.window(), 6));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(s.events.size()));
}

template <bool Reference>
void simulate_frames(benchmark::State& state) {
  const auto seq = evbtest::moving_scene(128, 128, 7, 2);
  ThresholdConfig cfg;
  cfg.sigma_c = 0.03;
  for (auto _ : state) {
    if constexpr (Reference) {
      benchmark::DoNotOptimize(reference::simulate(seq.frames, cfg));
    } else {
      benchmark::DoNotOptimize(simulate(seq.frames, cfg));
    }
  }
}

void deblur_forward(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  const nn::DeblurNet<float> net(NetworkConfig{}, 1);
  const LogFrame in = to_log(Image(s, s, 0.5));
  const VoxelGrid v(6, s, s, {0, 10});
  for (auto _ : state) benchmark::DoNotOptimize(forward_deblur(net, in, v));
}

}  // namespace

BENCHMARK(conv_forward<false>)->Args({32, 64})->Args({48, 32})->Args({8, 128})->Unit(benchmark::kMicrosecond);
BENCHMARK(conv_forward<true>)->Args({32, 64})->Args({48, 32})->Args({8, 128})->Unit(benchmark::kMicrosecond);
BENCHMARK(conv_backward<false>)->Args({32, 64})->Args({48, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(conv_backward<true>)->Args({32, 64})->Args({48, 32})->Unit(benchmark::kMicrosecond);
BENCHMARK(voxelize_fast)->Unit(benchmark::kMicrosecond);
BENCHMARK(voxelize_reference)->Unit(benchmark::kMicrosecond);
BENCHMARK(simulate_frames<false>)->Unit(benchmark::kMillisecond);
BENCHMARK(simulate_frames<true>)->Unit(benchmark::kMillisecond);
BENCHMARK(deblur_forward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
