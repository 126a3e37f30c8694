// Optimized kernels against their serial reference loops, plus one toy
// denoiser call and one DDIM run.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "avatar/dataset.hpp"
#include "avatar/kernels.hpp"
#include "avatar/sampling.hpp"

using namespace avatar;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

kernels::ConvDims conv_dims(int size) {
  kernels::ConvDims d;
  d.n = 4;
  d.cin = 32;
  d.cout = 32;
  d.h = d.w = size;
  d.kh = d.kw = 3;
  d.ph = d.pw = 1;
  return d;
}

template <bool Reference>
void BM_conv_forward(benchmark::State& st) {
  const auto d = conv_dims(static_cast<int>(st.range(0)));
  const auto x = noise(static_cast<std::size_t>(d.n) * d.cin * d.h * d.w, 1);
  const auto w = noise(static_cast<std::size_t>(d.cout) * d.patch(), 2);
  std::vector<double> b(d.cout, 0.1), y(static_cast<std::size_t>(d.n) * d.cout * d.hout() * d.wout());
  for (auto _ : st) {
    if constexpr (Reference)
      kernels::reference::conv2d_forward(d, x, w, b, y);
    else
      kernels::conv2d_forward(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Reference>
void BM_conv_backward(benchmark::State& st) {
  const auto d = conv_dims(static_cast<int>(st.range(0)));
  const auto x = noise(static_cast<std::size_t>(d.n) * d.cin * d.h * d.w, 1);
  const auto w = noise(static_cast<std::size_t>(d.cout) * d.patch(), 2);
  const auto dy = noise(static_cast<std::size_t>(d.n) * d.cout * d.hout() * d.wout(), 3);
  std::vector<double> dx(x.size()), dw(w.size()), db(d.cout);
  for (auto _ : st) {
    if constexpr (Reference)
      kernels::reference::conv2d_backward(d, x, w, dy, dx, dw, db);
    else
      kernels::conv2d_backward(d, x, w, dy, dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Reference>
void BM_gemm(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const auto a = noise(static_cast<std::size_t>(n) * n, 4), b = noise(static_cast<std::size_t>(n) * n, 5);
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  for (auto _ : st) {
    if constexpr (Reference)
      kernels::reference::gemm(n, n, n, a, false, b, true, c, false);
    else
      kernels::gemm(n, n, n, a, false, b, true, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
}

struct Toy {
  ModelConfig cfg = ModelConfig::toy();
  Dataset data;
  AvatarModel model;
  Toy() : data(make()), model(cfg, TextureCodec(cfg.codec), data.encoder, data.basis) {}
  Dataset make() {
    DatasetConfig dc;
    dc.count = 2;
    return generate_dataset(dc, cfg.layout, cfg.build_basis(), cfg.encoder);
  }
};

Toy& toy() {
  static Toy t;
  return t;
}

void BM_denoiser_call(benchmark::State& st) {
  auto& t = toy();
  const auto cond = t.model.condition(t.data.samples[0].embedding);
  const auto z = ad::constant(Tensor::from(noise(t.cfg.layout.total(), 6)));
  for (auto _ : st) {
    ad::NoGradGuard ng;
    benchmark::DoNotOptimize(predict_eps(t.model, z, 500, cond, 1.0).value().data());
  }
}

void BM_ddim_50(benchmark::State& st) {
  auto& t = toy();
  const auto cond = t.model.condition(t.data.samples[0].embedding);
  auto g = GuidanceConfig::toy();
  g.scale = 0.0;
  for (auto _ : st) benchmark::DoNotOptimize(sample_latent(t.model, cond, g, 1).values().data());
}

}  // namespace

BENCHMARK(BM_conv_forward<false>)->Arg(16)->Arg(32);
BENCHMARK(BM_conv_forward<true>)->Arg(16)->Arg(32);
BENCHMARK(BM_conv_backward<false>)->Arg(16)->Arg(32);
BENCHMARK(BM_conv_backward<true>)->Arg(16)->Arg(32);
BENCHMARK(BM_gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_denoiser_call)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ddim_50)->Unit(benchmark::kMillisecond)->Iterations(2);

BENCHMARK_MAIN();
