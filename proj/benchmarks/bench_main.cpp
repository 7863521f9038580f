#include <benchmark/benchmark.h>

#include <random>

#include "gmot/neural.hpp"
#include "gmot/ot.hpp"
#include "gmot/trainer.hpp"

using namespace gmot;

namespace {

PointCloud cloud(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix pts(n, 3);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < 3; ++k) pts(i, k) = normal(rng);
  return PointCloud::uniform(std::move(pts));
}

ot::SinkhornOptions opts(double eps, ot::SinkhornMethod method) {
  ot::SinkhornOptions o;
  o.epsilon = eps;
  o.method = method;
  o.tol = 1e-4;
  o.max_iter = 1000;
  o.scaling_decay = 0.5;
  return o;
}

}  // namespace

static void BM_Sinkhorn(benchmark::State& state) {
  const Index n = state.range(0);
  const auto method = static_cast<ot::SinkhornMethod>(state.range(1));
  const PointCloud a = cloud(n, 1);
  const PointCloud b = cloud(n, 2);
  const ot::SinkhornOptions o = opts(1e-3, method);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ot::entropic_ot(a, b, Metric::euclidean, Scaling::mean, o).cost);
  }
  state.SetLabel(method == ot::SinkhornMethod::stabilized ? "stabilized" : "log_domain");
}
BENCHMARK(BM_Sinkhorn)->ArgsProduct({{64, 256}, {0, 1}})->Unit(benchmark::kMillisecond);

static void BM_Divergence(benchmark::State& state) {
  const PointCloud a = cloud(state.range(0), 3);
  const PointCloud b = cloud(state.range(0), 4);
  const ot::SinkhornOptions o = opts(1e-2, ot::SinkhornMethod::stabilized);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ot::sinkhorn_divergence(a, b, Metric::sq_euclidean, Scaling::mean, o).value);
  }
}
BENCHMARK(BM_Divergence)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_EntropicGw(benchmark::State& state) {
  const PointCloud a = cloud(state.range(0), 5);
  const PointCloud b = cloud(state.range(0), 6);
  const Matrix cx = pairwise_distances(a.points, Metric::euclidean) / 4.0;
  const Matrix cy = pairwise_distances(b.points, Metric::euclidean) / 4.0;
  ot::GwOptions o;
  o.epsilon = 1e-3;
  o.outer_iter = 10;
  o.tol = 1e-4;
  o.inner = opts(1e-3, ot::SinkhornMethod::stabilized);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ot::entropic_gw(cx, cy, a.weights, b.weights, o).cost);
  }
}
BENCHMARK(BM_EntropicGw)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_MlpForwardBackward(benchmark::State& state) {
  const nn::MlpMap m = nn::init_orthogonal({3, 128, 64, 64, 3}, true, 1);
  const Matrix x = cloud(state.range(0), 7).points;
  const Matrix up = Matrix::Ones(x.rows(), 3);
  for (auto _ : state) {
    const nn::ForwardPass pass = m.forward(x);
    benchmark::DoNotOptimize(m.backward(pass, up).params.data());
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(256)->Arg(1024);

static void BM_TrainingLoss(benchmark::State& state) {
  const train::TrainConfig cfg = train::TrainConfig::desk();
  const nn::MlpMap phi = nn::init_orthogonal({3, 128, 64, 64, 3}, true, 2);
  const nn::MlpMap t = nn::init_orthogonal({3, 128, 64, 64, 3}, false, 3);
  const Matrix x = cloud(cfg.batch_n, 8).points;
  const Matrix z = cloud(cfg.batch_n, 9).points;
  for (auto _ : state) {
    if (state.range(0) == 0) {
      benchmark::DoNotOptimize(train::loss_phi(phi, x, z, cfg).total);
    } else {
      benchmark::DoNotOptimize(train::loss_T(t, x, z, cfg).total);
    }
  }
  state.SetLabel(state.range(0) == 0 ? "loss_phi" : "loss_T");
}
BENCHMARK(BM_TrainingLoss)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
