// Parallel vs serial environment stepping, and batched vs per-sample policy
// evaluation.

#include "quadrace/env.hpp"
#include "quadrace/ppo.hpp"

#include <benchmark/benchmark.h>

using namespace quadrace;

namespace {

VecEnv make_envs(std::size_t n, ModelKind kind) {
  EpisodeConfig ep;
  ep.model = kind;
  auto track = std::make_shared<const Track>(Track::canonical());
  auto params = std::make_shared<const ModelParams>();
  return VecEnv(race_env_factory(track, params, ep), n, 7);
}

Eigen::MatrixXd hover_actions(ModelKind kind, std::size_t n) {
  Eigen::MatrixXd a(kActionDim, Eigen::Index(n));
  const ModelParams params;
  const Eigen::Vector4d u = kind == ModelKind::indi
                                ? Eigen::Vector4d(0.0, 0.0, 0.0, kGravity)
                                : Eigen::Vector4d::Constant(params.nominal.hover_rpm());
  a.colwise() = u;
  return a;
}

template <bool Parallel>
void BM_VecStep(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto kind = state.range(1) ? ModelKind::e2e : ModelKind::indi;
  VecEnv envs = make_envs(n, kind);
  envs.reset();
  const Eigen::MatrixXd a = hover_actions(kind, n);
  for (auto _ : state) {
    auto r = Parallel ? envs.step(a) : envs.step_serial(a);
    benchmark::DoNotOptimize(r.rewards.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(n));
}

void BM_ForwardBatch(benchmark::State& state) {
  Rng rng(3);
  const MlpNet net = MlpNet::random({kObsDimIndi, 64, 64, 64, kActionDim}, Activation::relu, rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(kObsDimIndi, state.range(0));
  for (auto _ : state) {
    Eigen::MatrixXd y = net.forward_batch(x);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardPerSample(benchmark::State& state) {
  Rng rng(3);
  const MlpNet net = MlpNet::random({kObsDimIndi, 64, 64, 64, kActionDim}, Activation::relu, rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(kObsDimIndi, state.range(0));
  for (auto _ : state) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::VectorXd y = net.forward(std::span<const double>(x.col(j).data(), std::size_t(x.rows())));
      benchmark::DoNotOptimize(y.data());
    }
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_VecStep<true>)->Name("vec_step/parallel")->ArgsProduct({{100, 1000}, {0, 1}});
BENCHMARK(BM_VecStep<false>)->Name("vec_step/serial")->ArgsProduct({{100, 1000}, {0, 1}});
BENCHMARK(BM_ForwardBatch)->Arg(100)->Arg(1000);
BENCHMARK(BM_ForwardPerSample)->Arg(100)->Arg(1000);

BENCHMARK_MAIN();
