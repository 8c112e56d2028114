#include <benchmark/benchmark.h>

#include <random>

#include "cdn/evaluation.hpp"
#include "cdn/feature_stats.hpp"
#include "cdn/ops.hpp"
#include "cdn/synthdata.hpp"
#include "cdn/training.hpp"

namespace cdn {
namespace {

Tensor noise(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(shape);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const ad::Var x = ad::parameter(noise({16, c, 32, 32}, 1));
  const ad::Var w = ad::parameter(noise({2 * c, c, 3, 3}, 2));
  const ad::Var b = ad::parameter(noise({2 * c}, 3));
  for (auto _ : state) {
    const ad::Var y = ad::conv2d(x, w, b, 2, 1);
    ad::backward(ad::mean_squared_error(y, ad::constant(Tensor::zeros_like(y.value()))));
    benchmark::DoNotOptimize(w.grad().data());
    for (const ad::Var& v : {x, w, b}) v.zero_grad();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(3)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_DomainTransform(benchmark::State& state) {
  const Tensor a = noise({16, 64, 8, 8}, 4), b = noise({16, 64, 8, 8}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(domain_transform(a, b).data());
}
BENCHMARK(BM_DomainTransform)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  ImageSet set;
  const auto domains = default_domains(2);
  for (const DomainSpec& d : domains)
    for (int id = 0; id < 16; ++id) {
      const LabeledImage real = make_real(id, d, 0, 32);
      const LabeledImage fake = make_fake(real, make_real((id + 1) % 16, d, 0, 32), 1.0, id);
      for (const LabeledImage& img : {real, fake}) {
        set.images.push_back(img.pixels);
        set.labels.push_back(img.label);
        set.domains.push_back(img.domain_id);
        set.identities.push_back(img.identity_id);
        set.paths.push_back(std::to_string(set.paths.size()));
      }
    }
  TrainConfig cfg;
  cfg.steps = 1 << 30;
  cfg.model.image_size = 32;
  cfg.model.stage_channels = {16, 32, 64};
  TrainState st = init_state(cfg);
  std::mt19937_64 rng(6);
  for (auto _ : state) {
    const Batch batch = sample_batch(set, cfg, rng);
    benchmark::DoNotOptimize(train_step(st, batch, cfg).total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Metrics(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoredSample> s(n);
  for (std::size_t k = 0; k < n; ++k) s[k] = {u(rng), static_cast<int>(k % 2), 0};
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(s).auc);
}
BENCHMARK(BM_Metrics)->Arg(1000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace cdn

BENCHMARK_MAIN();
