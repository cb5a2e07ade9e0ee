#include <benchmark/benchmark.h>

#include "fergcn/autodiff.hpp"
#include "fergcn/graph.hpp"
#include "fergcn/model.hpp"
#include "fergcn/rng.hpp"
#include "fergcn/synth.hpp"
#include "fergcn/trainer.hpp"

using namespace fergcn;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, CounterRng& rng) {
  Tensor t({r, c});
  for (auto& v : t.values()) v = rng.uniform(-1, 1);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  CounterRng rng(1, 1);
  const Tensor a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Tape tape(Tape::Mode::kInference);
    benchmark::DoNotOptimize(matmul(tape.constant(a), tape.constant(b)).value()[0]);
  }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(32)->Arg(64);

void BM_GcnForward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  CounterRng rng(2, 2);
  const Tensor h = random_matrix(16, d, rng), a = random_matrix(16, 16, rng), w = random_matrix(d, d, rng);
  for (auto _ : state) {
    Tape tape(Tape::Mode::kInference);
    benchmark::DoNotOptimize(gcn_forward(tape.constant(h), tape.constant(a), tape.constant(w), 0.2).value()[0]);
  }
}
BENCHMARK(BM_GcnForward)->Arg(8)->Arg(32);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.module_count = static_cast<std::size_t>(state.range(0));
  Model model = Model::init(cfg, 3);
  const auto sample = make_sample(SyntheticSpec{}, 2, CounterRng(3, 3));
  for (auto _ : state) {
    Tape tape(Tape::Mode::kInference);
    benchmark::DoNotOptimize(model_forward(tape, model, sample.images).logits.value()[0]);
  }
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.module_count = static_cast<std::size_t>(state.range(0));
  Model model = Model::init(cfg, 4);
  zero_grads(model.parameters());
  const auto sample = make_sample(SyntheticSpec{}, 1, CounterRng(4, 4));
  for (auto _ : state) {
    Tape tape;
    const auto out = model_forward(tape, model, sample.images);
    tape.backward(cross_entropy(out.logits, sample.label));
  }
}
BENCHMARK(BM_ModelForwardBackward)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  SyntheticSpec spec;
  const auto ds = make_dataset(spec, 10);
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 0.02;
  for (auto _ : state) benchmark::DoNotOptimize(train(cfg, ds).metrics.back().train_loss);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * ds.split.train.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace
BENCHMARK_MAIN();
