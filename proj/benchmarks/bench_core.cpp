#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "gbgnn/aggregate.hpp"
#include "gbgnn/boost.hpp"
#include "gbgnn/theory.hpp"

using namespace gbgnn;

namespace {

const NodeDataset& blocks(NodeId n) {
  static std::map<NodeId, NodeDataset> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, synthesize_two_block(n, 20.0 / n, 2.0 / n, 1)).first;
  }
  return it->second;
}

Matrix features(Index n, Index c) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix x(n, c);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  return x;
}

}  // namespace

static void BM_Propagate(benchmark::State& state) {
  const NodeDataset& d = blocks(static_cast<NodeId>(state.range(0)));
  const PropagationMatrix p = augmented_adjacency(d.graph);
  const Matrix x = features(d.n_nodes(), 64);
  for (auto _ : state) benchmark::DoNotOptimize(p.apply(x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.graph.n_edges()) * 64);
}
BENCHMARK(BM_Propagate)->Arg(1000)->Arg(10000);

static void BM_MlpForwardBackward(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix x = features(n, 128);
  const MlpParams p = init_mlp(MlpArchitecture::make(128, 1, 64, 7, OutputHead::kIdentity), 1);
  ForwardCache cache;
  for (auto _ : state) {
    const Matrix out = forward(p, x, {}, &cache);
    benchmark::DoNotOptimize(backward(p, cache, out, false));
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(256)->Arg(2048);

static void BM_KtaObjective(benchmark::State& state) {
  const NodeDataset& d = blocks(2000);
  const Aggregator a = Aggregator::kta(augmented_adjacency(d.graph));
  std::vector<Matrix> terms;
  for (const Matrix& t : a.kta_terms(features(d.n_nodes(), 32))) {
    terms.push_back(gather_rows(t, d.split.train()));
  }
  Labels y;
  for (NodeId i : d.split.train()) y.push_back(d.labels[static_cast<std::size_t>(i)]);
  const Matrix onehot = one_hot(y, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kta_objective(terms, onehot, a.kta_weights()));
}
BENCHMARK(BM_KtaObjective);

static void BM_McRademacher(benchmark::State& state) {
  std::vector<Vector> set;
  for (int i = 0; i < 200; ++i) set.push_back(features(12, 1).col(0) * (1.0 + i));
  McOptions o;
  o.samples = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(mc_transductive_rademacher(set, 6, 6, o));
}
BENCHMARK(BM_McRademacher)->Arg(20000);

static void BM_SammeStages(benchmark::State& state) {
  const NodeDataset& d = blocks(1000);
  ModelSpec spec;
  spec.hidden_width = 32;
  spec.train.epochs = 50;
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_samme(d, spec, SammeConfig{static_cast<int>(state.range(0)), kDefaultClip}));
  }
}
BENCHMARK(BM_SammeStages)->Arg(5)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
