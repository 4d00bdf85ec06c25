#include <benchmark/benchmark.h>

#include <filesystem>

#include "bfuse/analyze.hpp"
#include "bfuse/calibrate.hpp"
#include "bfuse/combine.hpp"
#include "bfuse/gac.hpp"
#include "bfuse/nnc.hpp"
#include "bfuse/normalize.hpp"
#include "bfuse/pipeline.hpp"

namespace {

using namespace bfuse;

const EmbeddingStore& store() {
  static const EmbeddingStore s = synth_generate(SynthParams{});
  return s;
}

const std::vector<LogitMatrix>& logits() {
  static const std::vector<LogitMatrix> z =
      zeroshot_logits(store(), NormMode::kL2, DnOptions{}, store().splits.test);
  return z;
}

void BM_SynthGenerate(benchmark::State& state) {
  SynthParams p;
  p.num_samples = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(synth_generate(p));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SynthGenerate)->Arg(2000)->Arg(20000);

void BM_StoreSaveLoad(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "bfuse-bench-store";
  for (auto _ : state) {
    std::filesystem::remove_all(dir);
    save_store(store(), dir);
    benchmark::DoNotOptimize(load_store(dir));
  }
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_StoreSaveLoad);

void BM_ComputeLogits(benchmark::State& state) {
  const auto mode = static_cast<NormMode>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        compute_logits(prepare_backbone(store().backbones[0], mode, DnOptions{},
                                        store().splits.test)));
  }
  state.SetLabel(to_string(mode));
}
BENCHMARK(BM_ComputeLogits)->DenseRange(0, 3);

void BM_FitTemperature(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fit_temperature(logits()[0], store().labels, store().splits.train));
  }
}
BENCHMARK(BM_FitTemperature);

void BM_FusedAccuracy(benchmark::State& state) {
  const std::vector<double> t(logits().size(), 1.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        fused_accuracy(logits(), t, store().labels, store().splits.train));
  }
}
BENCHMARK(BM_FusedAccuracy);

void BM_VoteTop3(benchmark::State& state) {
  std::vector<ProbMatrix> probs;
  for (const auto& z : logits()) probs.push_back(softmax_rows(z));
  for (auto _ : state) benchmark::DoNotOptimize(vote_top3(probs));
}
BENCHMARK(BM_VoteTop3);

void BM_GacSearch(benchmark::State& state) {
  GacConfig cfg;
  cfg.generations = 50;
  cfg.threads = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gac_search(logits(), store().labels, store().splits.train, cfg));
  }
}
BENCHMARK(BM_GacSearch)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_NncEpoch(benchmark::State& state) {
  TrainConfig cfg;
  cfg.epochs = 1;
  const MatrixD features = nnc_features(store());
  std::vector<std::size_t> dims(store().num_backbones(), 16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nnc_train(features, logits(), store().labels,
                                       store().splits.train, dims, cfg));
  }
}
BENCHMARK(BM_NncEpoch)->Unit(benchmark::kMillisecond);

void BM_VennPartition(benchmark::State& state) {
  std::vector<PredictionVector> preds;
  for (const auto& z : logits()) preds.push_back(predict(z));
  const auto cm =
      correctness(preds, backbone_names(store()), store().labels, store().splits.test);
  for (auto _ : state) benchmark::DoNotOptimize(venn_partition(cm));
}
BENCHMARK(BM_VennPartition);

}  // namespace

BENCHMARK_MAIN();
