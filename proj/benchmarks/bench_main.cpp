#include "structmap/evaluation.hpp"
#include "structmap/pipeline.hpp"
#include "world_fixture.hpp"

#include <benchmark/benchmark.h>

using namespace structmap;

namespace {

// Detected mr03 world (seed 1) truncated to max_keyframes, cached across benchmarks.
const testsupport::DetectedWorld& mr03(int max_keyframes) {
  static std::map<int, testsupport::DetectedWorld> cache;
  auto it = cache.find(max_keyframes);
  if (it == cache.end()) it = cache.emplace(max_keyframes, testsupport::detect_world("mr03", 1, max_keyframes)).first;
  return it->second;
}

std::vector<Vec3> wall_points(const KeyFrame& kf) {
  return semantic_filter(kf.cloud, ClassTable::standard(), 0.5)[SemanticClass::Wall];
}

void BM_VoxelDownsample(benchmark::State& state) {
  const auto pts = wall_points(mr03(20).sequence.keyframes[10]);
  for (auto _ : state) benchmark::DoNotOptimize(voxel_downsample(pts, 0.05));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_VoxelDownsample);

void BM_FitPlanesRansac(benchmark::State& state) {
  const auto pts = voxel_downsample(wall_points(mr03(20).sequence.keyframes[10]), 0.05);
  const RecognitionConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit_planes_ransac(pts, cfg, 7));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}
BENCHMARK(BM_FitPlanesRansac);

void BM_RecognizeKeyframe(benchmark::State& state) {
  KeyFrame kf = mr03(20).sequence.keyframes[10];
  const auto classes = ClassTable::standard();
  for (auto _ : state) benchmark::DoNotOptimize(recognize(kf, classes, RecognitionConfig{}, 7));
}
BENCHMARK(BM_RecognizeKeyframe);

void BM_DetectSequence(benchmark::State& state) {
  const auto& w = mr03(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(detect_sequence(w.sequence, DetectConfig{}, 1));
}
BENCHMARK(BM_DetectSequence)->Arg(25)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_StructuralPass(benchmark::State& state) {
  const auto& w = mr03(0);
  const auto db = w.truth.marker_database();
  for (auto _ : state) {
    SceneGraph g = w.graph;
    run_structural_pass(g, StructuralConfig{}, db);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_StructuralPass)->Unit(benchmark::kMillisecond);

void BM_OptimizeAndRefine(benchmark::State& state) {
  const auto& w = mr03(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    SceneGraph g = w.graph;
    benchmark::DoNotOptimize(
        optimize_and_refine(g, w.sequence.odometry, GraphProblemConfig{}, StructuralConfig{}, w.sequence.markers));
  }
}
BENCHMARK(BM_OptimizeAndRefine)->Arg(25)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_Evaluate(benchmark::State& state) {
  const auto& w = mr03(0);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(w.graph, w.truth, MatchThresholds{}));
}
BENCHMARK(BM_Evaluate);

}  // namespace

BENCHMARK_MAIN();
