#include "structmap/pipeline.hpp"

#include "parallel.hpp"

#include <algorithm>
#include <stdexcept>

namespace structmap {

SceneGraph detect_sequence(const Sequence& seq, const DetectConfig& cfg, std::uint64_t seed) {
  if (seq.keyframes.empty()) throw std::invalid_argument("sequence '" + seq.id + "' has no keyframes");
  cfg.recognition.validate();
  cfg.association.validate();
  cfg.structural.validate();

  std::vector<KeyFrame> frames = seq.keyframes;
  std::sort(frames.begin(), frames.end(), [](const KeyFrame& a, const KeyFrame& b) { return a.id < b.id; });

  // Recognition is per-keyframe and seeded by keyframe id, so the thread count does not change the result.
  detail::parallel_for(frames.size(), cfg.threads, [&](std::size_t i) {
    recognize(frames[i], seq.classes, cfg.recognition,
              seed ^ (static_cast<std::uint64_t>(frames[i].id) * 0xD1B54A32D192ED03ULL));
  });

  AtlasStore store;
  store.write([&](SceneGraph& g) {
    g.sequence_id = seq.id;
    for (const std::string& w : seq.warnings) g.warnings.push_back(w);
  });
  double last_pass = frames.front().timestamp;
  bool dirty = false;
  for (const KeyFrame& kf : frames) {
    store.write([&](SceneGraph& g) { insert_keyframe(g, kf, cfg.association); });
    dirty = true;
    if (kf.timestamp - last_pass >= cfg.structural.run_period - 1e-9) {
      store.write([&](SceneGraph& g) { run_structural_pass(g, cfg.structural, seq.markers); });
      last_pass = kf.timestamp;
      dirty = false;
    }
  }
  if (dirty) store.write([&](SceneGraph& g) { run_structural_pass(g, cfg.structural, seq.markers); });
  return store.snapshot();
}

std::vector<double> RefineResult::cost_trace() const {
  std::vector<double> out;
  for (const auto& r : rounds) out.insert(out.end(), r.cost_trace.begin(), r.cost_trace.end());
  return out;
}

RefineResult optimize_and_refine(SceneGraph& g, const std::vector<OdometryMeasurement>& odometry,
                                 const GraphProblemConfig& optimizer, const StructuralConfig& structural,
                                 const MarkerDatabase& db, int max_rounds) {
  if (max_rounds < 1) throw std::invalid_argument("max_rounds must be at least 1");
  RefineResult result;
  result.rounds.push_back(optimize_graph(g, odometry, optimizer));
  while (static_cast<int>(result.rounds.size()) < max_rounds) {
    const auto before = g.edges();
    run_structural_pass(g, structural, db);
    if (g.edges() == before) break;
    result.rounds.push_back(optimize_graph(g, odometry, optimizer));
  }
  return result;
}

}  // namespace structmap
