#pragma once

#include "structmap/optimizer.hpp"
#include "structmap/recognition.hpp"
#include "structmap/scene_graph.hpp"
#include "structmap/structural.hpp"
#include "structmap/synthetic.hpp"

#include <cstdint>

namespace structmap {

struct DetectConfig {
  RecognitionConfig recognition;
  AssociationConfig association;
  StructuralConfig structural;
  /// Recognition worker threads; 0 picks the hardware concurrency.
  int threads = 0;
};

/// Recognizes every keyframe, inserts them in id order, runs a structural pass whenever `run_period` of sequence
/// time has elapsed since the previous one, and a final pass after the last keyframe.
/// Throws std::invalid_argument on an empty sequence.
SceneGraph detect_sequence(const Sequence& seq, const DetectConfig& cfg, std::uint64_t seed);

struct RefineResult {
  /// One solve per round; the first is the plain optimization of the detected graph.
  std::vector<SolveResult> rounds;

  /// Cost traces of all rounds, concatenated.
  std::vector<double> cost_trace() const;
};

/// Optimizes the graph, then re-runs the structural pass on the corrected poses and optimizes again while the
/// room layout (graph edges) keeps changing, for at most `max_rounds` solves.
RefineResult optimize_and_refine(SceneGraph& g, const std::vector<OdometryMeasurement>& odometry,
                                 const GraphProblemConfig& optimizer, const StructuralConfig& structural,
                                 const MarkerDatabase& db, int max_rounds = 3);

}  // namespace structmap
