#pragma once

#include "structmap/scene_graph.hpp"
#include "structmap/synthetic.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace structmap {

struct EntityMatching {
  /// (detected id, truth id), sorted by detected id.
  std::vector<std::pair<std::int64_t, std::int64_t>> matched;
  std::vector<std::int64_t> unmatched_detected;
  std::vector<std::int64_t> unmatched_truth;
  double distance_tol = 0.0;
  double angle_tol = 0.0;
};

/// Distance and normal angle of one candidate pair; angle is 0 for entities without a normal.
struct PairScore {
  double distance = 0.0;
  double angle = 0.0;
};

/// One-to-one matching over pairs within both tolerances. Pairs are taken greedily by (distance, detected id,
/// truth id); augmenting paths then raise the result to maximum cardinality, so removing candidate pairs never
/// increases the match count.
EntityMatching match_entities(const std::vector<std::int64_t>& detected, const std::vector<std::int64_t>& truth,
                              const std::function<PairScore(std::int64_t, std::int64_t)>& score, double distance_tol,
                              double angle_tol);

struct Metrics {
  double precision = 1.0;
  double recall = 1.0;
  int matched = 0;
  int detected = 0;
  int truth = 0;
};

/// matched/detected and matched/truth; 0/0 counts as 1.
Metrics precision_recall(int matched, int detected, int truth);
Metrics precision_recall(const EntityMatching& m);
/// Pools several entity kinds into one row.
Metrics pooled(const std::vector<Metrics>& parts);

struct MatchThresholds {
  double wall_distance = 0.5;                  // centroid to the true wall rectangle, meters
  double wall_angle = 15.0 * M_PI / 180.0;
  double ground_distance = 0.5;
  double ground_angle = 15.0 * M_PI / 180.0;
  double room_distance = 1.0;                  // horizontal centroid distance, meters
  double floor_distance = 1.5;

  void validate() const;
};

struct GraphMatching {
  EntityMatching walls, grounds, rooms, floors;
};

GraphMatching match_graph(const SceneGraph& g, const GroundTruth& truth, const MatchThresholds& thr);

/// Rigid alignment used before the ATE residuals.
enum class Alignment : std::uint8_t { Rigid, YawOnly };

/// Aligns `estimated` onto `truth` (closed-form least squares over translations) and returns the RMSE of the
/// translation residuals in centimeters. Throws std::invalid_argument on a length mismatch.
double ate_rmse(const std::vector<Vec3>& estimated, const std::vector<Vec3>& truth,
                Alignment alignment = Alignment::Rigid);
double ate_rmse(const std::vector<Pose>& estimated, const std::vector<Pose>& truth,
                Alignment alignment = Alignment::Rigid);
/// Keyframe positions of the graph paired with the ground-truth trajectory by keyframe id.
/// Throws std::invalid_argument when an id is missing on either side.
double graph_ate(const SceneGraph& g, const GroundTruth& truth, Alignment alignment = Alignment::Rigid);

struct EvaluationReport {
  std::string sequence_id;
  Metrics walls, grounds, rooms, floors;
  Metrics building;    // walls + grounds
  Metrics structural;  // rooms + floors
  std::optional<double> ate_before_cm;
  std::optional<double> ate_after_cm;
  int keyframes = 0;
};

/// `before`, when given, supplies the pre-optimization trajectory.
EvaluationReport evaluate(const SceneGraph& g, const GroundTruth& truth, const MatchThresholds& thr,
                          const SceneGraph* before = nullptr, Alignment alignment = Alignment::Rigid);

/// JSON with sorted keys.
std::string report_to_json(const EvaluationReport& r);
/// Plain-text table with "Detected / GT" columns.
std::string report_to_table(const EvaluationReport& r);
/// Bar chart of precision/recall per kind and ATE before/after.
std::string report_to_svg(const EvaluationReport& r);

}  // namespace structmap
