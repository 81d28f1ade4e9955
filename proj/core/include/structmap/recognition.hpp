#pragma once

#include "structmap/geometry.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace structmap {

/// One point of a segmented RGB-D frame, already lifted to 3D.
struct LabeledPoint {
  Vec3 position = Vec3::Zero();
  std::uint8_t label = 0;
  float confidence = 1.0F;
};

struct LabeledCloud {
  std::vector<LabeledPoint> points;
  std::string frame_id;
};

/// Maps per-point label ids to class names. Names "wall" and "ground" are the building classes.
class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::map<std::uint8_t, std::string> names);

  /// Table used by the simulator: 1 wall, 2 ground, 3 furniture.
  static ClassTable standard();

  const std::map<std::uint8_t, std::string>& names() const { return names_; }
  std::optional<SemanticClass> building_class(std::uint8_t label) const;
  std::optional<std::uint8_t> label_of(std::string_view name) const;

  bool operator==(const ClassTable&) const = default;

 private:
  std::map<std::uint8_t, std::string> names_;
};

/// Fiducial marker seen from a keyframe: pose of the marker in the keyframe's local frame.
struct MarkerObservation {
  int tag_id = 0;
  Pose local;
  Mat6 information = Mat6::Identity();
};

/// Component detected in one keyframe: local-frame plane plus sparse support points (local frame).
struct Detection {
  Plane local;
  std::vector<Vec3> support;
};

struct KeyFrame {
  std::int64_t id = 0;
  double timestamp = 0.0;
  Pose pose;  // world <- local, current estimate
  LabeledCloud cloud;
  std::vector<Plane> components;  // global frame, filled by recognize()
  std::vector<Detection> detections;
  std::vector<MarkerObservation> markers;
};

struct RecognitionConfig {
  double min_confidence = 0.5;
  double voxel_leaf = 0.05;
  double depth_min = 0.3;
  double depth_max = 5.0;
  double ransac_inlier_tol = 0.02;
  int ransac_iterations = 400;
  int min_inliers = 100;
  int max_planes_per_class = 8;
  /// Voxel size for the connectivity check on RANSAC inliers; only the largest connected patch is kept.
  /// 0 disables it.
  double cluster_tolerance = 0.15;
  double verticality_tol = 10.0 * M_PI / 180.0;
  double horizontality_tol = 10.0 * M_PI / 180.0;
  /// Leaf size of the sparse support kept per detection (footprints, exports).
  double support_leaf = 0.1;

  /// Throws std::invalid_argument when a field is non-positive or the depth band is empty.
  void validate() const;
};

/// Result of one RANSAC extraction: the refined plane and indices into the input list.
struct PlaneFit {
  Plane plane;
  std::vector<std::size_t> inliers;
};

/// Splits a cloud into per-class point lists; only wall/ground labels with confidence >= min_confidence survive.
/// Classes without surviving points are absent from the map.
std::map<SemanticClass, std::vector<Vec3>> semantic_filter(const LabeledCloud& cloud, const ClassTable& classes,
                                                           double min_confidence);

/// Replaces the points of every occupied voxel by their centroid. Output ordered by voxel key.
std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double leaf);

/// Keeps points with depth_min <= |p| <= depth_max (camera at the local origin).
std::vector<Vec3> range_filter(const std::vector<Vec3>& points, double depth_min, double depth_max);

/// Least-squares plane through `points` (centroid + smallest-eigenvalue eigenvector). Requires >= 3 points.
Plane fit_plane_least_squares(const std::vector<Vec3>& points);

/// Sequential multi-plane RANSAC with least-squares refinement, largest-connected-patch selection and inlier
/// removal.
/// Deterministic for a given seed. Fewer than 3 points, or no non-degenerate sample, yields an empty result.
std::vector<PlaneFit> fit_planes_ransac(const std::vector<Vec3>& points, const RecognitionConfig& cfg,
                                        std::uint64_t rng_seed);

/// Keeps vertical walls and horizontal grounds relative to `up` (expressed in the planes' frame).
/// Ground normals are flipped to point along `up` before the test.
std::vector<Plane> validate_components(const std::vector<Plane>& planes, const RecognitionConfig& cfg,
                                       const Vec3& up = world_up());

/// Full per-keyframe pipeline. Stores detections and global planes on `kf` and returns the global planes.
/// Wall normals are oriented away from the camera, ground normals toward the world up direction.
std::vector<Plane> recognize(KeyFrame& kf, const ClassTable& classes, const RecognitionConfig& cfg,
                             std::uint64_t rng_seed);

}  // namespace structmap
