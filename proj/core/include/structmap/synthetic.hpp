#pragma once

#include "structmap/optimizer.hpp"
#include "structmap/recognition.hpp"
#include "structmap/structural.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace structmap {

using Vec2 = Eigen::Vector2d;

struct RoomSpec {
  std::string name;
  /// Convex footprint, counter-clockwise after normalization.
  std::vector<Vec2> polygon;
  /// Indices of polygon edges (edge i runs from vertex i to i+1) that carry no wall.
  std::vector<int> open_edges;
};

/// Full-height opening between two points on shared wall edges.
struct DoorSpec {
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
};

struct MarkerSpec {
  int id = 0;
  std::string room;
  Vec3 position = Vec3::Zero();
  /// Heading of the marker face normal, radians about z.
  double yaw = 0.0;
  std::string label;
};

/// Axis-aligned clutter box rendered with the furniture label.
struct FurnitureSpec {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
};

struct Waypoint {
  Vec2 position = Vec2::Zero();
  /// Extra in-place rotation performed on arrival, radians (sign gives direction).
  double spin = 0.0;
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;
  double speed = 0.5;                    // m/s
  double yaw_rate = 45.0 * M_PI / 180.0; // rad/s for in-place turns
  double keyframe_interval = 0.5;        // s
  /// Keyframe cap; 0 renders the whole path.
  int max_keyframes = 0;
};

struct WorldSpec {
  std::string name;
  double wall_height = 2.5;
  std::vector<RoomSpec> rooms;
  std::vector<DoorSpec> doors;
  std::vector<MarkerSpec> markers;
  std::vector<FurnitureSpec> furniture;
  TrajectorySpec trajectory;
  std::uint64_t seed = 0;
};

/// Parses the JSON world description. Throws ParseError naming the offending path.
WorldSpec parse_world_spec(const std::string& json_text);
WorldSpec load_world_spec(const std::string& path);
std::string dump_world_spec(const WorldSpec& spec);

struct NoiseModel {
  /// Isotropic Gaussian point noise, norm truncated at 3 sigma.
  double point_sigma = 0.01;
  double label_flip_rate = 0.02;
  /// Confidences are uniform in [min, max], separately for kept and flipped labels.
  double confidence_min = 0.6;
  double confidence_max = 1.0;
  double flipped_confidence_min = 0.2;
  double flipped_confidence_max = 0.7;
  double odometry_sigma_rot = 0.2 * M_PI / 180.0;  // per step, each axis
  double odometry_sigma_trans = 0.005;             // per step, each axis
  double marker_sigma_rot = 0.5 * M_PI / 180.0;
  double marker_sigma_trans = 0.01;

  static NoiseModel noiseless();
  /// Throws std::invalid_argument on negative values, probabilities above 1 or inverted ranges.
  void validate() const;
};

struct CameraModel {
  double height = 1.2;
  double pitch = 15.0 * M_PI / 180.0;  // downward
  double hfov = 87.0 * M_PI / 180.0;
  double vfov = 58.0 * M_PI / 180.0;
  double min_range = 0.3;
  double max_range = 6.0;
  double density = 500.0;  // samples per square meter of surface

  void validate() const;
};

struct TruthWall {
  std::int64_t id = 0;
  std::string room;
  Vec2 a = Vec2::Zero();
  Vec2 b = Vec2::Zero();
  double height = 0.0;
  /// Normal points out of the room, away from the free space the wall faces.
  Plane plane;
  /// Door openings as [s0, s1] arc-length intervals from `a`.
  std::vector<std::pair<double, double>> gaps;

  double length() const { return (b - a).norm(); }
  Vec3 center() const;
  /// Euclidean distance from `p` to the wall rectangle.
  double distance(const Vec3& p) const;
};

struct TruthGround {
  std::int64_t id = 0;
  Plane plane;
  std::vector<std::vector<Vec2>> footprints;

  double distance(const Vec3& p) const;
};

struct TruthRoom {
  std::int64_t id = 0;
  std::string name;
  std::vector<std::int64_t> walls;
  /// Mean of the wall centers, i.e. the centroid the room detector reconstructs.
  Vec3 centroid = Vec3::Zero();
  std::vector<Vec2> polygon;
};

struct TruthFloor {
  std::int64_t id = 0;
  Vec3 centroid = Vec3::Zero();
};

struct TruthMarker {
  int id = 0;
  Pose pose;
  std::string room;
  std::string label;
};

struct EntityCounts {
  int walls = 0;
  int grounds = 0;
  int rooms = 0;
  int floors = 0;
  bool operator==(const EntityCounts&) const = default;
};

struct TruthPose {
  std::int64_t keyframe = 0;
  double timestamp = 0.0;
  Pose pose;
};

struct GroundTruth {
  std::string world;
  /// Set by render_keyframes; empty for a bare world.
  std::string sequence_id;
  std::vector<TruthWall> walls;
  std::vector<TruthGround> grounds;
  std::vector<TruthRoom> rooms;
  std::vector<TruthFloor> floors;
  std::vector<TruthMarker> markers;
  std::vector<TruthPose> trajectory;

  EntityCounts counts() const;
  MarkerDatabase marker_database() const;
};

/// Validates the world spec (convexity, overlap, door placement, marker rooms) and builds the true geometry.
/// Throws std::invalid_argument with a descriptive message on an invalid spec.
GroundTruth generate_world(const WorldSpec& spec);

/// Counts implied by the world spec alone: one wall per closed room edge, one ground, one room per polygon, one floor.
EntityCounts expected_counts(const WorldSpec& spec);

/// Camera poses along the waypoint path at every keyframe interval (constant speed, in-place turns).
std::vector<TruthPose> sample_trajectory(const WorldSpec& spec, const CameraModel& camera);

struct Sequence {
  std::string id;
  ClassTable classes;
  /// Poses hold the odometry-integrated estimate; clouds and marker sightings are local.
  std::vector<KeyFrame> keyframes;
  std::vector<OdometryMeasurement> odometry;
  MarkerDatabase markers;
  std::vector<std::string> warnings;
};

struct RenderConfig {
  NoiseModel noise;
  CameraModel camera;
  std::uint64_t seed = 0;
  /// Render worker threads; 0 picks the hardware concurrency. Output does not depend on it.
  int threads = 0;
};

/// Renders the trajectory through the world. Poses outside every room are skipped with a warning.
/// `truth.trajectory` receives the true pose of every emitted keyframe.
Sequence render_keyframes(const WorldSpec& spec, GroundTruth& truth, const RenderConfig& cfg);

/// Renders a single keyframe at `pose` (noise applied, no odometry). Exposed for tests.
KeyFrame render_view(const GroundTruth& truth, const WorldSpec& spec, const Pose& pose, const RenderConfig& cfg,
                     std::uint64_t stream);

/// Composes the odometry chain from `start`.
std::vector<Pose> integrate_odometry(const Pose& start, const std::vector<OdometryMeasurement>& odometry);

}  // namespace structmap
