#pragma once

#include "structmap/scene_graph.hpp"

#include <map>
#include <string>
#include <vector>

namespace structmap {

struct StructuralConfig {
  double grid_resolution = 0.1;                      // meters
  double wall_clearance = 0.5;                       // omega, meters
  double ground_angle_tol = 10.0 * M_PI / 180.0;     // theta, radians
  int min_cluster_cells = 40;
  double marker_proximity = 3.0;                     // epsilon_s, meters
  double run_period = 2.0;                           // seconds of sequence time
  /// Slack beyond a wall's observed extent when checking that it borders a cluster.
  double wall_extent_margin = 0.1;

  void validate() const;
};

/// Marker tag id -> semantic label, e.g. {"5": "corridor-A"}.
using MarkerDatabase = std::map<int, std::string>;

/// Horizontal footprint of a wall component: its plane plus the observed extent along the wall.
struct WallSegment {
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  /// False when the component has no support points; the wall is then treated as an infinite plane.
  bool bounded = false;
};

WallSegment wall_segment(const SceneGraph& g, const MapComponent& wall);

/// Occupancy-grid stand-in for the free-space clusters: per-observation ground footprints (convex hull of the
/// support plus the camera position) minus wall clearance, 4-connected.
std::vector<FreeSpaceCluster> cluster_free_space(const SceneGraph& g, const StructuralConfig& cfg);

/// Proximity: some cluster cell lies within omega of the wall plane (closed bound).
bool wall_proximity_ok(const Plane& wall, const FreeSpaceCluster& c, double omega);
bool wall_proximity_ok(const MapComponent& wall, const FreeSpaceCluster& c, double omega);

/// Directionality: n_wall . (cluster centroid - wall centroid) < 0, strict.
bool wall_directionality_ok(const Plane& wall, const FreeSpaceCluster& c);
bool wall_directionality_ok(const MapComponent& wall, const FreeSpaceCluster& c);

/// Some cell near the wall plane also falls within the wall's observed extent (plus margin).
bool wall_borders_cluster(const SceneGraph& g, const MapComponent& wall, const FreeSpaceCluster& c,
                          const StructuralConfig& cfg);

/// Ground orthogonality to every wall (|n_g . n_w| <= sin(theta)) and enclosure of the ground centroid:
/// along each wall normal, the centroid's projection lies within the span of the walls' centroid projections.
bool ground_association_ok(const Plane& ground, const std::vector<Plane>& walls, double theta);
bool ground_association_ok(const MapComponent& ground, const std::vector<MapComponent>& walls, double theta);

/// Marker containment: within epsilon_s of the room centroid and on the inner side of every bounding wall.
bool marker_in_room(const Vec3& marker_center, const Room& room, const SceneGraph& g, double epsilon_s);

/// Detects rooms from the current clusters and replaces g.rooms; rooms matching a previous cluster keep their id.
std::vector<Room> detect_rooms(SceneGraph& g, const StructuralConfig& cfg);
std::vector<Room> detect_rooms(SceneGraph& g, const std::vector<FreeSpaceCluster>& clusters,
                               const StructuralConfig& cfg);

/// Single floor over all rooms with the mean room centroid. Clears the floor when there are no rooms.
std::optional<Floor> detect_floor(SceneGraph& g);

/// Binds each marker to at most one enclosing room and copies the database label onto it.
void associate_markers(SceneGraph& g, const MarkerDatabase& db, double epsilon_s);

/// cluster -> rooms -> floor -> markers. Idempotent on an unchanged map.
void run_structural_pass(SceneGraph& g, const StructuralConfig& cfg, const MarkerDatabase& db);

/// Re-evaluates proximity, directionality and ground association on a stored room.
struct RoomCheck {
  bool enough_walls = false;
  bool proximity = false;
  bool directionality = false;
  bool ground = false;
  bool ok() const { return enough_walls && proximity && directionality && ground; }
};
RoomCheck verify_room(const SceneGraph& g, const Room& room, const StructuralConfig& cfg);

}  // namespace structmap
