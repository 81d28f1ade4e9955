#pragma once

#include "structmap/geometry.hpp"
#include "structmap/recognition.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace structmap {

/// Opaque integer id, distinct per entity kind.
template <typename Tag>
struct Id {
  std::int64_t value = -1;

  constexpr Id() = default;
  constexpr explicit Id(std::int64_t v) : value(v) {}
  constexpr bool valid() const { return value >= 0; }
  auto operator<=>(const Id&) const = default;
};

using ComponentId = Id<struct ComponentTag>;
using RoomId = Id<struct RoomTag>;
using FloorId = Id<struct FloorTag>;
using KeyFrameId = Id<struct KeyFrameTag>;
using MarkerId = Id<struct MarkerTag>;

/// One keyframe's view of a component: the local plane and sparse local support points.
struct Observation {
  KeyFrameId keyframe;
  Plane local;
  std::vector<Vec3> support;
  /// Wall observations: the two support points (local frame) farthest apart along the horizontal wall
  /// direction, fixed when the observation is stored.
  std::optional<std::pair<Vec3, Vec3>> extent;
};

struct MapComponent {
  ComponentId id;
  Plane plane;  // fused global estimate
  std::vector<Observation> observations;
  std::vector<ComponentId> merged_from;
};

struct FreeSpaceCluster {
  std::vector<Vec3> cells;
  Vec3 centroid = Vec3::Zero();
};

struct Room {
  RoomId id;
  std::vector<ComponentId> walls;
  ComponentId ground;
  /// Keyframe whose ground observation satisfied the enclosure test; unset when the fused ground centroid did.
  std::optional<KeyFrameId> ground_observation;
  Vec3 centroid = Vec3::Zero();
  FreeSpaceCluster cluster;
  std::optional<std::string> label;
  std::optional<MarkerId> marker;
};

struct Floor {
  FloorId id;
  std::vector<RoomId> rooms;
  Vec3 centroid = Vec3::Zero();
  std::optional<ComponentId> plane;
};

struct MarkerSighting {
  KeyFrameId keyframe;
  Pose local;
  Mat6 information = Mat6::Identity();
};

struct Marker {
  MarkerId id;  // the fiducial tag id
  Pose pose;    // global
  std::vector<MarkerSighting> sightings;
  std::optional<RoomId> room;

  Vec3 center() const { return pose.translation; }
};

/// Keyframe as held by the map: pose estimate and timing. Raw clouds stay with the sequence on disk.
struct MapKeyFrame {
  KeyFrameId id;
  double timestamp = 0.0;
  Pose pose;
};

enum class EdgeKind : std::uint8_t { FloorRoom, RoomWall, RoomGround, RoomMarker, ComponentKeyFrame, MarkerKeyFrame };

std::string_view to_string(EdgeKind kind);
EdgeKind parse_edge_kind(std::string_view name);

struct Edge {
  EdgeKind kind;
  std::int64_t parent;
  std::int64_t child;
  auto operator<=>(const Edge&) const = default;
};

struct AssociationConfig {
  double max_centroid_distance = 1.0;                 // rho, meters
  double max_normal_angle = 10.0 * M_PI / 180.0;      // eta, radians
  /// When false, normals must agree in sign: the two faces of one partition stay separate components.
  bool sign_agnostic = false;
  /// Coplanarity: each centroid within this distance of the other plane. 0 disables the check.
  double max_plane_distance = 0.15;
  /// Grounds skip the centroid-distance test (a single floor level); coplanarity still applies.
  bool single_ground_level = true;
  /// Walls also link when the gap between their observed horizontal extents is <= rho (a door splits one wall
  /// into patches whose centroids are far apart).
  bool extent_linkage = true;

  void validate() const;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layered map: keyframes -> components -> rooms -> floor, plus markers.
class SceneGraph {
 public:
  std::map<KeyFrameId, MapKeyFrame> keyframes;
  std::map<ComponentId, MapComponent> components;
  std::map<RoomId, Room> rooms;
  std::optional<Floor> floor;
  std::map<MarkerId, Marker> markers;
  /// Merged-away component id -> id it was merged into.
  std::map<ComponentId, ComponentId> tombstones;
  std::vector<std::string> warnings;
  std::string sequence_id;

  ComponentId next_component_id() { return ComponentId(next_component_++); }
  RoomId next_room_id() { return RoomId(next_room_++); }
  std::int64_t component_counter() const { return next_component_; }
  std::int64_t room_counter() const { return next_room_; }
  void set_counters(std::int64_t component, std::int64_t room) {
    next_component_ = component;
    next_room_ = room;
  }

  /// Follows the tombstone chain to the surviving id.
  ComponentId resolve(ComponentId id) const;

  /// Observation plane expressed in the world frame with the keyframe's current pose.
  Plane observation_global(const Observation& obs) const;
  /// All support points of a component in the world frame.
  std::vector<Vec3> component_support_global(const MapComponent& c) const;

  /// Typed parent/child edges derived from the current contents, sorted.
  std::vector<Edge> edges() const;

  /// Throws GraphError describing the first broken reference or invariant.
  void check_integrity() const;

  bool operator==(const SceneGraph&) const;

 private:
  std::int64_t next_component_ = 0;
  std::int64_t next_room_ = 0;
};

/// Centroid distance <= rho and normal angle <= eta, same class only.
bool associate(const Plane& a, const Plane& b, double rho, double eta, bool sign_agnostic = false);
/// As above plus the coplanarity check; grounds on one level ignore the centroid distance.
bool associate(const Plane& a, const Plane& b, const AssociationConfig& cfg);

/// Fuses an observation into a component: inlier-weighted normal/offset/centroid, counts summed, sign aligned.
/// The observation's keyframe/support, when given, is appended to the component's observation list.
MapComponent merge_components(const MapComponent& target, const Plane& obs,
                              std::optional<Observation> observation = std::nullopt);

/// Merges each detected global plane into the nearest associating component (a component associates when its
/// fused plane or any of its observations does) or inserts a new component. Keeps the store association-saturated.
/// `detections` (local plane + support) must parallel `detected` when non-empty. Returns the touched ids.
std::vector<ComponentId> associate_or_insert(SceneGraph& g, KeyFrameId kf, const std::vector<Plane>& detected,
                                             const AssociationConfig& cfg,
                                             const std::vector<Detection>& detections = {});

/// Stores the keyframe, submits its components and records its marker sightings (a new marker's global pose comes
/// from its first sighting). Throws GraphError on a duplicate id.
KeyFrameId insert_keyframe(SceneGraph& g, const KeyFrame& kf, const AssociationConfig& cfg);

/// True when no two live components of one class associate (fused planes or observations).
bool is_association_saturated(const SceneGraph& g, const AssociationConfig& cfg);

/// Single-writer / multi-reader wrapper around a SceneGraph.
class AtlasStore {
 public:
  AtlasStore() = default;
  explicit AtlasStore(SceneGraph g) : graph_(std::move(g)) {}

  SceneGraph snapshot() const {
    std::shared_lock lock(mutex_);
    return graph_;
  }

  template <typename Fn>
  auto write(Fn&& fn) {
    std::unique_lock lock(mutex_);
    return std::invoke(std::forward<Fn>(fn), graph_);
  }

  template <typename Fn>
  auto read(Fn&& fn) const {
    std::shared_lock lock(mutex_);
    return std::invoke(std::forward<Fn>(fn), std::as_const(graph_));
  }

 private:
  mutable std::shared_mutex mutex_;
  SceneGraph graph_;
};

}  // namespace structmap
