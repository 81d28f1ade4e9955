#include "structmap/scene_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace structmap {

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::FloorRoom:
      return "floor-room";
    case EdgeKind::RoomWall:
      return "room-wall";
    case EdgeKind::RoomGround:
      return "room-ground";
    case EdgeKind::RoomMarker:
      return "room-marker";
    case EdgeKind::ComponentKeyFrame:
      return "component-keyframe";
    case EdgeKind::MarkerKeyFrame:
      return "marker-keyframe";
  }
  return "unknown";
}

EdgeKind parse_edge_kind(std::string_view name) {
  for (const auto k : {EdgeKind::FloorRoom, EdgeKind::RoomWall, EdgeKind::RoomGround, EdgeKind::RoomMarker,
                       EdgeKind::ComponentKeyFrame, EdgeKind::MarkerKeyFrame})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown edge kind '" + std::string(name) + "'");
}

void AssociationConfig::validate() const {
  if (!(max_centroid_distance > 0.0)) throw std::invalid_argument("association.max_centroid_distance must be positive");
  if (!(max_normal_angle > 0.0)) throw std::invalid_argument("association.max_normal_angle must be positive");
  if (!(max_plane_distance >= 0.0)) throw std::invalid_argument("association.max_plane_distance must be >= 0");
}

ComponentId SceneGraph::resolve(ComponentId id) const {
  for (int guard = 0; guard < 1'000'000; ++guard) {
    const auto it = tombstones.find(id);
    if (it == tombstones.end()) return id;
    id = it->second;
  }
  throw GraphError("tombstone cycle");
}

Plane SceneGraph::observation_global(const Observation& obs) const {
  const auto it = keyframes.find(obs.keyframe);
  if (it == keyframes.end())
    throw GraphError("observation references unknown keyframe " + std::to_string(obs.keyframe.value));
  return transform_plane(it->second.pose, obs.local);
}

std::vector<Vec3> SceneGraph::component_support_global(const MapComponent& c) const {
  std::vector<Vec3> out;
  for (const auto& obs : c.observations) {
    const auto it = keyframes.find(obs.keyframe);
    if (it == keyframes.end()) continue;
    for (const auto& p : obs.support) out.push_back(it->second.pose * p);
  }
  return out;
}

std::vector<Edge> SceneGraph::edges() const {
  std::vector<Edge> out;
  if (floor)
    for (const auto r : floor->rooms) out.push_back({EdgeKind::FloorRoom, floor->id.value, r.value});
  for (const auto& [rid, room] : rooms) {
    for (const auto w : room.walls) out.push_back({EdgeKind::RoomWall, rid.value, w.value});
    if (room.ground.valid()) out.push_back({EdgeKind::RoomGround, rid.value, room.ground.value});
    if (room.marker) out.push_back({EdgeKind::RoomMarker, rid.value, room.marker->value});
  }
  for (const auto& [cid, comp] : components) {
    std::set<std::int64_t> seen;
    for (const auto& obs : comp.observations)
      if (seen.insert(obs.keyframe.value).second)
        out.push_back({EdgeKind::ComponentKeyFrame, cid.value, obs.keyframe.value});
  }
  for (const auto& [mid, marker] : markers) {
    std::set<std::int64_t> seen;
    for (const auto& s : marker.sightings)
      if (seen.insert(s.keyframe.value).second) out.push_back({EdgeKind::MarkerKeyFrame, mid.value, s.keyframe.value});
  }
  std::sort(out.begin(), out.end());
  return out;
}

void SceneGraph::check_integrity() const {
  const auto component_of = [&](ComponentId id, SemanticClass cls, const std::string& where) {
    const auto it = components.find(id);
    if (it == components.end())
      throw GraphError(where + ": unknown component id " + std::to_string(id.value));
    if (it->second.plane.cls != cls)
      throw GraphError(where + ": component " + std::to_string(id.value) + " is not a " + std::string(to_string(cls)));
  };
  for (const auto& [cid, comp] : components) {
    if (comp.id != cid) throw GraphError("/components: id mismatch for " + std::to_string(cid.value));
    for (const auto& obs : comp.observations)
      if (!keyframes.contains(obs.keyframe))
        throw GraphError("/components/" + std::to_string(cid.value) + ": unknown keyframe " +
                         std::to_string(obs.keyframe.value));
  }
  for (const auto& [rid, room] : rooms) {
    const std::string where = "/rooms/" + std::to_string(rid.value);
    if (room.walls.size() < 2) throw GraphError(where + ": a room needs at least two walls");
    for (const auto w : room.walls) component_of(w, SemanticClass::Wall, where + "/walls");
    if (room.ground.valid()) component_of(room.ground, SemanticClass::Ground, where + "/ground");
    if (room.marker && !markers.contains(*room.marker))
      throw GraphError(where + "/marker: unknown marker " + std::to_string(room.marker->value));
  }
  if (floor) {
    if (floor->rooms.empty()) throw GraphError("/floor: a floor needs at least one room");
    for (const auto r : floor->rooms)
      if (!rooms.contains(r)) throw GraphError("/floor/rooms: unknown room id " + std::to_string(r.value));
    if (floor->plane) component_of(*floor->plane, SemanticClass::Ground, "/floor/plane");
  }
  for (const auto& [mid, marker] : markers) {
    const std::string where = "/markers/" + std::to_string(mid.value);
    if (marker.room && !rooms.contains(*marker.room))
      throw GraphError(where + "/room: unknown room id " + std::to_string(marker.room->value));
    for (const auto& s : marker.sightings)
      if (!keyframes.contains(s.keyframe))
        throw GraphError(where + "/sightings: unknown keyframe " + std::to_string(s.keyframe.value));
  }
  for (const auto& [from, to] : tombstones)
    if (components.contains(from)) throw GraphError("/tombstones: live component " + std::to_string(from.value));
}

namespace {

bool same(const Pose& a, const Pose& b) { return a.rotation == b.rotation && a.translation == b.translation; }

bool same(const Plane& a, const Plane& b) {
  return a.normal == b.normal && a.offset == b.offset && a.cls == b.cls && a.centroid == b.centroid &&
         a.inlier_count == b.inlier_count;
}

bool same(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

bool SceneGraph::operator==(const SceneGraph& o) const {
  if (sequence_id != o.sequence_id || tombstones != o.tombstones || warnings != o.warnings) return false;
  if (next_component_ != o.next_component_ || next_room_ != o.next_room_) return false;
  if (keyframes.size() != o.keyframes.size() || components.size() != o.components.size() ||
      rooms.size() != o.rooms.size() || markers.size() != o.markers.size() || floor.has_value() != o.floor.has_value())
    return false;
  for (const auto& [id, kf] : keyframes) {
    const auto it = o.keyframes.find(id);
    if (it == o.keyframes.end() || it->second.timestamp != kf.timestamp || !same(it->second.pose, kf.pose)) return false;
  }
  for (const auto& [id, c] : components) {
    const auto it = o.components.find(id);
    if (it == o.components.end()) return false;
    const auto& d = it->second;
    if (!same(c.plane, d.plane) || c.merged_from != d.merged_from || c.observations.size() != d.observations.size())
      return false;
    for (std::size_t i = 0; i < c.observations.size(); ++i) {
      const auto& x = c.observations[i];
      const auto& y = d.observations[i];
      if (x.keyframe != y.keyframe || !same(x.local, y.local) || !same(x.support, y.support) || x.extent != y.extent)
        return false;
    }
  }
  for (const auto& [id, r] : rooms) {
    const auto it = o.rooms.find(id);
    if (it == o.rooms.end()) return false;
    const auto& s = it->second;
    if (r.walls != s.walls || r.ground != s.ground || r.ground_observation != s.ground_observation ||
        r.centroid != s.centroid || r.label != s.label || r.marker != s.marker ||
        r.cluster.centroid != s.cluster.centroid || !same(r.cluster.cells, s.cluster.cells))
      return false;
  }
  if (floor) {
    if (floor->id != o.floor->id || floor->rooms != o.floor->rooms || floor->centroid != o.floor->centroid ||
        floor->plane != o.floor->plane)
      return false;
  }
  for (const auto& [id, m] : markers) {
    const auto it = o.markers.find(id);
    if (it == o.markers.end()) return false;
    const auto& n = it->second;
    if (!same(m.pose, n.pose) || m.room != n.room || m.sightings.size() != n.sightings.size()) return false;
    for (std::size_t i = 0; i < m.sightings.size(); ++i)
      if (m.sightings[i].keyframe != n.sightings[i].keyframe || !same(m.sightings[i].local, n.sightings[i].local) ||
          m.sightings[i].information != n.sightings[i].information)
        return false;
  }
  return true;
}

bool associate(const Plane& a, const Plane& b, double rho, double eta, bool sign_agnostic) {
  if (a.cls != b.cls) return false;
  if ((a.centroid - b.centroid).norm() > rho) return false;
  double angle = angle_between(a.normal, b.normal);
  if (sign_agnostic) angle = std::min(angle, M_PI - angle);
  return angle <= eta;
}

bool associate(const Plane& a, const Plane& b, const AssociationConfig& cfg) {
  const bool level = cfg.single_ground_level && a.cls == SemanticClass::Ground && b.cls == SemanticClass::Ground;
  if (level) {
    if (a.cls != b.cls) return false;
    double angle = angle_between(a.normal, b.normal);
    if (cfg.sign_agnostic) angle = std::min(angle, M_PI - angle);
    if (angle > cfg.max_normal_angle) return false;
  } else if (!associate(a, b, cfg.max_centroid_distance, cfg.max_normal_angle, cfg.sign_agnostic)) {
    return false;
  }
  if (cfg.max_plane_distance <= 0.0) return true;
  return std::max(std::abs(a.signed_distance(b.centroid)), std::abs(b.signed_distance(a.centroid))) <=
         cfg.max_plane_distance;
}

MapComponent merge_components(const MapComponent& target, const Plane& obs, std::optional<Observation> observation) {
  MapComponent out = target;
  Plane incoming = obs;
  if (incoming.normal.dot(target.plane.normal) < 0.0) incoming = incoming.flipped();

  double w1 = static_cast<double>(target.plane.inlier_count);
  double w2 = static_cast<double>(incoming.inlier_count);
  if (w1 + w2 <= 0.0) w1 = w2 = 1.0;
  const double sum = w1 + w2;

  Plane& fused = out.plane;
  fused.normal = (w1 * target.plane.normal + w2 * incoming.normal).normalized();
  fused.offset = (w1 * target.plane.offset + w2 * incoming.offset) / sum;
  fused.centroid = (w1 * target.plane.centroid + w2 * incoming.centroid) / sum;
  fused.inlier_count = target.plane.inlier_count + incoming.inlier_count;
  if (observation) out.observations.push_back(std::move(*observation));
  return out;
}

namespace {

struct Linkage {
  bool linked = false;
  double distance = std::numeric_limits<double>::infinity();
};

// A plane plus, for wall observations, its horizontal extent in the world frame.
struct Member {
  Plane plane;
  std::optional<std::pair<Eigen::Vector2d, Eigen::Vector2d>> extent;
};

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

double point_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d d = b - a;
  const double len2 = d.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (p - a - s * d).norm();
}

double segment_gap(const std::pair<Eigen::Vector2d, Eigen::Vector2d>& x,
                   const std::pair<Eigen::Vector2d, Eigen::Vector2d>& y) {
  const auto& [a, b] = x;
  const auto& [c, d] = y;
  const double d1 = cross2(b - a, c - a), d2 = cross2(b - a, d - a);
  const double d3 = cross2(d - c, a - c), d4 = cross2(d - c, b - c);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return 0.0;
  return std::min({point_segment(a, c, d), point_segment(b, c, d), point_segment(c, a, b), point_segment(d, a, b)});
}

std::optional<std::pair<Vec3, Vec3>> wall_extent(const Plane& global, const Pose& world_from_kf,
                                                 const std::vector<Vec3>& support) {
  if (global.cls != SemanticClass::Wall || support.empty()) return std::nullopt;
  const Vec3 t = world_up().cross(global.normal);
  if (t.norm() < 1e-6) return std::nullopt;
  std::size_t lo = 0, hi = 0;
  double vlo = std::numeric_limits<double>::infinity(), vhi = -vlo;
  for (std::size_t i = 0; i < support.size(); ++i) {
    const double v = t.dot(world_from_kf * support[i]);
    if (v < vlo) {
      vlo = v;
      lo = i;
    }
    if (v > vhi) {
      vhi = v;
      hi = i;
    }
  }
  return std::make_pair(support[lo], support[hi]);
}

Member observation_member(const SceneGraph& g, const Observation& obs) {
  Member m{g.observation_global(obs), std::nullopt};
  if (obs.extent) {
    const Pose& pose = g.keyframes.at(obs.keyframe).pose;
    m.extent = std::make_pair((pose * obs.extent->first).head<2>().eval(), (pose * obs.extent->second).head<2>().eval());
  }
  return m;
}

std::vector<Member> members_of(const SceneGraph& g, const MapComponent& c) {
  std::vector<Member> out{{c.plane, std::nullopt}};
  for (const auto& obs : c.observations) out.push_back(observation_member(g, obs));
  return out;
}

bool coplanar_same_facing(const Plane& a, const Plane& b, const AssociationConfig& cfg) {
  if (a.cls != b.cls) return false;
  double angle = angle_between(a.normal, b.normal);
  if (cfg.sign_agnostic) angle = std::min(angle, M_PI - angle);
  if (angle > cfg.max_normal_angle) return false;
  return cfg.max_plane_distance <= 0.0 ||
         std::max(std::abs(a.signed_distance(b.centroid)), std::abs(b.signed_distance(a.centroid))) <=
             cfg.max_plane_distance;
}

Linkage link(const std::vector<Member>& members, const Member& p, const AssociationConfig& cfg) {
  Linkage l;
  for (const auto& m : members) {
    if (associate(m.plane, p.plane, cfg)) {
      l.linked = true;
      l.distance = std::min(l.distance, (m.plane.centroid - p.plane.centroid).norm());
    }
    if (cfg.extent_linkage && m.extent && p.extent && coplanar_same_facing(m.plane, p.plane, cfg)) {
      const double gap = segment_gap(*m.extent, *p.extent);
      if (gap <= cfg.max_centroid_distance) {
        l.linked = true;
        l.distance = std::min(l.distance, gap);
      }
    }
  }
  return l;
}

bool components_linked(const std::vector<Member>& a, const std::vector<Member>& b, const AssociationConfig& cfg) {
  for (const auto& p : b)
    if (link(a, p, cfg).linked) return true;
  return false;
}

void absorb(SceneGraph& g, ComponentId survivor, ComponentId absorbed) {
  auto& keep = g.components.at(survivor);
  auto node = g.components.extract(absorbed);
  auto& gone = node.mapped();
  keep = merge_components(keep, gone.plane);
  for (auto& obs : gone.observations) keep.observations.push_back(std::move(obs));
  keep.merged_from.push_back(absorbed);
  for (const auto id : gone.merged_from) keep.merged_from.push_back(id);
  g.tombstones[absorbed] = survivor;

  for (auto& [rid, room] : g.rooms) {
    for (auto& w : room.walls) w = g.resolve(w);
    std::vector<ComponentId> unique;
    for (const auto w : room.walls)
      if (std::find(unique.begin(), unique.end(), w) == unique.end()) unique.push_back(w);
    room.walls = std::move(unique);
    if (room.ground.valid()) room.ground = g.resolve(room.ground);
  }
  if (g.floor && g.floor->plane) g.floor->plane = g.resolve(*g.floor->plane);
}

void saturate(SceneGraph& g, ComponentId id, const AssociationConfig& cfg) {
  for (bool changed = true; changed;) {
    changed = false;
    const auto& self = g.components.at(id);
    const auto mine = members_of(g, self);
    for (const auto& [other_id, other] : g.components) {
      if (other_id == id || other.plane.cls != self.plane.cls) continue;
      if (!components_linked(mine, members_of(g, other), cfg)) continue;
      absorb(g, id, other_id);
      changed = true;
      break;
    }
  }
}

}  // namespace

std::vector<ComponentId> associate_or_insert(SceneGraph& g, KeyFrameId kf, const std::vector<Plane>& detected,
                                             const AssociationConfig& cfg, const std::vector<Detection>& detections) {
  cfg.validate();
  const auto kf_it = g.keyframes.find(kf);
  if (kf_it == g.keyframes.end()) throw GraphError("associate_or_insert: unknown keyframe " + std::to_string(kf.value));
  if (!detections.empty() && detections.size() != detected.size())
    throw std::invalid_argument("associate_or_insert: detections must parallel detected planes");
  const Pose world_from_kf = kf_it->second.pose;

  std::vector<ComponentId> touched;
  for (std::size_t i = 0; i < detected.size(); ++i) {
    const Plane& plane = detected[i];
    Observation obs;
    obs.keyframe = kf;
    if (!detections.empty()) {
      obs.local = detections[i].local;
      obs.support = detections[i].support;
      obs.extent = wall_extent(plane, world_from_kf, obs.support);
    } else {
      obs.local = transform_plane(world_from_kf.inverse(), plane);
    }
    const Member incoming = observation_member(g, obs);

    ComponentId best;
    double best_distance = std::numeric_limits<double>::infinity();
    for (const auto& [cid, comp] : g.components) {
      if (comp.plane.cls != plane.cls) continue;
      const auto l = link(members_of(g, comp), incoming, cfg);
      if (l.linked && l.distance < best_distance) {
        best_distance = l.distance;
        best = cid;
      }
    }

    ComponentId id;
    if (best.valid()) {
      auto& comp = g.components.at(best);
      comp = merge_components(comp, plane, std::move(obs));
      id = best;
    } else {
      id = g.next_component_id();
      MapComponent comp;
      comp.id = id;
      comp.plane = plane;
      comp.observations.push_back(std::move(obs));
      g.components.emplace(id, std::move(comp));
    }
    saturate(g, id, cfg);
    touched.push_back(g.resolve(id));
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  return touched;
}

KeyFrameId insert_keyframe(SceneGraph& g, const KeyFrame& kf, const AssociationConfig& cfg) {
  const KeyFrameId id(kf.id);
  if (g.keyframes.contains(id)) throw GraphError("insert_keyframe: duplicate keyframe id " + std::to_string(kf.id));
  g.keyframes.emplace(id, MapKeyFrame{id, kf.timestamp, kf.pose});
  if (!kf.components.empty()) associate_or_insert(g, id, kf.components, cfg, kf.detections);
  for (const auto& m : kf.markers) {
    const MarkerId mid(m.tag_id);
    auto [it, created] = g.markers.try_emplace(mid);
    if (created) {
      it->second.id = mid;
      it->second.pose = compose(m.local, kf.pose);
    }
    it->second.sightings.push_back({id, m.local, m.information});
  }
  return id;
}

bool is_association_saturated(const SceneGraph& g, const AssociationConfig& cfg) {
  std::vector<std::pair<SemanticClass, std::vector<Member>>> all;
  for (const auto& [cid, comp] : g.components) all.emplace_back(comp.plane.cls, members_of(g, comp));
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (all[i].first == all[j].first && components_linked(all[i].second, all[j].second, cfg)) return false;
  return true;
}

}  // namespace structmap
