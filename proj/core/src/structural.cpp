#include "structmap/structural.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <set>
#include <stdexcept>

namespace structmap {

void StructuralConfig::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("structural.") + name + " must be positive");
  };
  positive(grid_resolution, "grid_resolution");
  positive(wall_clearance, "wall_clearance");
  positive(ground_angle_tol, "ground_angle_tol");
  positive(min_cluster_cells, "min_cluster_cells");
  positive(marker_proximity, "marker_proximity");
  positive(run_period, "run_period");
  if (wall_extent_margin < 0.0) throw std::invalid_argument("structural.wall_extent_margin must be nonnegative");
}

namespace {

using Vec2 = Eigen::Vector2d;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain; counter-clockwise, no collinear points.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_convex(const std::vector<Vec2>& hull, const Vec2& p) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i)
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0.0) return false;
  return true;
}

double segment_distance(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

Vec3 horizontal_tangent(const Vec3& n) {
  Vec3 t = world_up().cross(n);
  if (t.norm() < 1e-9) return Vec3::UnitX();
  return t.normalized();
}

struct Extent {
  double lo = 0.0;
  double hi = 0.0;
  bool bounded = false;
};

Extent lateral_extent(const SceneGraph& g, const MapComponent& wall) {
  Extent e;
  const auto support = g.component_support_global(wall);
  if (support.empty()) return e;
  const Vec3 t = horizontal_tangent(wall.plane.normal);
  const Vec3 c = wall.plane.project(wall.plane.centroid);
  e.lo = std::numeric_limits<double>::infinity();
  e.hi = -std::numeric_limits<double>::infinity();
  for (const auto& p : support) {
    const double s = t.dot(wall.plane.project(p) - c);
    e.lo = std::min(e.lo, s);
    e.hi = std::max(e.hi, s);
  }
  e.bounded = true;
  return e;
}

struct Grid {
  double res = 0.1;
  std::int64_t ix0 = 0, iy0 = 0;
  std::int64_t nx = 0, ny = 0;

  Vec2 center(std::int64_t i, std::int64_t j) const {
    return {(static_cast<double>(ix0 + i) + 0.5) * res, (static_cast<double>(iy0 + j) + 0.5) * res};
  }
  std::int64_t cell_x(double x) const { return static_cast<std::int64_t>(std::floor(x / res)) - ix0; }
  std::int64_t cell_y(double y) const { return static_cast<std::int64_t>(std::floor(y / res)) - iy0; }
  std::size_t index(std::int64_t i, std::int64_t j) const { return static_cast<std::size_t>(j * nx + i); }
};

double ground_height(const Plane& ground, const Vec2& xy) {
  const Vec3& n = ground.normal;
  if (std::abs(n.z()) < 1e-9) return ground.centroid.z();
  return -(n.x() * xy.x() + n.y() * xy.y() + ground.offset) / n.z();
}

std::vector<const MapComponent*> live_of_class(const SceneGraph& g, SemanticClass cls) {
  std::vector<const MapComponent*> out;
  for (const auto& [id, c] : g.components)
    if (c.plane.cls == cls) out.push_back(&c);
  return out;
}

}  // namespace

WallSegment wall_segment(const SceneGraph& g, const MapComponent& wall) {
  WallSegment seg;
  const Extent e = lateral_extent(g, wall);
  if (!e.bounded) return seg;
  const Vec3 t = horizontal_tangent(wall.plane.normal);
  const Vec3 c = wall.plane.project(wall.plane.centroid);
  seg.a = (c + e.lo * t).head<2>();
  seg.b = (c + e.hi * t).head<2>();
  seg.bounded = true;
  return seg;
}

std::vector<FreeSpaceCluster> cluster_free_space(const SceneGraph& g, const StructuralConfig& cfg) {
  cfg.validate();
  struct Footprint {
    std::vector<Vec2> hull;
    const Plane* ground;
  };
  std::vector<Footprint> footprints;
  for (const auto* ground : live_of_class(g, SemanticClass::Ground)) {
    for (const auto& obs : ground->observations) {
      const auto kf = g.keyframes.find(obs.keyframe);
      if (kf == g.keyframes.end()) continue;
      std::vector<Vec2> pts;
      pts.reserve(obs.support.size());
      for (const auto& p : obs.support) pts.push_back((kf->second.pose * p).head<2>());
      // The sight lines from the camera down to the observed patch cross free space as well.
      if (!pts.empty()) pts.push_back(kf->second.pose.translation.head<2>());
      auto hull = convex_hull(std::move(pts));
      if (hull.size() >= 3) footprints.push_back({std::move(hull), &ground->plane});
    }
  }
  if (footprints.empty()) return {};

  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (const auto& f : footprints)
    for (const auto& p : f.hull) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  Grid grid;
  grid.res = cfg.grid_resolution;
  grid.ix0 = static_cast<std::int64_t>(std::floor(lo.x() / grid.res));
  grid.iy0 = static_cast<std::int64_t>(std::floor(lo.y() / grid.res));
  grid.nx = static_cast<std::int64_t>(std::floor(hi.x() / grid.res)) - grid.ix0 + 1;
  grid.ny = static_cast<std::int64_t>(std::floor(hi.y() / grid.res)) - grid.iy0 + 1;
  const auto cells = static_cast<std::size_t>(grid.nx * grid.ny);

  // Footprint: which ground plane (if any) covers each cell.
  std::vector<const Plane*> cover(cells, nullptr);
  for (const auto& f : footprints) {
    Vec2 flo = f.hull.front(), fhi = f.hull.front();
    for (const auto& p : f.hull) {
      flo = flo.cwiseMin(p);
      fhi = fhi.cwiseMax(p);
    }
    for (auto j = std::max<std::int64_t>(0, grid.cell_y(flo.y())); j <= std::min(grid.ny - 1, grid.cell_y(fhi.y()));
         ++j)
      for (auto i = std::max<std::int64_t>(0, grid.cell_x(flo.x()));
           i <= std::min(grid.nx - 1, grid.cell_x(fhi.x())); ++i) {
        const auto idx = grid.index(i, j);
        if (!cover[idx] && inside_convex(f.hull, grid.center(i, j))) cover[idx] = f.ground;
      }
  }

  // Wall clearance: block cells within omega/2 of any wall's horizontal footprint.
  const double clearance = cfg.wall_clearance / 2.0;
  std::vector<char> blocked(cells, 0);
  for (const auto* wall : live_of_class(g, SemanticClass::Wall)) {
    const WallSegment seg = wall_segment(g, *wall);
    std::int64_t i0 = 0, i1 = grid.nx - 1, j0 = 0, j1 = grid.ny - 1;
    if (seg.bounded) {
      const Vec2 slo = seg.a.cwiseMin(seg.b).array() - clearance;
      const Vec2 shi = seg.a.cwiseMax(seg.b).array() + clearance;
      i0 = std::max(i0, grid.cell_x(slo.x()));
      i1 = std::min(i1, grid.cell_x(shi.x()));
      j0 = std::max(j0, grid.cell_y(slo.y()));
      j1 = std::min(j1, grid.cell_y(shi.y()));
    }
    const Vec3& n = wall->plane.normal;
    const double nh = n.head<2>().norm();
    for (auto j = j0; j <= j1; ++j)
      for (auto i = i0; i <= i1; ++i) {
        const Vec2 p = grid.center(i, j);
        double dist;
        if (seg.bounded) {
          dist = segment_distance(seg.a, seg.b, p);
        } else {
          if (nh < 1e-9) continue;
          const Vec3 on = wall->plane.project(wall->plane.centroid);
          dist = std::abs(n.head<2>().dot(p - on.head<2>())) / nh;
        }
        if (dist <= clearance) blocked[grid.index(i, j)] = 1;
      }
  }

  std::vector<FreeSpaceCluster> clusters;
  std::vector<char> seen(cells, 0);
  for (std::int64_t j = 0; j < grid.ny; ++j)
    for (std::int64_t i = 0; i < grid.nx; ++i) {
      const auto start = grid.index(i, j);
      if (seen[start] || !cover[start] || blocked[start]) continue;
      FreeSpaceCluster cluster;
      std::deque<std::pair<std::int64_t, std::int64_t>> queue{{i, j}};
      seen[start] = 1;
      while (!queue.empty()) {
        const auto [ci, cj] = queue.front();
        queue.pop_front();
        const auto idx = grid.index(ci, cj);
        const Vec2 xy = grid.center(ci, cj);
        cluster.cells.emplace_back(xy.x(), xy.y(), ground_height(*cover[idx], xy));
        constexpr std::int64_t di[4] = {1, -1, 0, 0};
        constexpr std::int64_t dj[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const auto ni = ci + di[k], nj = cj + dj[k];
          if (ni < 0 || nj < 0 || ni >= grid.nx || nj >= grid.ny) continue;
          const auto nidx = grid.index(ni, nj);
          if (seen[nidx] || !cover[nidx] || blocked[nidx]) continue;
          seen[nidx] = 1;
          queue.emplace_back(ni, nj);
        }
      }
      if (static_cast<int>(cluster.cells.size()) < cfg.min_cluster_cells) continue;
      Vec3 sum = Vec3::Zero();
      for (const auto& c : cluster.cells) sum += c;
      cluster.centroid = sum / static_cast<double>(cluster.cells.size());
      clusters.push_back(std::move(cluster));
    }
  return clusters;
}

bool wall_proximity_ok(const Plane& wall, const FreeSpaceCluster& c, double omega) {
  return std::any_of(c.cells.begin(), c.cells.end(),
                     [&](const Vec3& v) { return std::abs(wall.normal.dot(v) + wall.offset) <= omega; });
}

bool wall_proximity_ok(const MapComponent& wall, const FreeSpaceCluster& c, double omega) {
  return wall_proximity_ok(wall.plane, c, omega);
}

bool wall_directionality_ok(const Plane& wall, const FreeSpaceCluster& c) {
  return wall.normal.dot(c.centroid - wall.centroid) < 0.0;
}

bool wall_directionality_ok(const MapComponent& wall, const FreeSpaceCluster& c) {
  return wall_directionality_ok(wall.plane, c);
}

bool wall_borders_cluster(const SceneGraph& g, const MapComponent& wall, const FreeSpaceCluster& c,
                          const StructuralConfig& cfg) {
  const Extent e = lateral_extent(g, wall);
  const Vec3 t = horizontal_tangent(wall.plane.normal);
  const Vec3 origin = wall.plane.project(wall.plane.centroid);
  for (const auto& v : c.cells) {
    if (std::abs(wall.plane.signed_distance(v)) > cfg.wall_clearance) continue;
    if (!e.bounded) return true;
    const double s = t.dot(v - origin);
    if (s >= e.lo - cfg.wall_extent_margin && s <= e.hi + cfg.wall_extent_margin) return true;
  }
  return false;
}

bool ground_association_ok(const Plane& ground, const std::vector<Plane>& walls, double theta) {
  if (walls.empty()) return false;
  const double max_dot = std::sin(theta);
  for (const auto& w : walls)
    if (std::abs(ground.normal.dot(w.normal)) > max_dot) return false;
  for (const auto& wi : walls) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& wj : walls) {
      const double s = wi.normal.dot(wj.centroid);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    const double p = wi.normal.dot(ground.centroid);
    if (p < lo || p > hi) return false;
  }
  return true;
}

bool ground_association_ok(const MapComponent& ground, const std::vector<MapComponent>& walls, double theta) {
  std::vector<Plane> planes;
  planes.reserve(walls.size());
  for (const auto& w : walls) planes.push_back(w.plane);
  return ground_association_ok(ground.plane, planes, theta);
}

bool marker_in_room(const Vec3& marker_center, const Room& room, const SceneGraph& g, double epsilon_s) {
  if ((marker_center - room.centroid).norm() > epsilon_s) return false;
  for (const auto wid : room.walls) {
    const auto it = g.components.find(wid);
    if (it == g.components.end()) return false;
    if (it->second.plane.normal.dot(marker_center - it->second.plane.centroid) > 0.0) return false;
  }
  return true;
}

namespace {

std::vector<Plane> wall_planes(const SceneGraph& g, const std::vector<ComponentId>& walls) {
  std::vector<Plane> planes;
  planes.reserve(walls.size());
  for (const auto id : walls) planes.push_back(g.components.at(id).plane);
  return planes;
}

// The fused ground first, then each keyframe-level observation of it.
struct GroundChoice {
  ComponentId id;
  std::optional<KeyFrameId> observation;
};

std::optional<GroundChoice> choose_ground(const SceneGraph& g, const std::vector<Plane>& walls, double theta) {
  auto grounds = live_of_class(g, SemanticClass::Ground);
  std::stable_sort(grounds.begin(), grounds.end(), [](const MapComponent* a, const MapComponent* b) {
    return a->plane.inlier_count > b->plane.inlier_count;
  });
  for (const auto* ground : grounds) {
    if (ground_association_ok(ground->plane, walls, theta)) return GroundChoice{ground->id, std::nullopt};
    for (const auto& obs : ground->observations) {
      if (!g.keyframes.count(obs.keyframe)) continue;
      if (ground_association_ok(g.observation_global(obs), walls, theta))
        return GroundChoice{ground->id, obs.keyframe};
    }
  }
  return std::nullopt;
}

bool cluster_contains(const FreeSpaceCluster& c, const Vec3& p, double res) {
  for (const auto& v : c.cells)
    if (std::abs(v.x() - p.x()) <= res / 2.0 && std::abs(v.y() - p.y()) <= res / 2.0) return true;
  return false;
}

}  // namespace

std::vector<Room> detect_rooms(SceneGraph& g, const StructuralConfig& cfg) {
  return detect_rooms(g, cluster_free_space(g, cfg), cfg);
}

std::vector<Room> detect_rooms(SceneGraph& g, const std::vector<FreeSpaceCluster>& clusters,
                               const StructuralConfig& cfg) {
  cfg.validate();
  const auto walls = live_of_class(g, SemanticClass::Wall);
  std::vector<Room> rooms;
  std::set<RoomId> claimed;
  for (const auto& cluster : clusters) {
    Room room;
    for (const auto* wall : walls) {
      if (!wall_proximity_ok(*wall, cluster, cfg.wall_clearance)) continue;
      if (!wall_directionality_ok(*wall, cluster)) continue;
      if (!wall_borders_cluster(g, *wall, cluster, cfg)) continue;
      room.walls.push_back(wall->id);
    }
    if (room.walls.size() < 2) continue;
    const auto planes = wall_planes(g, room.walls);
    const auto ground = choose_ground(g, planes, cfg.ground_angle_tol);
    if (!ground) continue;
    room.ground = ground->id;
    room.ground_observation = ground->observation;
    Vec3 sum = Vec3::Zero();
    for (const auto& p : planes) sum += p.centroid;
    room.centroid = sum / static_cast<double>(planes.size());
    room.cluster = cluster;

    // Same room as before when the previous cluster sits where this one is.
    for (const auto& [id, old] : g.rooms) {
      if (claimed.count(id)) continue;
      const bool near = (old.cluster.centroid - cluster.centroid).norm() < 2.0 * cfg.grid_resolution;
      if (near || cluster_contains(cluster, old.cluster.centroid, cfg.grid_resolution)) {
        room.id = id;
        room.label = old.label;
        room.marker = old.marker;
        claimed.insert(id);
        break;
      }
    }
    rooms.push_back(std::move(room));
  }

  std::map<RoomId, Room> next;
  for (auto& room : rooms) {
    if (!room.id.valid()) room.id = g.next_room_id();
    next[room.id] = room;
  }
  for (auto& [id, marker] : g.markers)
    if (marker.room && !next.count(*marker.room)) marker.room.reset();
  g.rooms = std::move(next);
  return rooms;
}

std::optional<Floor> detect_floor(SceneGraph& g) {
  if (g.rooms.empty()) {
    g.floor.reset();
    return std::nullopt;
  }
  Floor floor;
  floor.id = g.floor ? g.floor->id : FloorId(0);
  Vec3 sum = Vec3::Zero();
  for (const auto& [id, room] : g.rooms) {
    floor.rooms.push_back(id);
    sum += room.centroid;
  }
  floor.centroid = sum / static_cast<double>(g.rooms.size());
  std::size_t best = 0;
  for (const auto& [id, c] : g.components)
    if (c.plane.cls == SemanticClass::Ground && (!floor.plane || c.plane.inlier_count > best)) {
      floor.plane = id;
      best = c.plane.inlier_count;
    }
  g.floor = floor;
  return floor;
}

void associate_markers(SceneGraph& g, const MarkerDatabase& db, double epsilon_s) {
  for (auto& [id, room] : g.rooms) {
    room.marker.reset();
    room.label.reset();
  }
  for (auto& [mid, marker] : g.markers) {
    marker.room.reset();
    const auto entry = db.find(static_cast<int>(mid.value));
    if (entry == db.end()) {
      const std::string msg = "marker " + std::to_string(mid.value) + " has no database entry";
      if (std::find(g.warnings.begin(), g.warnings.end(), msg) == g.warnings.end()) g.warnings.push_back(msg);
      continue;
    }
    std::optional<RoomId> best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& [rid, room] : g.rooms) {
      if (room.marker) continue;
      if (!marker_in_room(marker.center(), room, g, epsilon_s)) continue;
      const double d = (marker.center() - room.centroid).norm();
      if (d < best_dist) {
        best_dist = d;
        best = rid;
      }
    }
    if (!best) continue;
    auto& room = g.rooms.at(*best);
    room.marker = mid;
    room.label = entry->second;
    marker.room = *best;
  }
}

void run_structural_pass(SceneGraph& g, const StructuralConfig& cfg, const MarkerDatabase& db) {
  cfg.validate();
  detect_rooms(g, cfg);
  detect_floor(g);
  associate_markers(g, db, cfg.marker_proximity);
}

RoomCheck verify_room(const SceneGraph& g, const Room& room, const StructuralConfig& cfg) {
  RoomCheck check;
  check.enough_walls = room.walls.size() >= 2;
  check.proximity = true;
  check.directionality = true;
  std::vector<Plane> planes;
  for (const auto id : room.walls) {
    const auto it = g.components.find(id);
    if (it == g.components.end()) {
      check.proximity = check.directionality = false;
      continue;
    }
    planes.push_back(it->second.plane);
    check.proximity = check.proximity && wall_proximity_ok(it->second, room.cluster, cfg.wall_clearance);
    check.directionality = check.directionality && wall_directionality_ok(it->second, room.cluster);
  }
  const auto ground = g.components.find(room.ground);
  if (ground == g.components.end() || planes.empty()) return check;
  if (!room.ground_observation) {
    check.ground = ground_association_ok(ground->second.plane, planes, cfg.ground_angle_tol);
    return check;
  }
  for (const auto& obs : ground->second.observations)
    if (obs.keyframe == *room.ground_observation &&
        ground_association_ok(g.observation_global(obs), planes, cfg.ground_angle_tol)) {
      check.ground = true;
      break;
    }
  return check;
}

}  // namespace structmap
