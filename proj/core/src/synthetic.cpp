#include "structmap/synthetic.hpp"

#include "json_util.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace structmap {

namespace {

using detail::child;
using detail::json;

constexpr double kDeg = M_PI / 180.0;
constexpr double kGeomTol = 1e-6;

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

double signed_area(const std::vector<Vec2>& poly) {
  double area = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) area += cross2(poly[i], poly[(i + 1) % poly.size()]);
  return 0.5 * area;
}

Vec2 polygon_centroid(const std::vector<Vec2>& poly) {
  Vec2 c = Vec2::Zero();
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    const double w = cross2(p, q);
    a += w;
    c += (p + q) * w;
  }
  return c / (3.0 * a);
}

bool is_convex_ccw(const std::vector<Vec2>& poly) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const Vec2& c = poly[(i + 2) % poly.size()];
    if (cross2(b - a, c - b) <= kGeomTol) return false;
  }
  return true;
}

bool inside_polygon(const std::vector<Vec2>& poly, const Vec2& p, double tol) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2 d = poly[(i + 1) % poly.size()] - a;
    if (cross2(d, p - a) / d.norm() < -tol) return false;
  }
  return true;
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + s * d)).norm();
}

double polygon_distance(const std::vector<Vec2>& poly, const Vec2& p) {
  if (inside_polygon(poly, p, 0.0)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i)
    best = std::min(best, segment_distance(p, poly[i], poly[(i + 1) % poly.size()]));
  return best;
}

// Separating-axis test; touching along an edge does not count as overlap.
bool polygons_overlap(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  for (const auto* poly : {&a, &b}) {
    for (std::size_t i = 0; i < poly->size(); ++i) {
      const Vec2 e = (*poly)[(i + 1) % poly->size()] - (*poly)[i];
      const Vec2 axis(-e.y(), e.x());
      double amin = std::numeric_limits<double>::infinity(), amax = -amin;
      double bmin = amin, bmax = -amin;
      for (const Vec2& p : a) {
        amin = std::min(amin, axis.dot(p));
        amax = std::max(amax, axis.dot(p));
      }
      for (const Vec2& p : b) {
        bmin = std::min(bmin, axis.dot(p));
        bmax = std::max(bmax, axis.dot(p));
      }
      const double tol = kGeomTol * axis.norm();
      if (amax <= bmin + tol || bmax <= amin + tol) return false;
    }
  }
  return true;
}

/// Arc-length interval of the door on the segment a->b, if the door lies on it.
std::optional<std::pair<double, double>> door_interval(const DoorSpec& door, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len = d.norm();
  const Vec2 u = d / len;
  for (const Vec2& p : {door.a, door.b})
    if (std::abs(cross2(u, p - a)) > kGeomTol) return std::nullopt;
  double s0 = u.dot(door.a - a), s1 = u.dot(door.b - a);
  if (s0 > s1) std::swap(s0, s1);
  if (s0 < -kGeomTol || s1 > len + kGeomTol) return std::nullopt;
  return std::make_pair(std::max(0.0, s0), std::min(len, s1));
}

bool in_gap(const TruthWall& w, double s) {
  for (const auto& [g0, g1] : w.gaps)
    if (s > g0 && s < g1) return true;
  return false;
}

Mat3 rot_z(double yaw) { return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(); }

Pose camera_pose(const Vec2& xy, double yaw, const CameraModel& cam) {
  // Body frame: x forward, z up; positive pitch tilts the view down.
  const Mat3 r = rot_z(yaw) * Eigen::AngleAxisd(cam.pitch, Vec3::UnitY()).toRotationMatrix();
  return {r, Vec3(xy.x(), xy.y(), cam.height)};
}

double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5eedU};
  return std::mt19937_64(seq);
}

constexpr std::uint8_t kWallLabel = 1;
constexpr std::uint8_t kGroundLabel = 2;
constexpr std::uint8_t kFurnitureLabel = 3;

struct Surface {
  std::uint8_t label = 0;
  // Parallelogram origin + u*s + v*t, s,t in [0,1], or a triangle when `triangle` is set (s + t <= 1).
  Vec3 origin, u, v;
  bool triangle = false;
  Vec3 outward;  // side the surface is visible from
  const TruthWall* wall = nullptr;  // gaps + occluder exclusion

  double area() const { return (triangle ? 0.5 : 1.0) * u.cross(v).norm(); }
};

std::vector<Surface> build_surfaces(const GroundTruth& truth, const WorldSpec& spec) {
  std::vector<Surface> out;
  for (const TruthWall& w : truth.walls) {
    Surface s;
    s.label = kWallLabel;
    s.origin = Vec3(w.a.x(), w.a.y(), 0.0);
    s.u = Vec3(w.b.x() - w.a.x(), w.b.y() - w.a.y(), 0.0);
    s.v = Vec3(0.0, 0.0, w.height);
    s.outward = -w.plane.normal;  // visible from inside the room
    s.wall = &w;
    out.push_back(s);
  }
  for (const auto& poly : truth.grounds.front().footprints) {
    for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
      Surface s;
      s.label = kGroundLabel;
      s.triangle = true;
      s.origin = Vec3(poly[0].x(), poly[0].y(), 0.0);
      s.u = Vec3(poly[i].x(), poly[i].y(), 0.0) - s.origin;
      s.v = Vec3(poly[i + 1].x(), poly[i + 1].y(), 0.0) - s.origin;
      s.outward = Vec3::UnitZ();
      out.push_back(s);
    }
  }
  for (const FurnitureSpec& f : spec.furniture) {
    const Vec3 e = f.max - f.min;
    auto add = [&](const Vec3& o, const Vec3& u, const Vec3& v, const Vec3& n) {
      Surface s;
      s.label = kFurnitureLabel;
      s.origin = o;
      s.u = u;
      s.v = v;
      s.outward = n;
      out.push_back(s);
    };
    add(f.min, Vec3(e.x(), 0, 0), Vec3(0, 0, e.z()), -Vec3::UnitY());
    add(f.min + Vec3(0, e.y(), 0), Vec3(e.x(), 0, 0), Vec3(0, 0, e.z()), Vec3::UnitY());
    add(f.min, Vec3(0, e.y(), 0), Vec3(0, 0, e.z()), -Vec3::UnitX());
    add(f.min + Vec3(e.x(), 0, 0), Vec3(0, e.y(), 0), Vec3(0, 0, e.z()), Vec3::UnitX());
    add(f.min + Vec3(0, 0, e.z()), Vec3(e.x(), 0, 0), Vec3(0, e.y(), 0), Vec3::UnitZ());
  }
  return out;
}

// Distance from a 2D point to the horizontal footprint of a surface (a segment or polygon).
double surface_xy_distance(const Surface& s, const Vec2& p) {
  const Vec2 o = s.origin.head<2>();
  const Vec2 u = s.u.head<2>(), v = s.v.head<2>();
  if (s.triangle) return polygon_distance({o, o + u, o + v}, p);
  if (v.squaredNorm() < 1e-12) return segment_distance(p, o, o + u);
  if (u.squaredNorm() < 1e-12) return segment_distance(p, o, o + v);
  std::vector<Vec2> quad{o, o + u, o + u + v, o + v};
  if (signed_area(quad) < 0) std::reverse(quad.begin(), quad.end());
  return polygon_distance(quad, p);
}

/// True when the horizontal sight line from `eye` to `target` crosses a wall face outside its gaps.
bool occluded(const GroundTruth& truth, const Vec2& eye, const Vec2& target, const TruthWall* self) {
  const Vec2 r = target - eye;
  for (const TruthWall& w : truth.walls) {
    if (&w == self) continue;
    const Vec2 d = w.b - w.a;
    const double denom = cross2(r, d);
    if (std::abs(denom) < 1e-12) continue;
    const Vec2 q = w.a - eye;
    const double t = cross2(q, d) / denom;  // along the sight line
    const double u = cross2(q, r) / denom;  // along the wall
    if (t <= 1e-9 || t >= 1.0 - 1e-9 || u < 0.0 || u > 1.0) continue;
    if (in_gap(w, u * d.norm())) continue;
    return true;
  }
  return false;
}

bool in_frustum(const Vec3& q, const CameraModel& cam) {
  const double range = q.norm();
  if (q.x() <= 0.0 || range < cam.min_range || range > cam.max_range) return false;
  return std::abs(std::atan2(q.y(), q.x())) <= 0.5 * cam.hfov && std::abs(std::atan2(q.z(), q.x())) <= 0.5 * cam.vfov;
}

// Conservative whole-surface cull: every corner is outside one of the frustum's side planes.
bool outside_frustum(const Surface& s, const Vec3& eye, const Mat3& rt, const CameraModel& cam) {
  std::vector<Vec3> corners{s.origin, s.origin + s.u, s.origin + s.v};
  if (!s.triangle) corners.push_back(s.origin + s.u + s.v);
  const double th = std::tan(0.5 * cam.hfov), tv = std::tan(0.5 * cam.vfov);
  const std::array<Vec3, 4> sides{Vec3(-th, 1, 0), Vec3(-th, -1, 0), Vec3(-tv, 0, 1), Vec3(-tv, 0, -1)};
  for (const Vec3& n : sides) {
    const bool all_out = std::all_of(corners.begin(), corners.end(),
                                      [&](const Vec3& c) { return n.dot(rt * (c - eye)) > 0.0; });
    if (all_out) return true;
  }
  return false;
}

Pose perturb_pose(const Pose& p, double sigma_rot, double sigma_trans, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec3 w, v;
  for (int i = 0; i < 3; ++i) w(i) = sigma_rot * n01(rng);
  for (int i = 0; i < 3; ++i) v(i) = sigma_trans * n01(rng);
  return {orthonormalize(p.rotation * so3_exp(w)), p.translation + v};
}

}  // namespace

// ---------------------------------------------------------------- world spec JSON

WorldSpec parse_world_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("invalid JSON: ") + e.what());
  }
  const std::string root;
  detail::reject_unknown(j, {"name", "seed", "wall_height", "rooms", "doors", "markers", "furniture", "trajectory"},
                         root);
  WorldSpec spec;
  spec.name = detail::string(detail::require(j, "name", root), "/name");
  if (const json* s = detail::optional(j, "seed", root)) {
    const std::int64_t v = detail::integer(*s, "/seed");
    if (v < 0) throw ParseError("/seed", "must be nonnegative");
    spec.seed = static_cast<std::uint64_t>(v);
  }
  if (const json* h = detail::optional(j, "wall_height", root)) spec.wall_height = detail::number(*h, "/wall_height");

  const json& rooms = detail::array(detail::require(j, "rooms", root), "/rooms");
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const std::string p = child("/rooms", i);
    detail::reject_unknown(rooms[i], {"name", "polygon", "open_edges"}, p);
    RoomSpec r;
    r.name = detail::string(detail::require(rooms[i], "name", p), child(p, "name"));
    const json& poly = detail::array(detail::require(rooms[i], "polygon", p), child(p, "polygon"));
    for (std::size_t k = 0; k < poly.size(); ++k) r.polygon.push_back(detail::vec2(poly[k], child(child(p, "polygon"), k)));
    if (const json* open = detail::optional(rooms[i], "open_edges", p)) {
      detail::array(*open, child(p, "open_edges"));
      for (std::size_t k = 0; k < open->size(); ++k)
        r.open_edges.push_back(static_cast<int>(detail::integer((*open)[k], child(child(p, "open_edges"), k))));
    }
    spec.rooms.push_back(std::move(r));
  }
  if (const json* doors = detail::optional(j, "doors", root)) {
    detail::array(*doors, "/doors");
    for (std::size_t i = 0; i < doors->size(); ++i) {
      const std::string p = child("/doors", i);
      detail::reject_unknown((*doors)[i], {"from", "to"}, p);
      spec.doors.push_back({detail::vec2(detail::require((*doors)[i], "from", p), child(p, "from")),
                            detail::vec2(detail::require((*doors)[i], "to", p), child(p, "to"))});
    }
  }
  if (const json* markers = detail::optional(j, "markers", root)) {
    detail::array(*markers, "/markers");
    for (std::size_t i = 0; i < markers->size(); ++i) {
      const std::string p = child("/markers", i);
      const json& m = (*markers)[i];
      detail::reject_unknown(m, {"id", "room", "position", "yaw_deg", "label"}, p);
      MarkerSpec ms;
      ms.id = static_cast<int>(detail::integer(detail::require(m, "id", p), child(p, "id")));
      ms.room = detail::string(detail::require(m, "room", p), child(p, "room"));
      ms.position = detail::vec3(detail::require(m, "position", p), child(p, "position"));
      if (const json* y = detail::optional(m, "yaw_deg", p)) ms.yaw = detail::number(*y, child(p, "yaw_deg")) * kDeg;
      if (const json* l = detail::optional(m, "label", p)) ms.label = detail::string(*l, child(p, "label"));
      spec.markers.push_back(std::move(ms));
    }
  }
  if (const json* furniture = detail::optional(j, "furniture", root)) {
    detail::array(*furniture, "/furniture");
    for (std::size_t i = 0; i < furniture->size(); ++i) {
      const std::string p = child("/furniture", i);
      detail::reject_unknown((*furniture)[i], {"min", "max"}, p);
      spec.furniture.push_back({detail::vec3(detail::require((*furniture)[i], "min", p), child(p, "min")),
                                detail::vec3(detail::require((*furniture)[i], "max", p), child(p, "max"))});
    }
  }
  const json& traj = detail::require(j, "trajectory", root);
  detail::reject_unknown(traj, {"waypoints", "speed", "yaw_rate_deg", "keyframe_interval", "max_keyframes"},
                         "/trajectory");
  const json& wps = detail::array(detail::require(traj, "waypoints", "/trajectory"), "/trajectory/waypoints");
  for (std::size_t i = 0; i < wps.size(); ++i) {
    const std::string p = child("/trajectory/waypoints", i);
    if (!wps[i].is_array() || (wps[i].size() != 2 && wps[i].size() != 3))
      throw ParseError(p, "expected [x, y] or [x, y, spin_deg]");
    Waypoint w;
    w.position = Vec2(detail::number(wps[i][0], child(p, 0)), detail::number(wps[i][1], child(p, 1)));
    if (wps[i].size() == 3) w.spin = detail::number(wps[i][2], child(p, 2)) * kDeg;
    spec.trajectory.waypoints.push_back(w);
  }
  if (const json* v = detail::optional(traj, "speed", "/trajectory"))
    spec.trajectory.speed = detail::number(*v, "/trajectory/speed");
  if (const json* v = detail::optional(traj, "yaw_rate_deg", "/trajectory"))
    spec.trajectory.yaw_rate = detail::number(*v, "/trajectory/yaw_rate_deg") * kDeg;
  if (const json* v = detail::optional(traj, "keyframe_interval", "/trajectory"))
    spec.trajectory.keyframe_interval = detail::number(*v, "/trajectory/keyframe_interval");
  if (const json* v = detail::optional(traj, "max_keyframes", "/trajectory"))
    spec.trajectory.max_keyframes = static_cast<int>(detail::integer(*v, "/trajectory/max_keyframes"));
  return spec;
}

WorldSpec load_world_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open world spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_world_spec(ss.str());
}

std::string dump_world_spec(const WorldSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["seed"] = spec.seed;
  j["wall_height"] = spec.wall_height;
  j["rooms"] = json::array();
  for (const RoomSpec& r : spec.rooms) {
    json poly = json::array();
    for (const Vec2& p : r.polygon) poly.push_back(detail::to_json(p));
    j["rooms"].push_back({{"name", r.name}, {"polygon", poly}, {"open_edges", r.open_edges}});
  }
  j["doors"] = json::array();
  for (const DoorSpec& d : spec.doors) j["doors"].push_back({{"from", detail::to_json(d.a)}, {"to", detail::to_json(d.b)}});
  j["markers"] = json::array();
  for (const MarkerSpec& m : spec.markers)
    j["markers"].push_back({{"id", m.id},
                            {"room", m.room},
                            {"position", detail::to_json(m.position)},
                            {"yaw_deg", m.yaw / kDeg},
                            {"label", m.label}});
  j["furniture"] = json::array();
  for (const FurnitureSpec& f : spec.furniture)
    j["furniture"].push_back({{"min", detail::to_json(f.min)}, {"max", detail::to_json(f.max)}});
  json wps = json::array();
  for (const Waypoint& w : spec.trajectory.waypoints) {
    json wp = detail::to_json(w.position);
    if (w.spin != 0.0) wp.push_back(w.spin / kDeg);
    wps.push_back(wp);
  }
  j["trajectory"] = {{"waypoints", wps},
                     {"speed", spec.trajectory.speed},
                     {"yaw_rate_deg", spec.trajectory.yaw_rate / kDeg},
                     {"keyframe_interval", spec.trajectory.keyframe_interval},
                     {"max_keyframes", spec.trajectory.max_keyframes}};
  return j.dump(2);
}

// ---------------------------------------------------------------- models

NoiseModel NoiseModel::noiseless() {
  NoiseModel n;
  n.point_sigma = 0.0;
  n.label_flip_rate = 0.0;
  n.confidence_min = n.confidence_max = 1.0;
  n.odometry_sigma_rot = n.odometry_sigma_trans = 0.0;
  n.marker_sigma_rot = n.marker_sigma_trans = 0.0;
  return n;
}

void NoiseModel::validate() const {
  for (double v : {point_sigma, label_flip_rate, confidence_min, confidence_max, flipped_confidence_min,
                   flipped_confidence_max, odometry_sigma_rot, odometry_sigma_trans, marker_sigma_rot,
                   marker_sigma_trans})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("noise model values must be finite and >= 0");
  if (label_flip_rate > 1.0) throw std::invalid_argument("label_flip_rate must be <= 1");
  if (confidence_max > 1.0 || flipped_confidence_max > 1.0) throw std::invalid_argument("confidences must be <= 1");
  if (confidence_min > confidence_max || flipped_confidence_min > flipped_confidence_max)
    throw std::invalid_argument("confidence range is inverted");
}

void CameraModel::validate() const {
  if (!(height > 0.0)) throw std::invalid_argument("camera height must be > 0");
  if (!(hfov > 0.0 && hfov < M_PI) || !(vfov > 0.0 && vfov < M_PI))
    throw std::invalid_argument("fields of view must lie in (0, 180) degrees");
  if (!(min_range >= 0.0 && max_range > min_range)) throw std::invalid_argument("camera range band is empty");
  if (!(density > 0.0)) throw std::invalid_argument("sampling density must be > 0");
}

// ---------------------------------------------------------------- truth geometry

Vec3 TruthWall::center() const {
  const Vec2 m = 0.5 * (a + b);
  return {m.x(), m.y(), 0.5 * height};
}

double TruthWall::distance(const Vec3& p) const {
  const Vec2 d = b - a;
  const double len = d.norm();
  const double s = std::clamp((p.head<2>() - a).dot(d / len), 0.0, len);
  const Vec2 q = a + s * d / len;
  const double z = std::clamp(p.z(), 0.0, height);
  return (p - Vec3(q.x(), q.y(), z)).norm();
}

double TruthGround::distance(const Vec3& p) const {
  double lateral = std::numeric_limits<double>::infinity();
  for (const auto& poly : footprints) lateral = std::min(lateral, polygon_distance(poly, p.head<2>()));
  const double vertical = plane.signed_distance(p);
  return std::sqrt(lateral * lateral + vertical * vertical);
}

EntityCounts GroundTruth::counts() const {
  return {static_cast<int>(walls.size()), static_cast<int>(grounds.size()), static_cast<int>(rooms.size()),
          static_cast<int>(floors.size())};
}

MarkerDatabase GroundTruth::marker_database() const {
  MarkerDatabase db;
  for (const TruthMarker& m : markers)
    if (!m.label.empty()) db[m.id] = m.label;
  return db;
}

EntityCounts expected_counts(const WorldSpec& spec) {
  EntityCounts c;
  for (const RoomSpec& r : spec.rooms) {
    std::vector<int> open = r.open_edges;
    std::sort(open.begin(), open.end());
    open.erase(std::unique(open.begin(), open.end()), open.end());
    c.walls += static_cast<int>(r.polygon.size() - open.size());
  }
  c.rooms = static_cast<int>(spec.rooms.size());
  c.grounds = spec.rooms.empty() ? 0 : 1;
  c.floors = spec.rooms.empty() ? 0 : 1;
  return c;
}

GroundTruth generate_world(const WorldSpec& spec) {
  if (spec.rooms.empty()) throw std::invalid_argument("world '" + spec.name + "' has no rooms");
  if (!(spec.wall_height > 0.0)) throw std::invalid_argument("wall_height must be > 0");

  std::vector<std::vector<Vec2>> polys;
  std::map<std::string, std::size_t> by_name;
  for (const RoomSpec& r : spec.rooms) {
    if (r.name.empty()) throw std::invalid_argument("room names must be non-empty");
    if (!by_name.emplace(r.name, polys.size()).second)
      throw std::invalid_argument("duplicate room name '" + r.name + "'");
    if (r.polygon.size() < 3) throw std::invalid_argument("room '" + r.name + "' needs at least 3 vertices");
    std::vector<Vec2> poly = r.polygon;
    if (signed_area(poly) < 0.0) std::reverse(poly.begin(), poly.end());
    if (!is_convex_ccw(poly)) throw std::invalid_argument("room '" + r.name + "' is not a convex polygon");
    for (int e : r.open_edges)
      if (e < 0 || e >= static_cast<int>(poly.size()))
        throw std::invalid_argument("room '" + r.name + "' open edge " + std::to_string(e) + " out of range");
    polys.push_back(std::move(poly));
  }
  for (std::size_t i = 0; i < polys.size(); ++i)
    for (std::size_t k = i + 1; k < polys.size(); ++k)
      if (polygons_overlap(polys[i], polys[k]))
        throw std::invalid_argument("rooms '" + spec.rooms[i].name + "' and '" + spec.rooms[k].name + "' overlap");

  GroundTruth gt;
  gt.world = spec.name;
  std::int64_t next_wall = 0;
  for (std::size_t i = 0; i < spec.rooms.size(); ++i) {
    const RoomSpec& r = spec.rooms[i];
    const auto& poly = polys[i];
    // open_edges index the polygon as written; map them through a possible reversal.
    const bool reversed = signed_area(r.polygon) < 0.0;
    const int n = static_cast<int>(poly.size());
    auto is_open = [&](int e) {
      const int original = reversed ? (2 * n - 2 - e) % n : e;
      return std::find(r.open_edges.begin(), r.open_edges.end(), original) != r.open_edges.end();
    };
    TruthRoom room;
    room.id = static_cast<std::int64_t>(i);
    room.name = r.name;
    room.polygon = poly;
    Vec3 sum = Vec3::Zero();
    for (int e = 0; e < n; ++e) {
      if (is_open(e)) continue;
      TruthWall w;
      w.id = next_wall++;
      w.room = r.name;
      w.a = poly[static_cast<std::size_t>(e)];
      w.b = poly[static_cast<std::size_t>((e + 1) % n)];
      w.height = spec.wall_height;
      const Vec2 d = (w.b - w.a).normalized();
      w.plane.normal = Vec3(d.y(), -d.x(), 0.0);  // right of a CCW edge points outward
      w.plane.offset = -w.plane.normal.dot(Vec3(w.a.x(), w.a.y(), 0.0));
      w.plane.cls = SemanticClass::Wall;
      w.plane.centroid = w.center();
      sum += w.center();
      room.walls.push_back(w.id);
      gt.walls.push_back(std::move(w));
    }
    if (room.walls.empty()) {
      const Vec2 c = polygon_centroid(poly);
      room.centroid = Vec3(c.x(), c.y(), 0.5 * spec.wall_height);
    } else {
      room.centroid = sum / static_cast<double>(room.walls.size());
    }
    gt.rooms.push_back(std::move(room));
  }

  for (std::size_t i = 0; i < spec.doors.size(); ++i) {
    const DoorSpec& d = spec.doors[i];
    if ((d.b - d.a).norm() < kGeomTol) throw std::invalid_argument("door " + std::to_string(i) + " has zero width");
    bool placed = false;
    for (TruthWall& w : gt.walls)
      if (auto iv = door_interval(d, w.a, w.b)) {
        w.gaps.push_back(*iv);
        placed = true;
      }
    if (!placed) throw std::invalid_argument("door " + std::to_string(i) + " does not lie on a wall");
  }

  TruthGround ground;
  ground.id = 0;
  ground.plane.normal = Vec3::UnitZ();
  ground.plane.offset = 0.0;
  ground.plane.cls = SemanticClass::Ground;
  double area = 0.0;
  Vec2 c = Vec2::Zero();
  for (const auto& poly : polys) {
    const double a = signed_area(poly);
    area += a;
    c += a * polygon_centroid(poly);
  }
  ground.plane.centroid = Vec3(c.x() / area, c.y() / area, 0.0);
  ground.footprints = polys;
  gt.grounds.push_back(std::move(ground));

  TruthFloor floor;
  for (const TruthRoom& r : gt.rooms) floor.centroid += r.centroid;
  floor.centroid /= static_cast<double>(gt.rooms.size());
  gt.floors.push_back(floor);

  std::map<int, bool> seen;
  for (const MarkerSpec& m : spec.markers) {
    if (seen[m.id]) throw std::invalid_argument("duplicate marker id " + std::to_string(m.id));
    seen[m.id] = true;
    const auto it = by_name.find(m.room);
    if (it == by_name.end()) throw std::invalid_argument("marker " + std::to_string(m.id) + " names unknown room '" + m.room + "'");
    if (!inside_polygon(polys[it->second], m.position.head<2>(), kGeomTol) || m.position.z() < 0.0 ||
        m.position.z() > spec.wall_height)
      throw std::invalid_argument("marker " + std::to_string(m.id) + " lies outside room '" + m.room + "'");
    gt.markers.push_back({m.id, Pose::from_yaw(m.yaw, m.position), m.room, m.label});
  }

  for (const FurnitureSpec& f : spec.furniture)
    if ((f.max - f.min).minCoeff() <= 0.0) throw std::invalid_argument("furniture box has an empty extent");
  return gt;
}

// ---------------------------------------------------------------- trajectory

std::vector<TruthPose> sample_trajectory(const WorldSpec& spec, const CameraModel& camera) {
  const TrajectorySpec& t = spec.trajectory;
  if (t.waypoints.empty()) throw std::invalid_argument("trajectory has no waypoints");
  if (!(t.speed > 0.0) || !(t.yaw_rate > 0.0) || !(t.keyframe_interval > 0.0))
    throw std::invalid_argument("trajectory speed, yaw rate and keyframe interval must be > 0");

  struct Motion {
    double duration;
    Vec2 p0, p1;
    double yaw0, yaw1;
  };
  std::vector<Motion> motions;
  const auto& wps = t.waypoints;
  double yaw = 0.0;
  for (std::size_t i = 1; i < wps.size(); ++i)
    if ((wps[i].position - wps[0].position).norm() > kGeomTol) {
      const Vec2 d = wps[i].position - wps[0].position;
      yaw = std::atan2(d.y(), d.x());
      break;
    }
  for (std::size_t i = 0; i < wps.size(); ++i) {
    const Vec2 p = wps[i].position;
    if (wps[i].spin != 0.0) {
      motions.push_back({std::abs(wps[i].spin) / t.yaw_rate, p, p, yaw, yaw + wps[i].spin});
      yaw += wps[i].spin;
    }
    if (i + 1 == wps.size()) break;
    const Vec2 q = wps[i + 1].position;
    const double dist = (q - p).norm();
    if (dist < kGeomTol) continue;
    const double heading = std::atan2(q.y() - p.y(), q.x() - p.x());
    const double turn = wrap_angle(heading - yaw);
    if (std::abs(turn) > 1e-12) motions.push_back({std::abs(turn) / t.yaw_rate, p, p, yaw, yaw + turn});
    yaw += turn;
    motions.push_back({dist / t.speed, p, q, yaw, yaw});
  }

  double total = 0.0;
  for (const Motion& m : motions) total += m.duration;

  std::vector<TruthPose> out;
  std::size_t mi = 0;
  double start = 0.0;
  for (std::int64_t k = 0;; ++k) {
    if (t.max_keyframes > 0 && static_cast<int>(out.size()) >= t.max_keyframes) break;
    const double time = static_cast<double>(k) * t.keyframe_interval;
    if (time > total + 1e-9) break;
    while (mi + 1 < motions.size() && time > start + motions[mi].duration) {
      start += motions[mi].duration;
      ++mi;
    }
    Vec2 xy = wps.front().position;
    double heading = yaw;
    if (!motions.empty()) {
      const Motion& m = motions[mi];
      const double s = m.duration > 0.0 ? std::clamp((time - start) / m.duration, 0.0, 1.0) : 1.0;
      xy = m.p0 + s * (m.p1 - m.p0);
      heading = m.yaw0 + s * (m.yaw1 - m.yaw0);
    }
    out.push_back({k, time, camera_pose(xy, heading, camera)});
  }
  return out;
}

// ---------------------------------------------------------------- rendering

KeyFrame render_view(const GroundTruth& truth, const WorldSpec& spec, const Pose& pose, const RenderConfig& cfg,
                     std::uint64_t stream) {
  const CameraModel& cam = cfg.camera;
  const NoiseModel& noise = cfg.noise;
  std::mt19937_64 rng = make_rng(cfg.seed, stream);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);

  KeyFrame kf;
  kf.pose = pose;
  const Vec3 eye = pose.translation;
  const Mat3 rt = pose.rotation.transpose();

  const std::vector<Surface> surfaces = build_surfaces(truth, spec);
  for (const Surface& s : surfaces) {
    if (surface_xy_distance(s, eye.head<2>()) > cam.max_range) continue;
    if (s.outward.dot(eye - s.origin) <= 0.0) continue;
    if (outside_frustum(s, eye, rt, cam)) continue;
    const auto count = static_cast<std::size_t>(std::llround(s.area() * cam.density));
    for (std::size_t i = 0; i < count; ++i) {
      double a = u01(rng), b = u01(rng);
      if (s.triangle && a + b > 1.0) {
        a = 1.0 - a;
        b = 1.0 - b;
      }
      // Draw the per-point noise unconditionally so the stream does not depend on visibility.
      Vec3 jitter(n01(rng), n01(rng), n01(rng));
      // Truncated at 3 sigma so every unflipped point stays within 3 sigma of its surface.
      if (jitter.squaredNorm() > 9.0) jitter *= 3.0 / jitter.norm();
      const double flip = u01(rng), pick = u01(rng), conf = u01(rng);

      const Vec3 p = s.origin + a * s.u + b * s.v;
      if (s.wall != nullptr && in_gap(*s.wall, a * s.wall->length())) continue;
      if (s.outward.dot(eye - p) <= 0.0) continue;
      const Vec3 q = rt * (p - eye);
      if (!in_frustum(q, cam)) continue;
      if (occluded(truth, eye.head<2>(), p.head<2>(), s.wall)) continue;

      LabeledPoint lp;
      lp.position = rt * (p + noise.point_sigma * jitter - eye);
      lp.label = s.label;
      if (flip < noise.label_flip_rate) {
        // Uniformly one of the two other classes.
        const std::uint8_t others[3][2] = {{2, 3}, {1, 3}, {1, 2}};
        lp.label = others[s.label - 1][pick < 0.5 ? 0 : 1];
        lp.confidence = static_cast<float>(noise.flipped_confidence_min +
                                           conf * (noise.flipped_confidence_max - noise.flipped_confidence_min));
      } else {
        lp.confidence =
            static_cast<float>(noise.confidence_min + conf * (noise.confidence_max - noise.confidence_min));
      }
      kf.cloud.points.push_back(lp);
    }
  }

  for (const TruthMarker& m : truth.markers) {
    const Vec3 c = m.pose.translation;
    const Vec3 facing = m.pose.rotation.col(0);
    if (facing.dot(eye - c) <= 0.0) continue;
    if (!in_frustum(rt * (c - eye), cam)) continue;
    if (occluded(truth, eye.head<2>(), c.head<2>(), nullptr)) continue;
    MarkerObservation obs;
    obs.tag_id = m.id;
    obs.local = perturb_pose(pose.inverse() * m.pose, noise.marker_sigma_rot, noise.marker_sigma_trans, rng);
    const double sr = std::max(noise.marker_sigma_rot, 1e-3), st = std::max(noise.marker_sigma_trans, 1e-3);
    obs.information.setZero();
    obs.information.diagonal() << Vec3::Constant(1.0 / (sr * sr)), Vec3::Constant(1.0 / (st * st));
    kf.markers.push_back(obs);
  }
  return kf;
}

std::vector<Pose> integrate_odometry(const Pose& start, const std::vector<OdometryMeasurement>& odometry) {
  std::vector<Pose> out{start};
  for (const OdometryMeasurement& o : odometry) out.push_back(out.back() * o.relative);
  return out;
}

Sequence render_keyframes(const WorldSpec& spec, GroundTruth& truth, const RenderConfig& cfg) {
  cfg.noise.validate();
  cfg.camera.validate();
  Sequence seq;
  seq.id = spec.name + "-s" + std::to_string(cfg.seed);
  truth.sequence_id = seq.id;
  seq.classes = ClassTable::standard();
  seq.markers = truth.marker_database();
  truth.trajectory.clear();

  std::vector<TruthPose> kept;
  for (const TruthPose& tp : sample_trajectory(spec, cfg.camera)) {
    const Vec2 xy = tp.pose.translation.head<2>();
    const bool inside = std::any_of(truth.grounds.front().footprints.begin(), truth.grounds.front().footprints.end(),
                                    [&](const auto& poly) { return inside_polygon(poly, xy, kGeomTol); });
    if (!inside) {
      std::ostringstream msg;
      msg << "pose at t=" << tp.timestamp << " (" << xy.x() << ", " << xy.y() << ") is outside the world; skipped";
      seq.warnings.push_back(msg.str());
      continue;
    }
    TruthPose t = tp;
    t.keyframe = static_cast<std::int64_t>(kept.size());
    kept.push_back(t);
  }
  truth.trajectory = kept;

  std::vector<KeyFrame> frames(kept.size());
  detail::parallel_for(kept.size(), cfg.threads, [&](std::size_t i) {
    frames[i] = render_view(truth, spec, kept[i].pose, cfg, static_cast<std::uint64_t>(i));
  });

  std::mt19937_64 odo_rng = make_rng(cfg.seed, 0xFFFFFFFFFFFFFFFFULL);
  Pose estimate = kept.empty() ? Pose{} : kept.front().pose;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i > 0) {
      const Pose relative = kept[i - 1].pose.inverse() * kept[i].pose;
      const Pose noisy =
          perturb_pose(relative, cfg.noise.odometry_sigma_rot, cfg.noise.odometry_sigma_trans, odo_rng);
      seq.odometry.push_back({KeyFrameId(kept[i - 1].keyframe), KeyFrameId(kept[i].keyframe), noisy});
      estimate = estimate * noisy;
    }
    KeyFrame& kf = frames[i];
    kf.id = kept[i].keyframe;
    kf.timestamp = kept[i].timestamp;
    kf.pose = estimate;
    kf.cloud.frame_id = "kf_" + std::to_string(kf.id);
  }
  seq.keyframes = std::move(frames);
  return seq;
}

}  // namespace structmap
