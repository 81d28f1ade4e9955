#include "structmap/io.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace structmap {

using detail::child;
using detail::json;
using detail::to_json;

namespace {

std::string idx(std::int64_t i) { return std::to_string(i); }

json mat6_to_json(const Mat6& m) {
  json out = json::array();
  for (int r = 0; r < 6; ++r) {
    json row = json::array();
    for (int c = 0; c < 6; ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Mat6 mat6_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 6) throw ParseError(path, "expected a 6x6 array");
  Mat6 m;
  for (std::size_t r = 0; r < 6; ++r) m.row(static_cast<int>(r)) = detail::fixed_vector<6>(j[r], child(path, r));
  return m;
}

json points_to_json(const std::vector<Vec3>& pts) {
  json out = json::array();
  for (const auto& p : pts) out.push_back(to_json(p));
  return out;
}

std::vector<Vec3> points_from_json(const json& j, const std::string& path) {
  detail::array(j, path);
  std::vector<Vec3> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(detail::vec3(j[i], child(path, i)));
  return out;
}

std::vector<Vec2> polygon_from_json(const json& j, const std::string& path) {
  detail::array(j, path);
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(detail::vec2(j[i], child(path, i)));
  return out;
}

json polygon_to_json(const std::vector<Vec2>& poly) {
  json out = json::array();
  for (const auto& p : poly) out.push_back(to_json(p));
  return out;
}

template <typename IdT>
json ids_to_json(const std::vector<IdT>& ids) {
  json out = json::array();
  for (const auto id : ids) out.push_back(id.value);
  return out;
}

template <typename IdT>
std::vector<IdT> ids_from_json(const json& j, const std::string& path) {
  detail::array(j, path);
  std::vector<IdT> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.emplace_back(detail::integer(j[i], child(path, i)));
  return out;
}

std::int64_t nonnegative_id(const json& j, const std::string& path) {
  const std::int64_t v = detail::integer(j, path);
  if (v < 0) throw ParseError(path, "ids must be nonnegative");
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------------------------------------------
// Scene graph

std::string graph_to_json(const SceneGraph& g) {
  json j;
  j["sequence_id"] = g.sequence_id;
  j["counters"] = {{"component", g.component_counter()}, {"room", g.room_counter()}};
  j["warnings"] = g.warnings;

  json tomb = json::array();
  for (const auto& [from, to] : g.tombstones) tomb.push_back(json::array({from.value, to.value}));
  j["tombstones"] = std::move(tomb);

  json kfs = json::array();
  for (const auto& [id, kf] : g.keyframes)
    kfs.push_back({{"id", id.value}, {"timestamp", kf.timestamp}, {"pose", detail::pose_to_json(kf.pose)}});
  j["keyframes"] = std::move(kfs);

  json comps = json::array();
  for (const auto& [id, c] : g.components) {
    json obs = json::array();
    for (const auto& o : c.observations) {
      json jo{{"keyframe", o.keyframe.value}, {"plane", detail::plane_to_json(o.local)},
              {"support", points_to_json(o.support)}};
      if (o.extent) jo["extent"] = json::array({to_json(o.extent->first), to_json(o.extent->second)});
      obs.push_back(std::move(jo));
    }
    comps.push_back({{"id", id.value},
                     {"plane", detail::plane_to_json(c.plane)},
                     {"merged_from", ids_to_json(c.merged_from)},
                     {"observations", std::move(obs)}});
  }
  j["components"] = std::move(comps);

  json rooms = json::array();
  for (const auto& [id, r] : g.rooms) {
    json jr{{"id", id.value},
            {"walls", ids_to_json(r.walls)},
            {"ground", r.ground.value},
            {"centroid", to_json(r.centroid)},
            {"cluster", {{"centroid", to_json(r.cluster.centroid)}, {"cells", points_to_json(r.cluster.cells)}}}};
    if (r.ground_observation) jr["ground_observation"] = r.ground_observation->value;
    if (r.label) jr["label"] = *r.label;
    if (r.marker) jr["marker"] = r.marker->value;
    rooms.push_back(std::move(jr));
  }
  j["rooms"] = std::move(rooms);

  if (g.floor) {
    json jf{{"id", g.floor->id.value}, {"rooms", ids_to_json(g.floor->rooms)}, {"centroid", to_json(g.floor->centroid)}};
    if (g.floor->plane) jf["plane"] = g.floor->plane->value;
    j["floor"] = std::move(jf);
  } else {
    j["floor"] = nullptr;
  }

  json markers = json::array();
  for (const auto& [id, m] : g.markers) {
    json sightings = json::array();
    for (const auto& s : m.sightings)
      sightings.push_back({{"keyframe", s.keyframe.value},
                           {"pose", detail::pose_to_json(s.local)},
                           {"information", mat6_to_json(s.information)}});
    json jm{{"id", id.value}, {"pose", detail::pose_to_json(m.pose)}, {"sightings", std::move(sightings)}};
    if (m.room) jm["room"] = m.room->value;
    markers.push_back(std::move(jm));
  }
  j["markers"] = std::move(markers);

  json edges = json::array();
  for (const auto& e : g.edges())
    edges.push_back({{"kind", std::string(to_string(e.kind))}, {"parent", e.parent}, {"child", e.child}});
  j["edges"] = std::move(edges);
  return j.dump(1) + "\n";
}

SceneGraph graph_from_json(const std::string& text) {
  const json j = detail::parse_text(text, "invalid scene-graph JSON");
  const std::string root;
  detail::reject_unknown(j, {"sequence_id", "counters", "warnings", "tombstones", "keyframes", "components", "rooms",
                             "floor", "markers", "edges"},
                         root);
  SceneGraph g;
  if (const json* s = detail::optional(j, "sequence_id", root)) g.sequence_id = detail::string(*s, "/sequence_id");
  if (const json* w = detail::optional(j, "warnings", root)) {
    detail::array(*w, "/warnings");
    for (std::size_t i = 0; i < w->size(); ++i) g.warnings.push_back(detail::string((*w)[i], child("/warnings", i)));
  }

  const json& kfs = detail::array(detail::require(j, "keyframes", root), "/keyframes");
  for (std::size_t i = 0; i < kfs.size(); ++i) {
    const std::string p = child("/keyframes", i);
    detail::reject_unknown(kfs[i], {"id", "timestamp", "pose"}, p);
    MapKeyFrame kf;
    kf.id = KeyFrameId(nonnegative_id(detail::require(kfs[i], "id", p), child(p, "id")));
    kf.timestamp = detail::number(detail::require(kfs[i], "timestamp", p), child(p, "timestamp"));
    kf.pose = detail::pose_from_json(detail::require(kfs[i], "pose", p), child(p, "pose"));
    if (!g.keyframes.emplace(kf.id, kf).second) throw ParseError(child(p, "id"), "duplicate keyframe id");
  }
  const auto need_keyframe = [&](std::int64_t id, const std::string& path) {
    if (!g.keyframes.contains(KeyFrameId(id))) throw ParseError(path, "unknown keyframe " + idx(id));
  };

  const json& comps = detail::array(detail::require(j, "components", root), "/components");
  for (std::size_t i = 0; i < comps.size(); ++i) {
    const std::string p = child("/components", i);
    detail::reject_unknown(comps[i], {"id", "plane", "merged_from", "observations"}, p);
    MapComponent c;
    c.id = ComponentId(nonnegative_id(detail::require(comps[i], "id", p), child(p, "id")));
    c.plane = detail::plane_from_json(detail::require(comps[i], "plane", p), child(p, "plane"));
    if (const json* m = detail::optional(comps[i], "merged_from", p))
      c.merged_from = ids_from_json<ComponentId>(*m, child(p, "merged_from"));
    const std::string op = child(p, "observations");
    const json& obs = detail::array(detail::require(comps[i], "observations", p), op);
    if (obs.empty()) throw ParseError(op, "a component needs at least one observation");
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const std::string q = child(op, k);
      detail::reject_unknown(obs[k], {"keyframe", "plane", "support", "extent"}, q);
      Observation o;
      const std::int64_t kf = detail::integer(detail::require(obs[k], "keyframe", q), child(q, "keyframe"));
      need_keyframe(kf, child(q, "keyframe"));
      o.keyframe = KeyFrameId(kf);
      o.local = detail::plane_from_json(detail::require(obs[k], "plane", q), child(q, "plane"));
      if (o.local.cls != c.plane.cls) throw ParseError(child(q, "plane"), "observation class differs from component");
      if (const json* s = detail::optional(obs[k], "support", q)) o.support = points_from_json(*s, child(q, "support"));
      if (const json* e = detail::optional(obs[k], "extent", q)) {
        const auto pts = points_from_json(*e, child(q, "extent"));
        if (pts.size() != 2) throw ParseError(child(q, "extent"), "expected two points");
        o.extent = std::make_pair(pts[0], pts[1]);
      }
      c.observations.push_back(std::move(o));
    }
    if (!g.components.emplace(c.id, c).second) throw ParseError(child(p, "id"), "duplicate component id");
  }
  const auto need_component = [&](std::int64_t id, SemanticClass cls, const std::string& path) {
    const auto it = g.components.find(ComponentId(id));
    if (it == g.components.end()) throw ParseError(path, "unknown component " + idx(id));
    if (it->second.plane.cls != cls)
      throw ParseError(path, "component " + idx(id) + " is not a " + std::string(to_string(cls)));
  };

  if (const json* t = detail::optional(j, "tombstones", root)) {
    detail::array(*t, "/tombstones");
    for (std::size_t i = 0; i < t->size(); ++i) {
      const std::string p = child("/tombstones", i);
      if (!(*t)[i].is_array() || (*t)[i].size() != 2) throw ParseError(p, "expected [merged_id, survivor_id]");
      const ComponentId from(nonnegative_id((*t)[i][0], child(p, 0)));
      const ComponentId to(nonnegative_id((*t)[i][1], child(p, 1)));
      if (g.components.contains(from)) throw ParseError(child(p, 0), "tombstoned id is still live");
      if (!g.tombstones.emplace(from, to).second) throw ParseError(child(p, 0), "duplicate tombstone");
    }
    for (const auto& [from, to] : g.tombstones)
      if (!g.components.contains(to) && !g.tombstones.contains(to))
        throw ParseError("/tombstones", "tombstone " + idx(from.value) + " points at unknown id " + idx(to.value));
  }

  const json* jm = detail::optional(j, "markers", root);
  if (jm) {
    detail::array(*jm, "/markers");
    for (std::size_t i = 0; i < jm->size(); ++i) {
      const std::string p = child("/markers", i);
      const json& m = (*jm)[i];
      detail::reject_unknown(m, {"id", "pose", "sightings", "room"}, p);
      Marker marker;
      marker.id = MarkerId(nonnegative_id(detail::require(m, "id", p), child(p, "id")));
      marker.pose = detail::pose_from_json(detail::require(m, "pose", p), child(p, "pose"));
      const std::string sp = child(p, "sightings");
      const json& ss = detail::array(detail::require(m, "sightings", p), sp);
      for (std::size_t k = 0; k < ss.size(); ++k) {
        const std::string q = child(sp, k);
        detail::reject_unknown(ss[k], {"keyframe", "pose", "information"}, q);
        MarkerSighting s;
        const std::int64_t kf = detail::integer(detail::require(ss[k], "keyframe", q), child(q, "keyframe"));
        need_keyframe(kf, child(q, "keyframe"));
        s.keyframe = KeyFrameId(kf);
        s.local = detail::pose_from_json(detail::require(ss[k], "pose", q), child(q, "pose"));
        s.information = mat6_from_json(detail::require(ss[k], "information", q), child(q, "information"));
        marker.sightings.push_back(s);
      }
      // Room references are resolved once the rooms are read.
      if (const json* r = detail::optional(m, "room", p)) marker.room = RoomId(detail::integer(*r, child(p, "room")));
      if (!g.markers.emplace(marker.id, marker).second) throw ParseError(child(p, "id"), "duplicate marker id");
    }
  }

  const json& rooms = detail::array(detail::require(j, "rooms", root), "/rooms");
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const std::string p = child("/rooms", i);
    const json& jr = rooms[i];
    detail::reject_unknown(jr, {"id", "walls", "ground", "ground_observation", "centroid", "cluster", "label", "marker"},
                           p);
    Room r;
    r.id = RoomId(nonnegative_id(detail::require(jr, "id", p), child(p, "id")));
    const std::string wp = child(p, "walls");
    r.walls = ids_from_json<ComponentId>(detail::require(jr, "walls", p), wp);
    for (std::size_t k = 0; k < r.walls.size(); ++k) need_component(r.walls[k].value, SemanticClass::Wall, child(wp, k));
    r.ground = ComponentId(detail::integer(detail::require(jr, "ground", p), child(p, "ground")));
    need_component(r.ground.value, SemanticClass::Ground, child(p, "ground"));
    if (const json* o = detail::optional(jr, "ground_observation", p)) {
      const std::int64_t kf = detail::integer(*o, child(p, "ground_observation"));
      need_keyframe(kf, child(p, "ground_observation"));
      r.ground_observation = KeyFrameId(kf);
    }
    r.centroid = detail::vec3(detail::require(jr, "centroid", p), child(p, "centroid"));
    if (const json* c = detail::optional(jr, "cluster", p)) {
      const std::string cp = child(p, "cluster");
      detail::reject_unknown(*c, {"centroid", "cells"}, cp);
      r.cluster.centroid = detail::vec3(detail::require(*c, "centroid", cp), child(cp, "centroid"));
      r.cluster.cells = points_from_json(detail::require(*c, "cells", cp), child(cp, "cells"));
    }
    if (const json* l = detail::optional(jr, "label", p)) r.label = detail::string(*l, child(p, "label"));
    if (const json* m = detail::optional(jr, "marker", p)) {
      const MarkerId mid(detail::integer(*m, child(p, "marker")));
      if (!g.markers.contains(mid)) throw ParseError(child(p, "marker"), "unknown marker " + idx(mid.value));
      r.marker = mid;
    }
    if (!g.rooms.emplace(r.id, r).second) throw ParseError(child(p, "id"), "duplicate room id");
  }
  if (jm)
    for (std::size_t i = 0; i < jm->size(); ++i) {
      const auto& m = g.markers.at(MarkerId((*jm)[i]["id"].get<std::int64_t>()));
      if (m.room && !g.rooms.contains(*m.room))
        throw ParseError(child(child("/markers", i), "room"), "unknown room " + idx(m.room->value));
    }

  const json& jf = detail::require(j, "floor", root);
  if (!jf.is_null()) {
    const std::string p = "/floor";
    detail::reject_unknown(jf, {"id", "rooms", "centroid", "plane"}, p);
    Floor f;
    f.id = FloorId(nonnegative_id(detail::require(jf, "id", p), child(p, "id")));
    f.rooms = ids_from_json<RoomId>(detail::require(jf, "rooms", p), child(p, "rooms"));
    for (std::size_t k = 0; k < f.rooms.size(); ++k)
      if (!g.rooms.contains(f.rooms[k]))
        throw ParseError(child(child(p, "rooms"), k), "unknown room " + idx(f.rooms[k].value));
    f.centroid = detail::vec3(detail::require(jf, "centroid", p), child(p, "centroid"));
    if (const json* pl = detail::optional(jf, "plane", p)) {
      const std::int64_t id = detail::integer(*pl, child(p, "plane"));
      need_component(id, SemanticClass::Ground, child(p, "plane"));
      f.plane = ComponentId(id);
    }
    g.floor = f;
  }

  std::int64_t next_component = 0, next_room = 0;
  for (const auto& [id, c] : g.components) next_component = std::max(next_component, id.value + 1);
  for (const auto& [id, t] : g.tombstones) next_component = std::max(next_component, id.value + 1);
  for (const auto& [id, r] : g.rooms) next_room = std::max(next_room, id.value + 1);
  if (const json* c = detail::optional(j, "counters", root)) {
    detail::reject_unknown(*c, {"component", "room"}, "/counters");
    const std::int64_t cc = detail::integer(detail::require(*c, "component", "/counters"), "/counters/component");
    const std::int64_t rc = detail::integer(detail::require(*c, "room", "/counters"), "/counters/room");
    if (cc < next_component) throw ParseError("/counters/component", "below an id already in use");
    if (rc < next_room) throw ParseError("/counters/room", "below an id already in use");
    next_component = cc;
    next_room = rc;
  }
  g.set_counters(next_component, next_room);

  if (const json* je = detail::optional(j, "edges", root)) {
    detail::array(*je, "/edges");
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < je->size(); ++i) {
      const std::string p = child("/edges", i);
      detail::reject_unknown((*je)[i], {"kind", "parent", "child"}, p);
      Edge e{};
      const std::string kind = detail::string(detail::require((*je)[i], "kind", p), child(p, "kind"));
      try {
        e.kind = parse_edge_kind(kind);
      } catch (const std::invalid_argument&) {
        throw ParseError(child(p, "kind"), "unknown edge kind '" + kind + "'");
      }
      e.parent = detail::integer(detail::require((*je)[i], "parent", p), child(p, "parent"));
      e.child = detail::integer(detail::require((*je)[i], "child", p), child(p, "child"));
      edges.push_back(e);
    }
    std::sort(edges.begin(), edges.end());
    const auto derived = g.edges();
    if (edges != derived) {
      std::vector<Edge> extra, missing;
      std::set_difference(edges.begin(), edges.end(), derived.begin(), derived.end(), std::back_inserter(extra));
      std::set_difference(derived.begin(), derived.end(), edges.begin(), edges.end(), std::back_inserter(missing));
      const Edge& e = extra.empty() ? missing.front() : extra.front();
      throw ParseError("/edges", std::string(extra.empty() ? "missing" : "unexpected") + " edge " +
                                     std::string(to_string(e.kind)) + " " + idx(e.parent) + " -> " + idx(e.child));
    }
  }
  try {
    g.check_integrity();
  } catch (const GraphError& e) {
    throw ParseError("", e.what());
  }
  return g;
}

void save_graph(const SceneGraph& g, const std::filesystem::path& path) { write_text_file(path, graph_to_json(g)); }

SceneGraph load_graph(const std::filesystem::path& path) { return graph_from_json(read_text_file(path)); }

// ---------------------------------------------------------------------------------------------------------------
// DOT / component PLY

std::string graph_to_dot(const SceneGraph& g) {
  std::ostringstream out;
  out << "digraph scene_graph {\n";
  if (!g.keyframes.empty() || !g.components.empty()) out << "  rankdir=TB;\n";
  const auto component_node = [&](std::int64_t id) {
    const auto it = g.components.find(ComponentId(id));
    const bool ground = it != g.components.end() && it->second.plane.cls == SemanticClass::Ground;
    return (ground ? "ground_" : "wall_") + idx(id);
  };
  if (g.floor) out << "  floor_" << g.floor->id.value << " [shape=box, label=\"floor " << g.floor->id.value << "\"];\n";
  for (const auto& [id, r] : g.rooms) {
    out << "  room_" << id.value << " [shape=box, label=\"room " << id.value;
    if (r.label) out << "\\n" << *r.label;
    out << "\"];\n";
  }
  for (const auto& [id, c] : g.components)
    out << "  " << component_node(id.value) << " [label=\"" << to_string(c.plane.cls) << " " << id.value << "\"];\n";
  for (const auto& [id, m] : g.markers)
    out << "  marker_" << id.value << " [shape=diamond, label=\"marker " << id.value << "\"];\n";
  for (const auto& [id, kf] : g.keyframes)
    out << "  kf_" << id.value << " [shape=ellipse, label=\"kf " << id.value << "\"];\n";
  for (const auto& e : g.edges()) {
    out << "  ";
    switch (e.kind) {
      case EdgeKind::FloorRoom: out << "floor_" << e.parent << " -> room_" << e.child; break;
      case EdgeKind::RoomWall:
      case EdgeKind::RoomGround: out << "room_" << e.parent << " -> " << component_node(e.child); break;
      case EdgeKind::RoomMarker: out << "room_" << e.parent << " -> marker_" << e.child; break;
      case EdgeKind::ComponentKeyFrame: out << component_node(e.parent) << " -> kf_" << e.child; break;
      case EdgeKind::MarkerKeyFrame: out << "marker_" << e.parent << " -> kf_" << e.child; break;
    }
    out << ";\n";
  }
  out << "}\n";
  return out.str();
}

void write_components_ply(const SceneGraph& g, std::ostream& out) {
  struct Row {
    Vec3 p;
    std::int64_t id;
  };
  std::vector<Row> rows;
  for (const auto& [id, c] : g.components)
    for (const auto& p : g.component_support_global(c)) rows.push_back({p, id.value});
  out << "ply\nformat ascii 1.0\nelement vertex " << rows.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty int component\nend_header\n";
  for (const auto& r : rows) {
    const auto h = static_cast<std::uint64_t>(r.id + 1) * 0x9E3779B97F4A7C15ULL;
    out << static_cast<float>(r.p.x()) << ' ' << static_cast<float>(r.p.y()) << ' ' << static_cast<float>(r.p.z())
        << ' ' << ((h >> 56) & 0xFF) << ' ' << ((h >> 40) & 0xFF) << ' ' << ((h >> 24) & 0xFF) << ' ' << r.id << '\n';
  }
}

// ---------------------------------------------------------------------------------------------------------------
// Labeled PLY

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

enum class PlyType : std::uint8_t { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType ply_type(const std::string& name) {
  static const std::map<std::string, PlyType> types{
      {"char", PlyType::I8},    {"int8", PlyType::I8},      {"uchar", PlyType::U8},   {"uint8", PlyType::U8},
      {"short", PlyType::I16},  {"int16", PlyType::I16},    {"ushort", PlyType::U16}, {"uint16", PlyType::U16},
      {"int", PlyType::I32},    {"int32", PlyType::I32},    {"uint", PlyType::U32},   {"uint32", PlyType::U32},
      {"float", PlyType::F32},  {"float32", PlyType::F32},  {"double", PlyType::F64}, {"float64", PlyType::F64}};
  const auto it = types.find(name);
  if (it == types.end()) throw std::runtime_error("ply: unsupported property type '" + name + "'");
  return it->second;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8:
    case PlyType::U8: return 1;
    case PlyType::I16:
    case PlyType::U16: return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

double ply_decode(PlyType t, const unsigned char* b) {
  std::uint64_t u = 0;
  for (std::size_t i = ply_size(t); i-- > 0;) u = (u << 8) | b[i];
  switch (t) {
    case PlyType::I8: return static_cast<std::int8_t>(u);
    case PlyType::U8: return static_cast<std::uint8_t>(u);
    case PlyType::I16: return static_cast<std::int16_t>(u);
    case PlyType::U16: return static_cast<std::uint16_t>(u);
    case PlyType::I32: return static_cast<std::int32_t>(u);
    case PlyType::U32: return static_cast<std::uint32_t>(u);
    case PlyType::F32: return std::bit_cast<float>(static_cast<std::uint32_t>(u));
    case PlyType::F64: return std::bit_cast<double>(u);
  }
  return 0.0;
}

}  // namespace

void write_labeled_ply(const LabeledCloud& cloud, std::ostream& out) {
  out << "ply\nformat binary_little_endian 1.0\n";
  if (!cloud.frame_id.empty()) out << "comment frame_id " << cloud.frame_id << "\n";
  out << "element vertex " << cloud.points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty uchar label\nproperty float confidence\n"
         "end_header\n";
  for (const auto& p : cloud.points) {
    put_f32(out, static_cast<float>(p.position.x()));
    put_f32(out, static_cast<float>(p.position.y()));
    put_f32(out, static_cast<float>(p.position.z()));
    out.put(static_cast<char>(p.label));
    put_f32(out, p.confidence);
  }
}

LabeledCloud read_labeled_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw std::runtime_error("ply: missing magic line");
  bool binary = false;
  bool in_vertex = false, seen_vertex = false;
  std::size_t count = 0;
  std::vector<std::pair<std::string, PlyType>> props;
  LabeledCloud cloud;
  while (true) {
    if (!std::getline(in, line)) throw std::runtime_error("ply: header ends before end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw std::runtime_error("ply: unsupported format '" + fmt + "'");
    } else if (word == "comment") {
      std::string key;
      ls >> key;
      if (key == "frame_id") ls >> cloud.frame_id;
    } else if (word == "element") {
      std::string name;
      std::size_t n = 0;
      ls >> name >> n;
      if (!ls) throw std::runtime_error("ply: malformed element line");
      in_vertex = name == "vertex";
      if (in_vertex) {
        count = n;
        seen_vertex = true;
      } else if (!seen_vertex && n > 0) {
        throw std::runtime_error("ply: element '" + name + "' before vertex is not supported");
      }
    } else if (word == "property") {
      std::string type, name;
      ls >> type;
      if (type == "list") throw std::runtime_error("ply: list properties are not supported");
      ls >> name;
      if (in_vertex) props.emplace_back(name, ply_type(type));
    } else if (word != "obj_info" && !word.empty()) {
      throw std::runtime_error("ply: unexpected header line '" + line + "'");
    }
  }
  if (!seen_vertex) throw std::runtime_error("ply: no vertex element");
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < props.size(); ++i) column[props[i].first] = i;
  for (const char* need : {"x", "y", "z", "label", "confidence"})
    if (!column.contains(need)) throw std::runtime_error(std::string("ply: missing vertex property '") + need + "'");

  std::size_t stride = 0;
  std::vector<std::size_t> offset;
  for (const auto& [name, type] : props) {
    offset.push_back(stride);
    stride += ply_size(type);
  }
  std::vector<double> values(props.size());
  std::vector<unsigned char> buf(stride);
  cloud.points.reserve(count);
  for (std::size_t v = 0; v < count; ++v) {
    if (binary) {
      if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(stride)))
        throw std::runtime_error("ply: truncated vertex data at vertex " + std::to_string(v));
      for (std::size_t k = 0; k < props.size(); ++k) values[k] = ply_decode(props[k].second, buf.data() + offset[k]);
    } else {
      for (std::size_t k = 0; k < props.size(); ++k)
        if (!(in >> values[k])) throw std::runtime_error("ply: truncated vertex data at vertex " + std::to_string(v));
    }
    LabeledPoint p;
    p.position = Vec3(values[column["x"]], values[column["y"]], values[column["z"]]);
    const double label = values[column["label"]];
    if (label < 0 || label > 255) throw std::runtime_error("ply: label out of range at vertex " + std::to_string(v));
    p.label = static_cast<std::uint8_t>(label);
    p.confidence = static_cast<float>(values[column["confidence"]]);
    if (!p.position.allFinite()) throw std::runtime_error("ply: non-finite position at vertex " + std::to_string(v));
    cloud.points.push_back(p);
  }
  return cloud;
}

// ---------------------------------------------------------------------------------------------------------------
// Marker database

namespace {

MarkerDatabase marker_db_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object of marker id -> label");
  MarkerDatabase db;
  for (const auto& [key, value] : j.items()) {
    const std::string p = child(path, key);
    int id = 0;
    std::size_t used = 0;
    try {
      id = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || key.empty() || id < 0) throw ParseError(p, "marker ids must be nonnegative integers");
    db[id] = detail::string(value, p);
  }
  return db;
}

json marker_db_to_json(const MarkerDatabase& db) {
  json out = json::object();
  for (const auto& [id, label] : db) out[std::to_string(id)] = label;
  return out;
}

json classes_to_json(const ClassTable& t) {
  json out = json::object();
  for (const auto& [id, name] : t.names()) out[std::to_string(id)] = name;
  return out;
}

ClassTable classes_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object of label id -> class name");
  std::map<std::uint8_t, std::string> names;
  for (const auto& [key, value] : j.items()) {
    const std::string p = child(path, key);
    int id = -1;
    std::size_t used = 0;
    try {
      id = std::stoi(key, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != key.size() || id < 0 || id > 255) throw ParseError(p, "label ids must be integers in [0, 255]");
    names[static_cast<std::uint8_t>(id)] = detail::string(value, p);
  }
  return ClassTable(std::move(names));
}

}  // namespace

MarkerDatabase parse_marker_db(const std::string& text) {
  return marker_db_from_json(detail::parse_text(text, "invalid marker database JSON"), "");
}

std::string dump_marker_db(const MarkerDatabase& db) { return marker_db_to_json(db).dump(2) + "\n"; }

// ---------------------------------------------------------------------------------------------------------------
// Ground truth

std::string ground_truth_to_json(const GroundTruth& t) {
  json j;
  j["world"] = t.world;
  j["sequence_id"] = t.sequence_id;
  const EntityCounts c = t.counts();
  j["counts"] = {{"walls", c.walls}, {"grounds", c.grounds}, {"rooms", c.rooms}, {"floors", c.floors}};
  json walls = json::array();
  for (const auto& w : t.walls) {
    json gaps = json::array();
    for (const auto& [s0, s1] : w.gaps) gaps.push_back(json::array({s0, s1}));
    walls.push_back({{"id", w.id},
                     {"room", w.room},
                     {"a", to_json(w.a)},
                     {"b", to_json(w.b)},
                     {"height", w.height},
                     {"plane", detail::plane_to_json(w.plane)},
                     {"gaps", std::move(gaps)}});
  }
  j["walls"] = std::move(walls);
  json grounds = json::array();
  for (const auto& g : t.grounds) {
    json fps = json::array();
    for (const auto& f : g.footprints) fps.push_back(polygon_to_json(f));
    grounds.push_back({{"id", g.id}, {"plane", detail::plane_to_json(g.plane)}, {"footprints", std::move(fps)}});
  }
  j["grounds"] = std::move(grounds);
  json rooms = json::array();
  for (const auto& r : t.rooms) {
    json walls_of = json::array();
    for (const auto w : r.walls) walls_of.push_back(w);
    rooms.push_back({{"id", r.id},
                     {"name", r.name},
                     {"walls", std::move(walls_of)},
                     {"centroid", to_json(r.centroid)},
                     {"polygon", polygon_to_json(r.polygon)}});
  }
  j["rooms"] = std::move(rooms);
  json floors = json::array();
  for (const auto& f : t.floors) floors.push_back({{"id", f.id}, {"centroid", to_json(f.centroid)}});
  j["floors"] = std::move(floors);
  json markers = json::array();
  for (const auto& m : t.markers)
    markers.push_back({{"id", m.id}, {"pose", detail::pose_to_json(m.pose)}, {"room", m.room}, {"label", m.label}});
  j["markers"] = std::move(markers);
  json traj = json::array();
  for (const auto& p : t.trajectory)
    traj.push_back({{"keyframe", p.keyframe}, {"timestamp", p.timestamp}, {"pose", detail::pose_to_json(p.pose)}});
  j["trajectory"] = std::move(traj);
  return j.dump(1) + "\n";
}

GroundTruth ground_truth_from_json(const std::string& text) {
  const json j = detail::parse_text(text, "invalid ground-truth JSON");
  const std::string root;
  detail::reject_unknown(j, {"world", "sequence_id", "counts", "walls", "grounds", "rooms", "floors", "markers",
                             "trajectory"},
                         root);
  GroundTruth t;
  t.world = detail::string(detail::require(j, "world", root), "/world");
  if (const json* s = detail::optional(j, "sequence_id", root)) t.sequence_id = detail::string(*s, "/sequence_id");

  const json& walls = detail::array(detail::require(j, "walls", root), "/walls");
  for (std::size_t i = 0; i < walls.size(); ++i) {
    const std::string p = child("/walls", i);
    detail::reject_unknown(walls[i], {"id", "room", "a", "b", "height", "plane", "gaps"}, p);
    TruthWall w;
    w.id = detail::integer(detail::require(walls[i], "id", p), child(p, "id"));
    w.room = detail::string(detail::require(walls[i], "room", p), child(p, "room"));
    w.a = detail::vec2(detail::require(walls[i], "a", p), child(p, "a"));
    w.b = detail::vec2(detail::require(walls[i], "b", p), child(p, "b"));
    w.height = detail::number(detail::require(walls[i], "height", p), child(p, "height"));
    w.plane = detail::plane_from_json(detail::require(walls[i], "plane", p), child(p, "plane"));
    const std::string gp = child(p, "gaps");
    const json& gaps = detail::array(detail::require(walls[i], "gaps", p), gp);
    for (std::size_t k = 0; k < gaps.size(); ++k) {
      const Vec2 g = detail::vec2(gaps[k], child(gp, k));
      w.gaps.emplace_back(g.x(), g.y());
    }
    t.walls.push_back(std::move(w));
  }
  const json& grounds = detail::array(detail::require(j, "grounds", root), "/grounds");
  for (std::size_t i = 0; i < grounds.size(); ++i) {
    const std::string p = child("/grounds", i);
    detail::reject_unknown(grounds[i], {"id", "plane", "footprints"}, p);
    TruthGround g;
    g.id = detail::integer(detail::require(grounds[i], "id", p), child(p, "id"));
    g.plane = detail::plane_from_json(detail::require(grounds[i], "plane", p), child(p, "plane"));
    const std::string fp = child(p, "footprints");
    const json& fps = detail::array(detail::require(grounds[i], "footprints", p), fp);
    for (std::size_t k = 0; k < fps.size(); ++k) g.footprints.push_back(polygon_from_json(fps[k], child(fp, k)));
    t.grounds.push_back(std::move(g));
  }
  const json& rooms = detail::array(detail::require(j, "rooms", root), "/rooms");
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const std::string p = child("/rooms", i);
    detail::reject_unknown(rooms[i], {"id", "name", "walls", "centroid", "polygon"}, p);
    TruthRoom r;
    r.id = detail::integer(detail::require(rooms[i], "id", p), child(p, "id"));
    r.name = detail::string(detail::require(rooms[i], "name", p), child(p, "name"));
    const std::string wp = child(p, "walls");
    const json& ws = detail::array(detail::require(rooms[i], "walls", p), wp);
    for (std::size_t k = 0; k < ws.size(); ++k) {
      const std::int64_t id = detail::integer(ws[k], child(wp, k));
      if (std::none_of(t.walls.begin(), t.walls.end(), [&](const TruthWall& w) { return w.id == id; }))
        throw ParseError(child(wp, k), "unknown wall " + idx(id));
      r.walls.push_back(id);
    }
    r.centroid = detail::vec3(detail::require(rooms[i], "centroid", p), child(p, "centroid"));
    r.polygon = polygon_from_json(detail::require(rooms[i], "polygon", p), child(p, "polygon"));
    t.rooms.push_back(std::move(r));
  }
  const json& floors = detail::array(detail::require(j, "floors", root), "/floors");
  for (std::size_t i = 0; i < floors.size(); ++i) {
    const std::string p = child("/floors", i);
    detail::reject_unknown(floors[i], {"id", "centroid"}, p);
    TruthFloor f;
    f.id = detail::integer(detail::require(floors[i], "id", p), child(p, "id"));
    f.centroid = detail::vec3(detail::require(floors[i], "centroid", p), child(p, "centroid"));
    t.floors.push_back(f);
  }
  if (const json* ms = detail::optional(j, "markers", root)) {
    detail::array(*ms, "/markers");
    for (std::size_t i = 0; i < ms->size(); ++i) {
      const std::string p = child("/markers", i);
      const json& m = (*ms)[i];
      detail::reject_unknown(m, {"id", "pose", "room", "label"}, p);
      TruthMarker tm;
      tm.id = static_cast<int>(detail::integer(detail::require(m, "id", p), child(p, "id")));
      tm.pose = detail::pose_from_json(detail::require(m, "pose", p), child(p, "pose"));
      tm.room = detail::string(detail::require(m, "room", p), child(p, "room"));
      tm.label = detail::string(detail::require(m, "label", p), child(p, "label"));
      t.markers.push_back(std::move(tm));
    }
  }
  if (const json* tr = detail::optional(j, "trajectory", root)) {
    detail::array(*tr, "/trajectory");
    for (std::size_t i = 0; i < tr->size(); ++i) {
      const std::string p = child("/trajectory", i);
      detail::reject_unknown((*tr)[i], {"keyframe", "timestamp", "pose"}, p);
      TruthPose tp;
      tp.keyframe = detail::integer(detail::require((*tr)[i], "keyframe", p), child(p, "keyframe"));
      tp.timestamp = detail::number(detail::require((*tr)[i], "timestamp", p), child(p, "timestamp"));
      tp.pose = detail::pose_from_json(detail::require((*tr)[i], "pose", p), child(p, "pose"));
      t.trajectory.push_back(tp);
    }
  }
  if (const json* c = detail::optional(j, "counts", root)) {
    const std::string p = "/counts";
    detail::reject_unknown(*c, {"walls", "grounds", "rooms", "floors"}, p);
    EntityCounts stated;
    stated.walls = static_cast<int>(detail::integer(detail::require(*c, "walls", p), "/counts/walls"));
    stated.grounds = static_cast<int>(detail::integer(detail::require(*c, "grounds", p), "/counts/grounds"));
    stated.rooms = static_cast<int>(detail::integer(detail::require(*c, "rooms", p), "/counts/rooms"));
    stated.floors = static_cast<int>(detail::integer(detail::require(*c, "floors", p), "/counts/floors"));
    if (!(stated == t.counts())) throw ParseError(p, "counts disagree with the listed entities");
  }
  return t;
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
  return ground_truth_from_json(read_text_file(path));
}

// ---------------------------------------------------------------------------------------------------------------
// Sequence directories

namespace {

std::string cloud_file(std::int64_t id) {
  std::ostringstream s;
  s << "kf_" << std::setw(5) << std::setfill('0') << id << ".ply";
  return s.str();
}

}  // namespace

void write_sequence(const std::filesystem::path& dir, const Sequence& seq, const GroundTruth& truth) {
  std::filesystem::create_directories(dir);
  std::map<std::int64_t, const TruthPose*> true_pose;
  for (const auto& tp : truth.trajectory) true_pose[tp.keyframe] = &tp;

  json j;
  j["sequence_id"] = seq.id;
  j["classes"] = classes_to_json(seq.classes);
  j["markers"] = marker_db_to_json(seq.markers);
  j["warnings"] = seq.warnings;
  j["ground_truth"] = "ground_truth.json";
  json kfs = json::array();
  for (const auto& kf : seq.keyframes) {
    const std::string file = cloud_file(kf.id);
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    write_labeled_ply(kf.cloud, out);
    if (!out) throw std::runtime_error("failed writing " + (dir / file).string());

    json markers = json::array();
    for (const auto& m : kf.markers)
      markers.push_back(
          {{"id", m.tag_id}, {"pose", detail::pose_to_json(m.local)}, {"information", mat6_to_json(m.information)}});
    json jk{{"id", kf.id},
            {"timestamp", kf.timestamp},
            {"pose", detail::pose_to_json(kf.pose)},
            {"cloud", file},
            {"markers", std::move(markers)}};
    if (const auto it = true_pose.find(kf.id); it != true_pose.end())
      jk["true_pose"] = detail::pose_to_json(it->second->pose);
    kfs.push_back(std::move(jk));
  }
  j["keyframes"] = std::move(kfs);
  json odo = json::array();
  for (const auto& o : seq.odometry)
    odo.push_back({{"from", o.from.value}, {"to", o.to.value}, {"relative", detail::pose_to_json(o.relative)}});
  j["odometry"] = std::move(odo);

  write_text_file(dir / "manifest.json", j.dump(1) + "\n");
  write_text_file(dir / "ground_truth.json", ground_truth_to_json(truth));
}

Sequence read_sequence(const std::filesystem::path& dir, bool with_clouds) {
  const json j = detail::parse_text(read_text_file(dir / "manifest.json"), "invalid manifest JSON");
  const std::string root;
  detail::reject_unknown(j, {"sequence_id", "classes", "markers", "warnings", "ground_truth", "keyframes", "odometry"},
                         root);
  Sequence seq;
  seq.id = detail::string(detail::require(j, "sequence_id", root), "/sequence_id");
  seq.classes = classes_from_json(detail::require(j, "classes", root), "/classes");
  if (const json* m = detail::optional(j, "markers", root)) seq.markers = marker_db_from_json(*m, "/markers");
  if (const json* w = detail::optional(j, "warnings", root)) {
    detail::array(*w, "/warnings");
    for (std::size_t i = 0; i < w->size(); ++i) seq.warnings.push_back(detail::string((*w)[i], child("/warnings", i)));
  }
  if (const json* g = detail::optional(j, "ground_truth", root)) detail::string(*g, "/ground_truth");

  const json& kfs = detail::array(detail::require(j, "keyframes", root), "/keyframes");
  std::set<std::int64_t> ids;
  for (std::size_t i = 0; i < kfs.size(); ++i) {
    const std::string p = child("/keyframes", i);
    detail::reject_unknown(kfs[i], {"id", "timestamp", "pose", "true_pose", "cloud", "markers"}, p);
    KeyFrame kf;
    kf.id = nonnegative_id(detail::require(kfs[i], "id", p), child(p, "id"));
    if (!ids.insert(kf.id).second) throw ParseError(child(p, "id"), "duplicate keyframe id");
    kf.timestamp = detail::number(detail::require(kfs[i], "timestamp", p), child(p, "timestamp"));
    kf.pose = detail::pose_from_json(detail::require(kfs[i], "pose", p), child(p, "pose"));
    if (const json* tp = detail::optional(kfs[i], "true_pose", p)) detail::pose_from_json(*tp, child(p, "true_pose"));
    if (const json* ms = detail::optional(kfs[i], "markers", p)) {
      const std::string mp = child(p, "markers");
      detail::array(*ms, mp);
      for (std::size_t k = 0; k < ms->size(); ++k) {
        const std::string q = child(mp, k);
        detail::reject_unknown((*ms)[k], {"id", "pose", "information"}, q);
        MarkerObservation o;
        o.tag_id = static_cast<int>(nonnegative_id(detail::require((*ms)[k], "id", q), child(q, "id")));
        o.local = detail::pose_from_json(detail::require((*ms)[k], "pose", q), child(q, "pose"));
        o.information = mat6_from_json(detail::require((*ms)[k], "information", q), child(q, "information"));
        kf.markers.push_back(o);
      }
    }
    const std::string file = detail::string(detail::require(kfs[i], "cloud", p), child(p, "cloud"));
    if (!with_clouds) {
      seq.keyframes.push_back(std::move(kf));
      continue;
    }
    try {
      std::ifstream in(dir / file, std::ios::binary);
      if (!in) throw std::runtime_error("cannot open " + (dir / file).string());
      kf.cloud = read_labeled_ply(in);
    } catch (const std::runtime_error& e) {
      seq.warnings.push_back("keyframe " + idx(kf.id) + " skipped: " + e.what());
      continue;
    }
    if (kf.cloud.frame_id.empty()) kf.cloud.frame_id = "kf_" + idx(kf.id);
    seq.keyframes.push_back(std::move(kf));
  }
  std::sort(seq.keyframes.begin(), seq.keyframes.end(),
            [](const KeyFrame& a, const KeyFrame& b) { return a.id < b.id; });

  if (const json* odo = detail::optional(j, "odometry", root)) {
    detail::array(*odo, "/odometry");
    for (std::size_t i = 0; i < odo->size(); ++i) {
      const std::string p = child("/odometry", i);
      detail::reject_unknown((*odo)[i], {"from", "to", "relative"}, p);
      OdometryMeasurement o;
      o.from = KeyFrameId(detail::integer(detail::require((*odo)[i], "from", p), child(p, "from")));
      o.to = KeyFrameId(detail::integer(detail::require((*odo)[i], "to", p), child(p, "to")));
      if (!ids.contains(o.from.value)) throw ParseError(child(p, "from"), "unknown keyframe " + idx(o.from.value));
      if (!ids.contains(o.to.value)) throw ParseError(child(p, "to"), "unknown keyframe " + idx(o.to.value));
      o.relative = detail::pose_from_json(detail::require((*odo)[i], "relative", p), child(p, "relative"));
      seq.odometry.push_back(o);
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace structmap
