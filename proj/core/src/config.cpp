#include "structmap/config.hpp"

#include "json_util.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <stdexcept>

namespace structmap {

using detail::child;
using detail::json;

namespace {

constexpr double kDeg = M_PI / 180.0;

struct Field {
  std::string key;
  std::function<json()> get;
  std::function<void(const json&, const std::string&)> set;
};

Field real(const std::string& key, double& v) {
  return {key, [&v] { return json(v); }, [&v](const json& j, const std::string& p) { v = detail::number(j, p); }};
}

Field degrees(const std::string& key, double& v) {
  return {key + "_deg", [&v] { return json(v / kDeg); },
          [&v](const json& j, const std::string& p) { v = detail::number(j, p) * kDeg; }};
}

Field whole(const std::string& key, int& v) {
  return {key, [&v] { return json(v); },
          [&v](const json& j, const std::string& p) {
            const std::int64_t x = detail::integer(j, p);
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
              throw ParseError(p, "integer out of range");
            v = static_cast<int>(x);
          }};
}

Field flag(const std::string& key, bool& v) {
  return {key, [&v] { return json(v); }, [&v](const json& j, const std::string& p) { v = detail::boolean(j, p); }};
}

Field text(const std::string& key, std::string& v) {
  return {key, [&v] { return json(v); }, [&v](const json& j, const std::string& p) { v = detail::string(j, p); }};
}

Field alignment(Alignment& v) {
  return {"alignment", [&v] { return json(v == Alignment::Rigid ? "rigid" : "yaw"); },
          [&v](const json& j, const std::string& p) {
            const std::string s = detail::string(j, p);
            if (s == "rigid") v = Alignment::Rigid;
            else if (s == "yaw") v = Alignment::YawOnly;
            else throw ParseError(p, "expected \"rigid\" or \"yaw\"");
          }};
}

using Sections = std::vector<std::pair<std::string, std::vector<Field>>>;

Sections sections(RunConfig& c) {
  auto& r = c.recognition;
  auto& a = c.association;
  auto& s = c.structural;
  auto& o = c.optimizer;
  auto& n = c.noise;
  auto& cam = c.camera;
  auto& e = c.evaluation;
  return {
      {"recognition",
       {real("min_confidence", r.min_confidence), real("voxel_leaf", r.voxel_leaf), real("depth_min", r.depth_min),
        real("depth_max", r.depth_max), real("ransac_inlier_tol", r.ransac_inlier_tol),
        whole("ransac_iterations", r.ransac_iterations), whole("min_inliers", r.min_inliers),
        whole("max_planes_per_class", r.max_planes_per_class), real("cluster_tolerance", r.cluster_tolerance),
        degrees("verticality_tol", r.verticality_tol), degrees("horizontality_tol", r.horizontality_tol),
        real("support_leaf", r.support_leaf)}},
      {"association",
       {real("max_centroid_distance", a.max_centroid_distance), degrees("max_normal_angle", a.max_normal_angle),
        flag("sign_agnostic", a.sign_agnostic), real("max_plane_distance", a.max_plane_distance),
        flag("single_ground_level", a.single_ground_level), flag("extent_linkage", a.extent_linkage)}},
      {"structural",
       {real("grid_resolution", s.grid_resolution), real("wall_clearance", s.wall_clearance),
        degrees("ground_angle_tol", s.ground_angle_tol), whole("min_cluster_cells", s.min_cluster_cells),
        real("marker_proximity", s.marker_proximity), real("run_period", s.run_period),
        real("wall_extent_margin", s.wall_extent_margin)}},
      {"optimizer",
       {degrees("odometry_sigma_rot", o.odometry_sigma_rot), real("odometry_sigma_trans", o.odometry_sigma_trans),
        real("plane_information", o.plane_information), real("huber_delta", o.huber_delta),
        degrees("pair_angle_tol", o.pair_angle_tol), flag("structural_factors", o.structural_factors),
        flag("marker_factors", o.marker_factors), whole("refine_rounds", c.refine_rounds)}},
      {"solver",
       {whole("max_iterations", o.solver.max_iterations), real("initial_damping", o.solver.initial_damping),
        real("cost_tolerance", o.solver.cost_tolerance), real("update_tolerance", o.solver.update_tolerance)}},
      {"noise",
       {real("point_sigma", n.point_sigma), real("label_flip_rate", n.label_flip_rate),
        real("confidence_min", n.confidence_min), real("confidence_max", n.confidence_max),
        real("flipped_confidence_min", n.flipped_confidence_min),
        real("flipped_confidence_max", n.flipped_confidence_max), degrees("odometry_sigma_rot", n.odometry_sigma_rot),
        real("odometry_sigma_trans", n.odometry_sigma_trans), degrees("marker_sigma_rot", n.marker_sigma_rot),
        real("marker_sigma_trans", n.marker_sigma_trans)}},
      {"camera",
       {real("height", cam.height), degrees("pitch", cam.pitch), degrees("hfov", cam.hfov), degrees("vfov", cam.vfov),
        real("min_range", cam.min_range), real("max_range", cam.max_range), real("density", cam.density)}},
      {"evaluation",
       {real("wall_distance", e.wall_distance), degrees("wall_angle", e.wall_angle),
        real("ground_distance", e.ground_distance), degrees("ground_angle", e.ground_angle),
        real("room_distance", e.room_distance), real("floor_distance", e.floor_distance), alignment(c.alignment)}},
      {"paths",
       {text("world", c.paths.world), text("sequence", c.paths.sequence), text("graph", c.paths.graph),
        text("marker_db", c.paths.marker_db)}},
  };
}

template <typename Fn>
void checked(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, e.what());
  }
}

RunConfig parse(const json& j) {
  RunConfig c;
  if (!j.is_object()) throw ParseError("", "expected an object");
  auto secs = sections(c);
  for (const auto& [key, value] : j.items()) {
    const std::string p = "/" + key;
    if (key == "seed") {
      const std::int64_t s = detail::integer(value, p);
      if (s < 0) throw ParseError(p, "must be nonnegative");
      c.seed = static_cast<std::uint64_t>(s);
      continue;
    }
    if (key == "threads") {
      const std::int64_t t = detail::integer(value, p);
      if (t < 0 || t > 1024) throw ParseError(p, "must be in [0, 1024]");
      c.threads = static_cast<int>(t);
      continue;
    }
    auto sec = std::find_if(secs.begin(), secs.end(), [&](const auto& s) { return s.first == key; });
    if (sec == secs.end()) throw ParseError(p, "unknown key");
    if (!value.is_object()) throw ParseError(p, "expected an object");
    for (const auto& [fk, fv] : value.items()) {
      auto field = std::find_if(sec->second.begin(), sec->second.end(), [&](const Field& f) { return f.key == fk; });
      if (field == sec->second.end()) throw ParseError(child(p, fk), "unknown key");
      field->set(fv, child(p, fk));
    }
  }
  c.validate();
  return c;
}

}  // namespace

DetectConfig RunConfig::detect() const {
  DetectConfig d;
  d.recognition = recognition;
  d.association = association;
  d.structural = structural;
  d.threads = threads;
  return d;
}

RenderConfig RunConfig::render() const {
  RenderConfig r;
  r.noise = noise;
  r.camera = camera;
  r.seed = seed;
  r.threads = threads;
  return r;
}

void RunConfig::validate() const {
  checked("/recognition", [&] { recognition.validate(); });
  checked("/association", [&] { association.validate(); });
  checked("/structural", [&] { structural.validate(); });
  checked("/optimizer", [&] { optimizer.validate(); });
  if (refine_rounds < 1) throw ParseError("/optimizer/refine_rounds", "must be at least 1");
  checked("/noise", [&] { noise.validate(); });
  checked("/camera", [&] { camera.validate(); });
  checked("/evaluation", [&] { evaluation.validate(); });
}

std::string config_to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  json j;
  j["seed"] = copy.seed;
  j["threads"] = copy.threads;
  for (const auto& [name, fields] : sections(copy)) {
    json s = json::object();
    for (const auto& f : fields) s[f.key] = f.get();
    j[name] = std::move(s);
  }
  return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text) {
  return parse(detail::parse_text(text, "invalid config JSON"));
}

RunConfig load_config(const std::string& document, const std::vector<std::string>& overrides) {
  json j = document.empty() ? json::object() : detail::parse_text(document, "invalid config JSON");
  if (!j.is_object()) throw ParseError("", "expected an object");
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("", "override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &j;
    std::string path;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ParseError(path, "override '" + o + "' has an empty key segment");
      path += "/" + part;
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& next = (*node)[part];
      if (next.is_null()) next = json::object();
      if (!next.is_object()) throw ParseError(path, "not a section");
      node = &next;
      start = dot + 1;
    }
  }
  return parse(j);
}

}  // namespace structmap
