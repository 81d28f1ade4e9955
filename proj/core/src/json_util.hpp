#pragma once

#include "structmap/errors.hpp"
#include "structmap/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace structmap::detail {

using nlohmann::json;

inline std::string child(const std::string& path, const std::string& key) { return path + "/" + key; }
inline std::string child(const std::string& path, std::size_t index) { return path + "/" + std::to_string(index); }

inline const json& require(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(child(path, key), "missing required field");
  return *it;
}

inline const json* optional(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ParseError(child(path, key), "unknown key");
  }
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError(path, "expected a number");
  return j.get<double>();
}

inline std::int64_t integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError(path, "expected an integer");
  return j.get<std::int64_t>();
}

inline bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ParseError(path, "expected true or false");
  return j.get<bool>();
}

inline std::string string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ParseError(path, "expected a string");
  return j.get<std::string>();
}

inline const json& array(const json& j, const std::string& path) {
  if (!j.is_array()) throw ParseError(path, "expected an array");
  return j;
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
    throw ParseError(path, "expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = number(j[static_cast<std::size_t>(i)], child(path, static_cast<std::size_t>(i)));
  return v;
}

inline Vec3 vec3(const json& j, const std::string& path) { return fixed_vector<3>(j, path); }
inline Eigen::Vector2d vec2(const json& j, const std::string& path) { return fixed_vector<2>(j, path); }

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json to_json(const Eigen::Vector2d& v) { return json::array({v.x(), v.y()}); }

/// 4x4 homogeneous matrix as four row arrays.
inline json pose_to_json(const Pose& p) {
  json out = json::array();
  const Eigen::Matrix4d m = p.matrix();
  for (int r = 0; r < 4; ++r) out.push_back(json::array({m(r, 0), m(r, 1), m(r, 2), m(r, 3)}));
  return out;
}

inline Pose pose_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4) throw ParseError(path, "expected a 4x4 array");
  Eigen::Matrix4d m;
  for (std::size_t r = 0; r < 4; ++r) m.row(static_cast<int>(r)) = fixed_vector<4>(j[r], child(path, r)).transpose();
  if (m.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) throw ParseError(child(path, 3), "last row must be 0 0 0 1");
  const Pose p = Pose::from_matrix(m);
  if (!p.is_valid(1e-6)) throw ParseError(path, "not a rigid transform");
  return p;
}

inline json plane_to_json(const Plane& p) {
  return json{{"n", to_json(p.normal)},
              {"d", p.offset},
              {"class", std::string(to_string(p.cls))},
              {"centroid", to_json(p.centroid)},
              {"inliers", p.inlier_count}};
}

inline Plane plane_from_json(const json& j, const std::string& path) {
  reject_unknown(j, {"n", "d", "class", "centroid", "inliers"}, path);
  Plane p;
  p.normal = vec3(require(j, "n", path), child(path, "n"));
  if (std::abs(p.normal.norm() - 1.0) > 1e-6) throw ParseError(child(path, "n"), "normal is not unit length");
  p.offset = number(require(j, "d", path), child(path, "d"));
  const std::string cls = string(require(j, "class", path), child(path, "class"));
  try {
    p.cls = parse_semantic_class(cls);
  } catch (const std::invalid_argument&) {
    throw ParseError(child(path, "class"), "unknown class '" + cls + "'");
  }
  p.centroid = vec3(require(j, "centroid", path), child(path, "centroid"));
  const std::int64_t n = integer(require(j, "inliers", path), child(path, "inliers"));
  if (n < 0) throw ParseError(child(path, "inliers"), "must be nonnegative");
  p.inlier_count = static_cast<std::size_t>(n);
  return p;
}

inline json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("", what + ": " + e.what());
  }
}

}  // namespace structmap::detail
