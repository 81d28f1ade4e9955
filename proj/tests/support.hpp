#pragma once

#include "structmap/geometry.hpp"

#include <Eigen/Geometry>

#include <random>

namespace testsupport {

using structmap::Mat3;
using structmap::Pose;
using structmap::Vec3;

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v{n(rng), n(rng), n(rng)};
  return v.normalized();
}

// Rotation built through Eigen's quaternion path, independent of the library's so3_exp.
inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return Eigen::AngleAxisd(a(rng), random_unit(rng)).toRotationMatrix();
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle = 3.0, double trans = 5.0) {
  return {random_rotation(rng, max_angle), random_vec(rng, trans)};
}

// Rotation vector of a rotation matrix via Eigen::AngleAxisd.
inline Vec3 rotation_vector(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

inline Eigen::Matrix4d homogeneous(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation;
  m.topRightCorner<3, 1>() = p.translation;
  return m;
}

}  // namespace testsupport
