#include "structmap/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace structmap {

std::string_view to_string(SemanticClass cls) {
  switch (cls) {
    case SemanticClass::Wall:
      return "wall";
    case SemanticClass::Ground:
      return "ground";
  }
  return "unknown";
}

std::string_view to_string(StructuralClass cls) {
  switch (cls) {
    case StructuralClass::Room:
      return "room";
    case StructuralClass::Floor:
      return "floor";
  }
  return "unknown";
}

SemanticClass parse_semantic_class(std::string_view name) {
  if (name == "wall") return SemanticClass::Wall;
  if (name == "ground") return SemanticClass::Ground;
  throw std::invalid_argument("unknown building class '" + std::string(name) + "'");
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

Pose Pose::from_yaw(double angle, const Vec3& t) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
  p.translation = t;
  return p;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  return ortho <= tol && rotation.determinant() > 0.0;
}

Pose compose(const Pose& a, const Pose& b) { return b * a; }

Pose inverse_compose(const Pose& a, const Pose& b) { return b.inverse() * a; }

Plane Plane::flipped() const {
  Plane p = *this;
  p.normal = -normal;
  p.offset = -offset;
  return p;
}

Plane transform_plane(const Pose& pose, const Plane& local) {
  Plane out = local;
  out.normal = (pose.rotation * local.normal).normalized();
  out.offset = local.offset - out.normal.dot(pose.translation);
  out.centroid = pose * local.centroid;
  return out;
}

double point_plane_distance(const Vec3& p, const Plane& plane) { return plane.signed_distance(p); }

double angle_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::domain_error("angle_between: zero-length vector");
  const double c = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  return std::acos(c);
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& r) {
  const double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Vec3 vee{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  if (theta < 1e-8) return 0.5 * vee;
  if (M_PI - theta < 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from the symmetric part.
    const Mat3 b = 0.5 * (r + Mat3::Identity());
    Eigen::Index k = 0;
    b.diagonal().maxCoeff(&k);
    Vec3 axis = b.col(k) / std::sqrt(std::max(b(k, k), 1e-300));
    axis.normalize();
    if (axis.dot(vee) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * vee;
}

Mat3 so3_right_jacobian_inverse(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 k = skew(phi);
  if (theta < 1e-6) return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  const double coef =
      1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * k + coef * k * k;
}

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

Vec6 pose_log(const Pose& pose) {
  Vec6 out;
  out.head<3>() = so3_log(pose.rotation);
  out.tail<3>() = pose.translation;
  return out;
}

Mat32 tangent_basis(const Vec3& n) {
  // Pick the axis least aligned with n so the cross product is well conditioned.
  Eigen::Index axis = 0;
  n.cwiseAbs().minCoeff(&axis);
  const Vec3 helper = Vec3::Unit(axis);
  const Vec3 b1 = n.cross(helper).normalized();
  const Vec3 b2 = n.cross(b1).normalized();
  Mat32 basis;
  basis.col(0) = b1;
  basis.col(1) = b2;
  return basis;
}

}  // namespace structmap
