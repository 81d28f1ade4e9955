#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace structmap {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat32 = Eigen::Matrix<double, 3, 2>;

/// Building-component classes (walls and ground surfaces).
enum class SemanticClass : std::uint8_t { Wall, Ground };

/// Structural-element classes inferred from building components.
enum class StructuralClass : std::uint8_t { Room, Floor };

std::string_view to_string(SemanticClass cls);
std::string_view to_string(StructuralClass cls);
/// Throws std::invalid_argument for names other than "wall" / "ground".
SemanticClass parse_semantic_class(std::string_view name);

inline const Vec3& world_up() {
  static const Vec3 up{0.0, 0.0, 1.0};
  return up;
}

/// Rigid transform. Maps points from the local (child) frame into the parent frame: p_parent = R * p_local + t.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static Pose from_matrix(const Eigen::Matrix4d& m);
  /// Rotation by `angle` radians about the world z axis.
  static Pose from_yaw(double angle, const Vec3& t = Vec3::Zero());

  Eigen::Matrix4d matrix() const;
  Pose inverse() const;
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  /// Plain matrix product: (a * b)(p) = a(b(p)).
  Pose operator*(const Pose& other) const;

  /// True when R^T R = I within `tol` (Frobenius), det(R) > 0 and all entries are finite.
  bool is_valid(double tol = 1e-9) const;
};

/// a ⊞ b: pose `a`, expressed relative to `b`, lifted into b's parent frame. Equals b * a.
Pose compose(const Pose& a, const Pose& b);
/// a ⊟ b: the unique x with compose(x, b) == a, i.e. b^-1 * a.
Pose inverse_compose(const Pose& a, const Pose& b);

/// Infinite plane n·p + offset = 0 with semantic class and inlier support.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  SemanticClass cls = SemanticClass::Wall;
  Vec3 centroid = Vec3::Zero();
  std::size_t inlier_count = 0;

  double signed_distance(const Vec3& p) const { return normal.dot(p) + offset; }
  /// Flips normal and offset; the point set is unchanged.
  Plane flipped() const;
  /// Orthogonal projection of `p` onto the plane.
  Vec3 project(const Vec3& p) const { return p - signed_distance(p) * normal; }
};

/// Expresses a plane given in `pose`'s local frame in the parent frame. Centroid is transformed too.
Plane transform_plane(const Pose& pose, const Plane& local);

/// Signed distance n·p + offset.
double point_plane_distance(const Vec3& p, const Plane& plane);

/// Angle in [0, pi] between two nonzero vectors. Throws std::domain_error on zero length.
double angle_between(const Vec3& a, const Vec3& b);

// SO(3) helpers used by the optimizer and the simulator.
Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& rotation);
/// Inverse of the right Jacobian of SO(3) at `phi`.
Mat3 so3_right_jacobian_inverse(const Vec3& phi);
/// Re-orthonormalizes a nearly orthonormal matrix (closest rotation via SVD).
Mat3 orthonormalize(const Mat3& m);

/// Pose difference as [log(R); t] on SO(3) x R^3.
Vec6 pose_log(const Pose& pose);

/// Deterministic orthonormal basis of the tangent plane of unit vector `n` (columns orthogonal to n).
Mat32 tangent_basis(const Vec3& n);

}  // namespace structmap
