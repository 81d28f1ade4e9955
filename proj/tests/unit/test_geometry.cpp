#include "structmap/geometry.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

using namespace structmap;
using namespace testsupport;

namespace {

double pose_gap(const Pose& a, const Pose& b) {
  return (homogeneous(a) - homogeneous(b)).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("compose examples") {
  std::mt19937_64 rng(1);
  const Pose p = random_pose(rng);
  CHECK(pose_gap(compose(Pose::identity(), p), p) <= 1e-12);
  CHECK(pose_gap(compose(p, Pose::identity()), p) <= 1e-12);
  CHECK(pose_gap(compose(p, p.inverse()), Pose::identity()) <= 1e-9);
  const Pose c = compose(Pose::from_translation({1, 0, 0}), Pose::from_translation({0, 2, 0}));
  CHECK(pose_gap(c, Pose::from_translation({1, 2, 0})) <= 1e-15);
}

TEST_CASE("compose matches the homogeneous product and is associative") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    const Eigen::Matrix4d expected = homogeneous(b) * homogeneous(a);
    CHECK((homogeneous(compose(a, b)) - expected).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(pose_gap(compose(compose(a, b), c), compose(a, compose(b, c))) <= 1e-9);
    CHECK(compose(a, b).is_valid(1e-9));
  }
}

TEST_CASE("inverse_compose undoes compose") {
  std::mt19937_64 rng(3);
  const Pose p = random_pose(rng);
  CHECK(pose_gap(inverse_compose(p, p), Pose::identity()) <= 1e-12);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    CHECK(pose_gap(compose(inverse_compose(a, b), b), a) <= 1e-9);
    CHECK(pose_gap(inverse_compose(compose(a, b), b), a) <= 1e-9);
  }
}

TEST_CASE("pose helpers") {
  std::mt19937_64 rng(4);
  const Pose p = random_pose(rng);
  CHECK(pose_gap(Pose::from_matrix(p.matrix()), p) <= 1e-15);
  CHECK(pose_gap(p * p.inverse(), Pose::identity()) <= 1e-12);
  const Vec3 x = random_vec(rng);
  CHECK((p * x - (p.rotation * x + p.translation)).norm() <= 1e-15);

  const Pose yaw = Pose::from_yaw(M_PI / 2.0, {1, 2, 3});
  CHECK((yaw * Vec3::UnitX() - Vec3(1, 3, 3)).norm() <= 1e-12);

  Pose bad = p;
  bad.rotation(0, 0) += 1e-3;
  CHECK_FALSE(bad.is_valid());
  bad = p;
  bad.rotation.col(0) *= -1.0;
  CHECK_FALSE(bad.is_valid());
  bad = p;
  bad.translation.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(bad.is_valid());
}

TEST_CASE("transform_plane") {
  Plane local;
  local.normal = Vec3(0.0, 0.6, 0.8);
  local.offset = -1.5;
  local.centroid = local.project(Vec3(1, 1, 1));

  const Plane same = transform_plane(Pose::identity(), local);
  CHECK((same.normal - local.normal).norm() <= 1e-15);
  CHECK(same.offset == doctest::Approx(local.offset).epsilon(1e-15));

  const Vec3 t(0.5, -2.0, 3.0);
  const Plane shifted = transform_plane(Pose::from_translation(t), local);
  CHECK((shifted.normal - local.normal).norm() <= 1e-15);
  CHECK(std::abs(shifted.offset - (local.offset - local.normal.dot(t))) <= 1e-12);
  CHECK((shifted.centroid - (local.centroid + t)).norm() <= 1e-12);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Pose pose = random_pose(rng);
    Plane pl;
    pl.normal = random_unit(rng);
    pl.offset = std::uniform_real_distribution<double>(-3, 3)(rng);
    const Plane g = transform_plane(pose, pl);
    CHECK(std::abs(g.normal.norm() - 1.0) <= 1e-12);
    for (int k = 0; k < 10; ++k) {
      const Vec3 p = random_vec(rng, 4.0);
      CHECK(std::abs(g.signed_distance(pose * p) - pl.signed_distance(p)) <= 1e-9);
    }
  }
}

TEST_CASE("point_plane_distance") {
  Plane z0;
  CHECK(point_plane_distance({5, 5, 0}, z0) == 0.0);
  CHECK(point_plane_distance({5, 5, 2}, z0) == doctest::Approx(2.0));

  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    Plane pl;
    pl.normal = random_unit(rng);
    pl.offset = std::uniform_real_distribution<double>(-3, 3)(rng);
    const Vec3 p = random_vec(rng, 5.0);
    // Oracle: foot of the perpendicular from a known on-plane point, measured along the normal.
    const Vec3 on_plane = -pl.offset * pl.normal;
    const double oracle = (p - on_plane).dot(pl.normal);
    CHECK(std::abs(point_plane_distance(p, pl) - oracle) <= 1e-12);
    CHECK(std::abs(point_plane_distance(pl.project(p), pl)) <= 1e-12);
  }
}

TEST_CASE("angle_between") {
  const Vec3 x = Vec3::UnitX();
  CHECK(angle_between(x, x) == 0.0);
  CHECK(angle_between(x, Vec3::UnitY()) == doctest::Approx(M_PI / 2.0));
  CHECK(angle_between(x, -x) == doctest::Approx(M_PI));
  CHECK_THROWS_AS(angle_between(Vec3::Zero(), x), std::domain_error);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const Vec3 a = random_unit(rng), b = random_unit(rng);
    const double ab = angle_between(a, b);
    CHECK(ab == angle_between(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= M_PI);
    // Nearly identical and nearly opposite vectors can push |dot| past 1 by rounding.
    const Vec3 c = (a + Vec3::Constant(1e-17)).normalized();
    CHECK_FALSE(std::isnan(angle_between(a, c * (1.0 + 1e-16))));
    CHECK_FALSE(std::isnan(angle_between(a, -c * (1.0 + 1e-16))));
  }
}

TEST_CASE("SO(3) helpers") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const Mat3 r = random_rotation(rng, 3.0);
    const Vec3 w = so3_log(r);
    CHECK((w - rotation_vector(r)).norm() <= 1e-9);
    CHECK((so3_exp(w) - r).norm() <= 1e-9);
  }
  CHECK(so3_log(Mat3::Identity()).norm() == 0.0);
  const Mat3 near_pi = Eigen::AngleAxisd(M_PI - 1e-9, Vec3::UnitZ()).toRotationMatrix();
  CHECK(std::abs(so3_log(near_pi).norm() - (M_PI - 1e-9)) <= 1e-6);

  const Vec3 v(1, 2, 3), u(-4, 0.5, 2);
  CHECK((skew(v) * u - v.cross(u)).norm() <= 1e-15);

  Mat3 noisy = random_rotation(rng);
  noisy(0, 1) += 1e-4;
  const Mat3 fixed = orthonormalize(noisy);
  CHECK((fixed.transpose() * fixed - Mat3::Identity()).norm() <= 1e-12);
  CHECK(fixed.determinant() == doctest::Approx(1.0));
}

TEST_CASE("tangent basis is orthonormal and orthogonal to n") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const Vec3 n = random_unit(rng);
    const Mat32 b = tangent_basis(n);
    CHECK((b.transpose() * b - Eigen::Matrix2d::Identity()).norm() <= 1e-12);
    CHECK((b.transpose() * n).norm() <= 1e-12);
  }
  for (const Vec3 n : std::vector<Vec3>{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()}) {
    CHECK((tangent_basis(n).transpose() * n).norm() <= 1e-15);
  }
}

TEST_CASE("semantic class names") {
  CHECK(to_string(SemanticClass::Wall) == "wall");
  CHECK(to_string(SemanticClass::Ground) == "ground");
  CHECK(to_string(StructuralClass::Room) == "room");
  CHECK(to_string(StructuralClass::Floor) == "floor");
  CHECK(parse_semantic_class("ground") == SemanticClass::Ground);
  CHECK_THROWS_AS(parse_semantic_class("room"), std::invalid_argument);
}
