#include "structmap/recognition.hpp"
#include "structmap/synthetic.hpp"
#include "support.hpp"

#include <doctest.h>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <tuple>

using namespace structmap;
using namespace testsupport;

namespace {

// Independent SVD fit: the right singular vector of the centered points with the smallest singular value.
Plane svd_plane(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::MatrixXd a(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) a.row(static_cast<Eigen::Index>(i)) = (pts[i] - c).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
  Plane p;
  p.normal = svd.matrixV().col(2);
  p.offset = -p.normal.dot(c);
  p.centroid = c;
  return p;
}

double normal_error_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::min(1.0, std::abs(a.dot(b)))) * 180.0 / M_PI;
}

double offset_error(const Plane& a, const Plane& b) {
  return a.normal.dot(b.normal) >= 0.0 ? std::abs(a.offset - b.offset) : std::abs(a.offset + b.offset);
}

std::vector<Vec3> noisy_rect(std::mt19937_64& rng, const Vec3& origin, const Vec3& u, const Vec3& v, int n,
                             double sigma) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, sigma);
  const Vec3 normal = u.cross(v).normalized();
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.push_back(origin + u01(rng) * u + u01(rng) * v + noise(rng) * normal);
  return out;
}

Plane tilted_wall(double tilt_deg) {
  Plane p;
  p.cls = SemanticClass::Wall;
  p.normal = Eigen::AngleAxisd(tilt_deg * M_PI / 180.0, Vec3::UnitY()) * Vec3::UnitX();
  return p;
}

// A 10 x 10 m room; a level camera 4 m in front of the east wall sees that wall and the ground only.
struct WallScene {
  WorldSpec spec;
  GroundTruth truth;
  RenderConfig render;
  Pose pose;

  WallScene() {
    spec.name = "one-wall";
    spec.rooms.push_back({"room", {{0, 0}, {10, 0}, {10, 10}, {0, 10}}, {}});
    spec.trajectory.waypoints = {{{5, 5}, 0.0}};
    truth = generate_world(spec);
    render.noise = NoiseModel::noiseless();
    render.camera.pitch = 0.0;
    render.seed = 3;
    pose = Pose::from_translation({6.0, 5.0, render.camera.height});
  }
};

}  // namespace

TEST_CASE("semantic_filter") {
  const ClassTable classes = ClassTable::standard();
  LabeledCloud cloud;
  SUBCASE("no wall points") {
    cloud.points.push_back({{1, 0, 0}, 2, 0.9F});
    const auto out = semantic_filter(cloud, classes, 0.5);
    CHECK(out.count(SemanticClass::Wall) == 0);
    CHECK(out.at(SemanticClass::Ground).size() == 1);
  }
  SUBCASE("furniture is dropped") {
    for (int i = 0; i < 10; ++i) cloud.points.push_back({{1.0 * i, 0, 0}, 1, 0.9F});
    for (int i = 0; i < 5; ++i) cloud.points.push_back({{0, 1.0 * i, 0}, 3, 0.9F});
    const auto out = semantic_filter(cloud, classes, 0.5);
    CHECK(out.at(SemanticClass::Wall).size() == 10);
    CHECK(out.count(SemanticClass::Ground) == 0);
  }
  SUBCASE("confidence threshold matches a linear scan") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> label(0, 4);
    std::uniform_real_distribution<float> conf(0.3F, 0.7F);
    for (int i = 0; i < 2000; ++i)
      cloud.points.push_back({random_vec(rng), static_cast<std::uint8_t>(label(rng)), conf(rng)});
    cloud.points.push_back({{0, 0, 0}, 1, 0.5F});
    const auto out = semantic_filter(cloud, classes, 0.5);
    std::vector<Vec3> walls, grounds;
    for (const auto& p : cloud.points) {
      if (p.confidence < 0.5F) continue;
      if (p.label == 1) walls.push_back(p.position);
      if (p.label == 2) grounds.push_back(p.position);
    }
    REQUIRE(out.at(SemanticClass::Wall).size() == walls.size());
    REQUIRE(out.at(SemanticClass::Ground).size() == grounds.size());
    for (std::size_t i = 0; i < walls.size(); ++i) CHECK(out.at(SemanticClass::Wall)[i] == walls[i]);
    for (std::size_t i = 0; i < grounds.size(); ++i) CHECK(out.at(SemanticClass::Ground)[i] == grounds[i]);
  }
}

TEST_CASE("class table") {
  const ClassTable t = ClassTable::standard();
  CHECK(t.building_class(1) == SemanticClass::Wall);
  CHECK(t.building_class(2) == SemanticClass::Ground);
  CHECK_FALSE(t.building_class(3).has_value());
  CHECK(t.label_of("furniture") == std::uint8_t{3});
  CHECK_FALSE(t.label_of("door").has_value());
}

TEST_CASE("voxel_downsample") {
  CHECK(voxel_downsample({{0.3, 0.2, 0.1}}, 0.05) == std::vector<Vec3>{{0.3, 0.2, 0.1}});

  const Vec3 a(0.011, 0.012, 0.013), b(0.012, 0.012, 0.013);
  const auto two = voxel_downsample({a, b}, 0.05);
  REQUIRE(two.size() == 1);
  CHECK((two[0] - 0.5 * (a + b)).norm() <= 1e-15);

  // 10 x 10 x 10 grid at 0.1 spacing, offset so no point sits on a voxel boundary.
  std::vector<Vec3> grid;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      for (int k = 0; k < 10; ++k) grid.emplace_back(0.1 * i + 0.013, 0.1 * j + 0.027, 0.1 * k + 0.041);
  const double leaf = 0.2;
  std::set<std::tuple<long, long, long>> occupied;
  for (const auto& p : grid)
    occupied.emplace(std::lround(std::floor(p.x() / leaf)), std::lround(std::floor(p.y() / leaf)),
                     std::lround(std::floor(p.z() / leaf)));
  const auto down = voxel_downsample(grid, leaf);
  CHECK(down.size() == occupied.size());

  std::mt19937_64 rng(12);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 3000; ++i) cloud.push_back(random_vec(rng, 2.0));
  Vec3 lo = cloud[0], hi = cloud[0];
  for (const auto& p : cloud) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  for (const auto& p : voxel_downsample(cloud, 0.3)) {
    CHECK((p.array() >= lo.array() - 1e-12).all());
    CHECK((p.array() <= hi.array() + 1e-12).all());
  }
}

TEST_CASE("range_filter") {
  const std::vector<Vec3> inside{{1, 0, 0}, {0, 2, 0}, {0, 0, 3}};
  CHECK(range_filter(inside, 0.3, 5.0) == inside);
  CHECK(range_filter({{5.0, 0, 0}, {0.3, 0, 0}}, 0.3, 5.0).size() == 2);
  CHECK(range_filter({{5.0 + 1e-9, 0, 0}, {0.3 - 1e-9, 0, 0}}, 0.3, 5.0).empty());

  std::mt19937_64 rng(13);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 2000; ++i) cloud.push_back(random_vec(rng, 6.0));
  std::vector<Vec3> expected;
  for (const auto& p : cloud)
    if (p.norm() >= 0.3 && p.norm() <= 5.0) expected.push_back(p);
  CHECK(range_filter(cloud, 0.3, 5.0) == expected);
}

TEST_CASE("least-squares plane fit agrees with the SVD oracle") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 r = random_rotation(rng);
    const auto pts = noisy_rect(rng, random_vec(rng, 3.0), r.col(0) * 2.0, r.col(1) * 1.5, 200, 0.01);
    const Plane fit = fit_plane_least_squares(pts);
    const Plane oracle = svd_plane(pts);
    CHECK(normal_error_deg(fit.normal, oracle.normal) <= 1e-6);
    CHECK(offset_error(fit, oracle) <= 1e-9);
    CHECK((fit.centroid - oracle.centroid).norm() <= 1e-12);
  }
}

TEST_CASE("RANSAC on an exact plane") {
  std::vector<Vec3> pts;
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 20; ++j) pts.emplace_back(0.05 * i, 0.05 * j, 0.0);
  const RecognitionConfig cfg;
  const auto fits = fit_planes_ransac(pts, cfg, 1);
  REQUIRE(fits.size() == 1);
  CHECK(std::abs(std::abs(fits[0].plane.normal.z()) - 1.0) <= 1e-12);
  CHECK(std::abs(fits[0].plane.offset) <= 1e-9);
  CHECK(fits[0].inliers.size() == 500);
  CHECK(fits[0].plane.inlier_count == 500);
}

TEST_CASE("RANSAC separates two orthogonal noisy walls") {
  std::mt19937_64 rng(15);
  const auto wall_a = noisy_rect(rng, {0, 0, 0}, {1.5, 0, 0}, {0, 0, 1.5}, 300, 0.005);
  const auto wall_b = noisy_rect(rng, {0, 0.1, 0}, {0, 1.5, 0}, {0, 0, 1.5}, 300, 0.005);
  std::vector<Vec3> pts = wall_a;
  pts.insert(pts.end(), wall_b.begin(), wall_b.end());

  RecognitionConfig cfg;
  cfg.ransac_inlier_tol = 0.02;
  const auto fits = fit_planes_ransac(pts, cfg, 5);
  REQUIRE(fits.size() == 2);
  const Plane oracle_a = svd_plane(wall_a), oracle_b = svd_plane(wall_b);
  for (const auto& fit : fits) {
    const bool is_a = std::abs(fit.plane.normal.y()) > std::abs(fit.plane.normal.x());
    const Plane& oracle = is_a ? oracle_a : oracle_b;
    CHECK(normal_error_deg(fit.plane.normal, oracle.normal) <= 1.0);
    CHECK(normal_error_deg(fit.plane.normal, is_a ? Vec3::UnitY() : Vec3::UnitX()) <= 1.0);
    CHECK(fit.inliers.size() >= 270);
    CHECK(std::abs(fit.plane.normal.norm() - 1.0) <= 1e-12);
    Vec3 c = Vec3::Zero();
    for (const auto i : fit.inliers) c += pts[i];
    CHECK((fit.plane.centroid - c / static_cast<double>(fit.inliers.size())).norm() <= 1e-9);
  }
  std::set<std::size_t> seen;
  for (const auto& fit : fits)
    for (const auto i : fit.inliers) CHECK(seen.insert(i).second);
}

TEST_CASE("RANSAC degenerate inputs") {
  const RecognitionConfig cfg;
  std::mt19937_64 rng(16);
  std::vector<Vec3> cube;
  for (int i = 0; i < 50; ++i) cube.push_back(random_vec(rng, 1.0));
  // 50 points cannot give a plane 100 inliers, whatever the plane.
  CHECK(fit_planes_ransac(cube, cfg, 1).empty());
  CHECK(fit_planes_ransac({{0, 0, 0}, {1, 0, 0}}, cfg, 1).empty());
  std::vector<Vec3> line;
  for (int i = 0; i < 300; ++i) line.emplace_back(0.01 * i, 0.0, 0.0);
  CHECK(fit_planes_ransac(line, cfg, 1).empty());
}

TEST_CASE("RANSAC is reproducible for a fixed seed") {
  std::mt19937_64 rng(17);
  auto pts = noisy_rect(rng, {0, 0, 0}, {2, 0, 0}, {0, 0, 2}, 400, 0.01);
  const auto more = noisy_rect(rng, {0, 0, 0}, {2, 0, 0}, {0, 2, 0}, 400, 0.01);
  pts.insert(pts.end(), more.begin(), more.end());
  const RecognitionConfig cfg;
  const auto a = fit_planes_ransac(pts, cfg, 99), b = fit_planes_ransac(pts, cfg, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].inliers == b[i].inliers);
    CHECK(a[i].plane.normal == b[i].plane.normal);
    CHECK(a[i].plane.offset == b[i].plane.offset);
  }
}

TEST_CASE("validate_components") {
  RecognitionConfig cfg;
  cfg.verticality_tol = 5.0 * M_PI / 180.0;
  Plane wall;
  wall.cls = SemanticClass::Wall;
  wall.normal = Vec3::UnitX();
  Plane flat_wall = wall;
  flat_wall.normal = Vec3::UnitZ();
  CHECK(validate_components({wall}, cfg).size() == 1);
  CHECK(validate_components({flat_wall}, cfg).empty());
  CHECK(validate_components({tilted_wall(4.0)}, cfg).size() == 1);
  CHECK(validate_components({tilted_wall(6.0)}, cfg).empty());

  Plane ground;
  ground.cls = SemanticClass::Ground;
  ground.normal = -Vec3::UnitZ();
  const auto kept = validate_components({ground}, cfg);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].normal.z() > 0.0);
  Plane steep = ground;
  steep.normal = Eigen::AngleAxisd(0.3, Vec3::UnitX()) * Vec3::UnitZ();
  CHECK(validate_components({steep}, cfg).empty());

  std::mt19937_64 rng(18);
  std::vector<Plane> planes;
  for (int i = 0; i < 200; ++i) {
    Plane p;
    p.cls = i % 2 ? SemanticClass::Wall : SemanticClass::Ground;
    p.normal = random_unit(rng);
    planes.push_back(p);
  }
  const auto once = validate_components(planes, cfg);
  const auto twice = validate_components(once, cfg);
  REQUIRE(once.size() == twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].normal == twice[i].normal);
}

TEST_CASE("recognize a wall and the ground") {
  WallScene scene;
  KeyFrame kf = render_view(scene.truth, scene.spec, scene.pose, scene.render, 0);
  REQUIRE_FALSE(kf.cloud.points.empty());
  const RecognitionConfig cfg;

  kf.pose = Pose::identity();
  const auto local = recognize(kf, ClassTable::standard(), cfg, 7);
  REQUIRE(local.size() == 2);
  int walls = 0, grounds = 0;
  for (const auto& p : local) {
    if (p.cls == SemanticClass::Wall) {
      ++walls;
      CHECK(normal_error_deg(p.normal, Vec3::UnitX()) <= 1.0);
      CHECK(p.normal.x() > 0.0);  // away from the camera
      CHECK(std::abs(p.offset + 4.0) <= 0.02);
    } else {
      ++grounds;
      CHECK(p.normal.z() > 0.99);
      CHECK(std::abs(p.offset - scene.render.camera.height) <= 0.02);
    }
  }
  CHECK(walls == 1);
  CHECK(grounds == 1);
  CHECK(kf.detections.size() == 2);

  KeyFrame turned = kf;
  turned.pose = Pose::from_yaw(M_PI / 2.0);
  const auto global = recognize(turned, ClassTable::standard(), cfg, 7);
  REQUIRE(global.size() == local.size());
  for (std::size_t i = 0; i < global.size(); ++i) {
    const Plane expected = transform_plane(turned.pose, local[i]);
    CHECK((global[i].normal - expected.normal).norm() <= 1e-12);
    CHECK(std::abs(global[i].offset - expected.offset) <= 1e-12);
  }
}

TEST_CASE("recognize ignores furniture") {
  KeyFrame kf;
  std::mt19937_64 rng(19);
  for (int i = 0; i < 2000; ++i) kf.cloud.points.push_back({Vec3(2.0, 0.0, 0.0) + random_vec(rng, 0.5), 3, 0.9F});
  CHECK(recognize(kf, ClassTable::standard(), RecognitionConfig{}, 1).empty());
  CHECK(kf.components.empty());
}

TEST_CASE("recognition config validation") {
  RecognitionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.depth_min = 6.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RecognitionConfig{};
  cfg.min_inliers = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
