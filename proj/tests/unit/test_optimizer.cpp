#include "factor_samples.hpp"
#include "structmap/optimizer.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace structmap;
using namespace testsupport;

namespace {

Plane vertical_wall(double yaw_deg, const Vec3& through) {
  const double a = yaw_deg * M_PI / 180.0;
  Plane p;
  p.normal = Vec3(std::cos(a), std::sin(a), 0.0);
  p.offset = -p.normal.dot(through);
  p.centroid = through;
  return p;
}

// 4 x 3 room spanning [0,4] x [0,3], outward normals.
SceneGraph rectangle_graph(double yaw_last_deg = 0.0) {
  SceneGraph g;
  const std::vector<Plane> walls{vertical_wall(180.0, {0.0, 1.5, 1.0}), vertical_wall(0.0 + yaw_last_deg, {4.0, 1.5, 1.0}),
                                 vertical_wall(-90.0, {2.0, 0.0, 1.0}), vertical_wall(90.0, {2.0, 3.0, 1.0})};
  Room room;
  room.id = RoomId(0);
  for (const auto& w : walls) {
    const auto id = g.next_component_id();
    g.components[id] = MapComponent{id, w, {}, {}};
    room.walls.push_back(id);
  }
  room.cluster.cells = {{2.0, 1.5, 0.0}};
  room.cluster.centroid = {2.0, 1.5, 0.0};
  room.centroid = {2.0, 1.5, 1.0};
  g.rooms[room.id] = room;
  return g;
}

}  // namespace

TEST_CASE("parallel and perpendicular costs on analytic examples") {
  const Vec3 x = Vec3::UnitX(), y = Vec3::UnitY();
  const Vec3 d45 = Vec3(1.0, 1.0, 0.0).normalized();
  const Vec3 d60(std::cos(M_PI / 3.0), std::sin(M_PI / 3.0), 0.0);
  CHECK(std::abs(parallel_cost(x, x)) <= 1e-12);
  CHECK(std::abs(parallel_cost(x, y) - 1.0) <= 1e-12);
  CHECK(std::abs(parallel_cost(x, d45) - (1.0 - std::sqrt(2.0) / 2.0)) <= 1e-12);
  CHECK(std::abs(perpendicular_cost(x, y)) <= 1e-12);
  CHECK(std::abs(perpendicular_cost(x, x) - 1.0) <= 1e-12);
  CHECK(std::abs(perpendicular_cost(x, d60) - 0.5) <= 1e-12);
}

TEST_CASE("pair costs are bounded, symmetric and sign invariant") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a = random_unit(rng), b = random_unit(rng);
    for (const auto cost : {&parallel_cost, &perpendicular_cost}) {
      const double c = cost(a, b);
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
      CHECK(c == doctest::Approx(cost(b, a)));
      CHECK(c == doctest::Approx(cost(-a, b)));
      CHECK(c == doctest::Approx(cost(a, -b)));
    }
  }
}

TEST_CASE("room centroid and floor costs") {
  CHECK(room_centroid_cost({1.0, 1.0, 0.0}, {{0.0, 0.0, 0.0}, {2.0, 2.0, 0.0}}) == 0.0);
  CHECK(std::abs(room_centroid_cost({2.0, 1.0, 0.0}, {{0.0, 0.0, 0.0}, {2.0, 2.0, 0.0}}) - 1.0) <= 1e-12);
  CHECK_THROWS_AS(room_centroid_cost(Vec3::Zero(), {}), std::domain_error);

  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    std::vector<Vec3> cs;
    const int n = 1 + static_cast<int>(rng() % 6);
    double sx = 0, sy = 0, sz = 0;
    for (int k = 0; k < n; ++k) {
      cs.push_back(random_vec(rng, 5.0));
      sx += cs.back().x();
      sy += cs.back().y();
      sz += cs.back().z();
    }
    const Vec3 v = random_vec(rng, 5.0);
    const double dx = v.x() - sx / n, dy = v.y() - sy / n, dz = v.z() - sz / n;
    CHECK(std::abs(room_centroid_cost(v, cs) - (dx * dx + dy * dy + dz * dz)) <= 1e-12);
  }

  const std::vector<Vec3> rooms{{0.0, 0.0, 0.0}, {4.0, 0.0, 0.0}};
  CHECK(floor_cost({2.0, 0.0, 0.0}, rooms) == 0.0);
  CHECK(std::abs(floor_cost({2.0, 3.0, 0.0}, rooms) - 9.0) <= 1e-12);
  Mat3 lambda = Mat3::Identity();
  lambda(0, 0) = 2.0;
  CHECK(std::abs(floor_cost({3.0, 0.0, 0.0}, rooms, lambda) - 2.0) <= 1e-12);
  CHECK_THROWS_AS(floor_cost(Vec3::Zero(), {}), std::domain_error);
}

TEST_CASE("wall pair classification") {
  SUBCASE("rectangle gives 2 parallel and 4 perpendicular pairs") {
    const auto g = rectangle_graph();
    const auto pairs = classify_wall_pairs(g.rooms.at(RoomId(0)), g, 10.0 * M_PI / 180.0);
    CHECK(pairs.parallel.size() == 2);
    CHECK(pairs.perpendicular.size() == 4);
  }
  SUBCASE("walls at 45 degrees are unclassified") {
    SceneGraph g;
    Room room;
    room.id = RoomId(0);
    for (const auto& w : {vertical_wall(180.0, {0.0, 0.0, 0.0}), vertical_wall(225.0, {1.0, -1.0, 0.0})}) {
      const auto id = g.next_component_id();
      g.components[id] = MapComponent{id, w, {}, {}};
      room.walls.push_back(id);
    }
    room.cluster.centroid = {2.0, 0.0, 0.0};
    const auto pairs = classify_wall_pairs(room, g, 10.0 * M_PI / 180.0);
    CHECK(pairs.parallel.empty());
    CHECK(pairs.perpendicular.empty());
  }
  SUBCASE("regular pentagon has no pairs and only the centroid term") {
    SceneGraph g;
    Room room;
    room.id = RoomId(0);
    Vec3 sum = Vec3::Zero();
    for (int k = 0; k < 5; ++k) {
      const double yaw = 72.0 * k;
      const double a = yaw * M_PI / 180.0;
      const Vec3 mid(2.0 * std::cos(a), 2.0 * std::sin(a), 1.0);
      const auto id = g.next_component_id();
      g.components[id] = MapComponent{id, vertical_wall(yaw, mid), {}, {}};
      room.walls.push_back(id);
      sum += mid;
    }
    room.cluster.centroid = Vec3::Zero();
    room.centroid = sum / 5.0 + Vec3(0.5, 0.0, 0.0);
    const auto pairs = classify_wall_pairs(room, g, 10.0 * M_PI / 180.0);
    CHECK(pairs.parallel.empty());
    CHECK(pairs.perpendicular.empty());
    CHECK(std::abs(room_total_cost(room, g, 10.0 * M_PI / 180.0) - 0.25) <= 1e-12);
  }
}

TEST_CASE("room total cost") {
  const double tol = 10.0 * M_PI / 180.0;
  const auto perfect = rectangle_graph();
  CHECK(std::abs(room_total_cost(perfect.rooms.at(RoomId(0)), perfect, tol)) <= 1e-12);

  // One wall yawed 5 degrees: parallel term (1 - cos 5)/2, perpendicular term 2 sin 5 / 4.
  const auto yawed = rectangle_graph(5.0);
  const double a = 5.0 * M_PI / 180.0;
  const double expected = (1.0 - std::cos(a)) / 2.0 + 2.0 * std::sin(a) / 4.0;
  CHECK(std::abs(room_total_cost(yawed.rooms.at(RoomId(0)), yawed, tol) - expected) <= 1e-12);
}

TEST_CASE("marker residual") {
  std::mt19937_64 rng(3);
  const Pose k = random_pose(rng), m = random_pose(rng);
  const Pose global = k * m;
  CHECK(marker_residual(k, global, m).norm() <= 1e-12);

  Pose shifted = global;
  shifted.translation += Vec3(0.1, 0.0, 0.0);
  CHECK(std::abs(marker_residual(k, shifted, m).tail<3>().norm() - 0.1) <= 1e-12);

  for (int i = 0; i < 100; ++i) {
    const Pose kk = random_pose(rng), mm = random_pose(rng);
    const Pose mg = perturb(kk * mm, rng, 0.5, 0.5);
    const Eigen::Matrix4d e = homogeneous(mg).inverse() * homogeneous(kk) * homogeneous(mm);
    const Vec6 r = marker_residual(kk, mg, mm);
    CHECK((r.head<3>() - rotation_vector(e.topLeftCorner<3, 3>())).norm() <= 1e-9);
    CHECK((r.tail<3>() - e.topRightCorner<3, 1>()).norm() <= 1e-9);
  }
}

TEST_CASE("plane observation residual") {
  std::mt19937_64 rng(5);
  const Pose k = random_pose(rng);
  Plane local;
  local.normal = random_unit(rng);
  local.offset = 1.3;
  const Plane global = transform_plane(k, local);
  CHECK(plane_observation_residual(k, global, local).norm() <= 1e-12);

  Plane off = global;
  off.offset += 0.05;
  const Vec3 r = plane_observation_residual(k, off, local);
  CHECK(std::abs(r(0)) <= 1e-12);
  CHECK(std::abs(r(1)) <= 1e-12);
  CHECK(std::abs(r(2) - 0.05) <= 1e-12);
}

TEST_CASE("analytic Jacobians match central differences") {
  std::mt19937_64 rng(2024);
  for (const auto kind : all_factor_kinds()) {
    CAPTURE(to_string(kind));
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const auto [f, vars] = random_factor(kind, rng);
      worst = std::max(worst, jacobian_relative_error(f, vars));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("numeric Jacobian") {
  SUBCASE("linear residual is exact") {
    const std::vector<Variable> vars{point_var({1.0, 2.0, 3.0})};
    Eigen::Matrix3d a;
    a << 1, 2, 3, 4, 5, 6, 7, 8, 10;
    const auto j = numeric_jacobian([&](const std::vector<Variable>& v) -> Eigen::VectorXd { return a * v[0].point; },
                                    vars, 1e-3);
    CHECK((j - a).norm() <= 1e-9);
  }
  SUBCASE("odometry at identity has the closed-form blocks") {
    const std::vector<Variable> vars{pose_var(Pose::identity()), pose_var(Pose::identity())};
    const Factor f = odometry_factor(0, 1, Pose::identity(), Mat6::Identity());
    const Eigen::MatrixXd j = numeric_jacobian(f, vars);
    Eigen::MatrixXd expected(6, 12);
    expected << -Eigen::MatrixXd::Identity(6, 6), Eigen::MatrixXd::Identity(6, 6);
    CHECK((j - expected).norm() <= 1e-8);
    CHECK((analytic_jacobian(f, vars) - expected).norm() <= 1e-12);
  }
  CHECK_THROWS_AS(numeric_jacobian([](const std::vector<Variable>&) { return Eigen::VectorXd(); }, {}, 0.0),
                  std::invalid_argument);
}

TEST_CASE("solver on a zero-residual problem does nothing") {
  Problem p;
  const auto a = p.add_pose("a", Pose::identity(), true);
  const auto b = p.add_pose("b", Pose::from_translation({1.0, 0.0, 0.0}));
  p.add_factor(odometry_factor(a, b, Pose::from_translation({1.0, 0.0, 0.0}), Mat6::Identity()));
  const auto before = p.variables;
  const auto result = solve(p);
  CHECK(result.cost_trace.size() == 1);
  CHECK(result.cost_trace.front() == 0.0);
  CHECK(result.iterations == 0);
  CHECK(p.variables[b].pose.translation == before[b].pose.translation);
}

TEST_CASE("odometry chain with a loop factor moves toward the truth") {
  std::mt19937_64 rng(99);
  // Truth: 10 poses on a circle of radius 2.
  std::vector<Pose> truth;
  for (int i = 0; i < 10; ++i) {
    const double a = 2.0 * M_PI * i / 10.0;
    truth.push_back(Pose::from_yaw(a + M_PI / 2.0, {2.0 * std::cos(a), 2.0 * std::sin(a), 0.0}));
  }
  Problem p;
  std::vector<Pose> drifted{truth[0]};
  std::normal_distribution<double> rot(0.0, 0.02), trans(0.0, 0.03);
  Mat6 info = Mat6::Identity() * 100.0;
  for (int i = 1; i < 10; ++i) {
    const Pose z = truth[i - 1].inverse() * truth[i];
    const Pose noisy{z.rotation * so3_exp({rot(rng), rot(rng), rot(rng)}),
                     z.translation + Vec3(trans(rng), trans(rng), trans(rng))};
    drifted.push_back(drifted.back() * noisy);
  }
  for (int i = 0; i < 10; ++i) p.add_pose("p" + std::to_string(i), drifted[i], i == 0);
  for (int i = 1; i < 10; ++i) {
    const Pose zn = drifted[i - 1].inverse() * drifted[i];
    p.add_factor(odometry_factor(i - 1, i, zn, info));
  }
  // Exact loop measurement from the last pose back to the first.
  p.add_factor(odometry_factor(9, 0, truth[9].inverse() * truth[0], info * 100.0));

  double err_before = 0.0;
  for (int i = 0; i < 10; ++i) err_before += (drifted[i].translation - truth[i].translation).squaredNorm();
  const auto result = solve(p);
  double err_after = 0.0;
  for (int i = 0; i < 10; ++i) err_after += (p.variables[i].pose.translation - truth[i].translation).squaredNorm();

  REQUIRE(result.cost_trace.size() >= 2);
  CHECK(result.cost_trace.back() < result.cost_trace.front());
  for (std::size_t i = 1; i < result.cost_trace.size(); ++i)
    CHECK(result.cost_trace[i] <= result.cost_trace[i - 1]);
  CHECK(err_after < err_before);
  CHECK(p.variables[0].pose.translation == truth[0].translation);
}

TEST_CASE("rectangle room with a yawed wall is squared up") {
  const auto g = rectangle_graph(5.0);
  const Room& room = g.rooms.at(RoomId(0));
  Problem p;
  std::vector<std::size_t> walls;
  for (std::size_t i = 0; i < room.walls.size(); ++i)
    walls.push_back(p.add_plane("w" + std::to_string(i), g.components.at(room.walls[i]).plane, i == 0));
  const auto r = p.add_point("room", room.centroid);
  p.add_factor(room_centroid_factor(r, walls));
  const auto pairs = classify_wall_pairs(room, g, 10.0 * M_PI / 180.0);
  const auto index = [&](ComponentId id) {
    return walls[static_cast<std::size_t>(std::find(room.walls.begin(), room.walls.end(), id) - room.walls.begin())];
  };
  for (const auto& [a, b] : pairs.parallel)
    p.add_factor(room_parallel_factor(index(a), index(b), 1.0 / static_cast<double>(pairs.parallel.size())));
  for (const auto& [a, b] : pairs.perpendicular)
    p.add_factor(room_perpendicular_factor(index(a), index(b), 1.0 / static_cast<double>(pairs.perpendicular.size())));

  // The factor set reproduces the scalar room objective exactly.
  CHECK(std::abs(total_cost(p) - room_total_cost(room, g, 10.0 * M_PI / 180.0)) <= 1e-12);

  const auto result = solve(p);
  CHECK(result.cost_trace.back() < result.cost_trace.front());
  const auto deg = [&](std::size_t i, std::size_t j) {
    return angle_between(p.variables[walls[i]].plane.normal, p.variables[walls[j]].plane.normal) * 180.0 / M_PI;
  };
  CHECK(std::abs(deg(0, 1) - 180.0) <= 0.5);
  CHECK(std::abs(deg(2, 3) - 180.0) <= 0.5);
  CHECK(std::abs(deg(0, 2) - 90.0) <= 0.5);
  CHECK(std::abs(deg(1, 3) - 90.0) <= 0.5);
  for (const auto w : walls) CHECK(std::abs(p.variables[w].plane.normal.norm() - 1.0) <= 1e-12);
  CHECK(p.variables[walls[0]].plane.normal == g.components.at(room.walls[0]).plane.normal);

  // Room centroid follows the mean of the optimized wall reference points.
  Vec3 mean = Vec3::Zero();
  for (const auto w : walls) {
    const Plane& pl = p.variables[w].plane;
    mean += pl.project(pl.centroid);
  }
  mean /= 4.0;
  CHECK((p.variables[r].point - mean).norm() <= 1e-4);
}

TEST_CASE("total cost is invariant under a rigid transform of the whole problem") {
  std::mt19937_64 rng(17);
  Problem p;
  const Pose k0 = random_pose(rng), k1 = random_pose(rng);
  const auto a = p.add_pose("k0", k0, true);
  const auto b = p.add_pose("k1", k1);
  p.add_factor(odometry_factor(a, b, perturb(k0.inverse() * k1, rng, 0.1, 0.1), Mat6::Identity()));
  std::vector<std::size_t> planes;
  for (int i = 0; i < 3; ++i) {
    const Plane pl = random_plane(rng);
    planes.push_back(p.add_plane("pl" + std::to_string(i), pl));
    Plane local = transform_plane(k1.inverse(), pl);
    local.offset += 0.05;
    p.add_factor(plane_observation_factor(b, planes.back(), local, Mat3::Identity() * 3.0, 0.1));
  }
  p.add_factor(room_parallel_factor(planes[0], planes[1], 0.5));
  p.add_factor(room_perpendicular_factor(planes[1], planes[2], 0.5));
  const auto room = p.add_point("room", random_vec(rng));
  p.add_factor(room_centroid_factor(room, planes));
  const auto floor = p.add_point("floor", random_vec(rng));
  p.add_factor(floor_centroid_factor(floor, {room}));
  const Pose m = random_pose(rng);
  const auto marker = p.add_pose("marker", perturb(k1 * m, rng, 0.1, 0.1));
  p.add_factor(marker_factor(b, marker, m, Mat6::Identity()));

  const double before = total_cost(p);
  const Pose gtf = random_pose(rng);
  Problem q = p;
  for (auto& v : q.variables) {
    if (v.kind == VariableKind::Pose) v.pose = gtf * v.pose;
    if (v.kind == VariableKind::Plane) v.plane = transform_plane(gtf, v.plane);
    if (v.kind == VariableKind::Point3) v.point = gtf * v.point;
  }
  CHECK(std::abs(total_cost(q) - before) <= 1e-9);
}

TEST_CASE("problem validation") {
  Problem empty;
  empty.add_pose("only", Pose::identity(), true);
  CHECK_THROWS_WITH_AS(solve(empty), "problem has no factors", std::invalid_argument);

  Problem orphan;
  const auto a = orphan.add_pose("a", Pose::identity(), true);
  const auto b = orphan.add_pose("b", Pose::identity());
  orphan.add_point("room:7", Vec3::Zero());
  orphan.add_factor(odometry_factor(a, b, Pose::identity(), Mat6::Identity()));
  CHECK_THROWS_WITH_AS(solve(orphan), "variable 'room:7' has no factors", std::invalid_argument);

  Problem floating;
  const auto c = floating.add_point("c", Vec3::Zero());
  const auto d = floating.add_point("d", Vec3::Ones());
  floating.add_factor(floor_centroid_factor(c, {d}));
  CHECK_THROWS_AS(solve(floating), std::invalid_argument);

  Problem bad;
  bad.add_point("x", Vec3::Zero());
  CHECK_THROWS_AS(bad.add_factor(odometry_factor(0, 0, Pose::identity(), Mat6::Identity())), std::invalid_argument);
}

TEST_CASE("problem text dump round trips") {
  std::mt19937_64 rng(23);
  Problem p;
  p.config.max_iterations = 17;
  for (const auto kind : all_factor_kinds()) {
    auto [f, vars] = random_factor(kind, rng);
    const auto base = p.variables.size();
    for (auto& v : vars) {
      v.name = "v" + std::to_string(p.variables.size());
      p.variables.push_back(v);
    }
    for (auto& idx : f.vars) idx += base;
    p.add_factor(f);
  }
  p.variables.front().fixed = true;
  std::stringstream ss;
  save_problem(p, ss);
  const Problem q = load_problem(ss);
  REQUIRE(q.variables.size() == p.variables.size());
  REQUIRE(q.factors.size() == p.factors.size());
  CHECK(q.config.max_iterations == 17);
  CHECK(std::abs(total_cost(q) - total_cost(p)) <= 1e-9 * std::max(1.0, total_cost(p)));
  CHECK(q.variables.front().fixed);
  CHECK(q.variables[1].name == "v1");

  std::istringstream broken("VAR 0 POSE a 0 1 0 0\n");
  CHECK_THROWS_AS(load_problem(broken), std::invalid_argument);
}
