#include "structmap/evaluation.hpp"
#include "structmap/structural.hpp"
#include "support.hpp"
#include "truth_graph.hpp"
#include "world_fixture.hpp"

#include <Eigen/SVD>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

using namespace structmap;
using namespace testsupport;

namespace {

using ScoreTable = std::map<std::pair<std::int64_t, std::int64_t>, PairScore>;

std::function<PairScore(std::int64_t, std::int64_t)> table_score(const ScoreTable& t) {
  return [&t](std::int64_t d, std::int64_t g) { return t.at({d, g}); };
}

// Largest matching by trying every assignment of detected ids to truth ids (or to nothing).
int brute_force_max(int nd, int nt, const std::vector<std::vector<bool>>& ok) {
  std::vector<bool> used(static_cast<std::size_t>(nt), false);
  std::function<int(int)> go = [&](int d) -> int {
    if (d == nd) return 0;
    int best = go(d + 1);
    for (int g = 0; g < nt; ++g) {
      if (used[static_cast<std::size_t>(g)] || !ok[static_cast<std::size_t>(d)][static_cast<std::size_t>(g)]) continue;
      used[static_cast<std::size_t>(g)] = true;
      best = std::max(best, 1 + go(d + 1));
      used[static_cast<std::size_t>(g)] = false;
    }
    return best;
  };
  return go(0);
}

// Kabsch alignment through a plain SVD of the cross-covariance, independent of Eigen::umeyama.
double kabsch_rmse_cm(const std::vector<Vec3>& est, const std::vector<Vec3>& ref) {
  Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    ms += est[i];
    md += ref[i];
  }
  ms /= static_cast<double>(est.size());
  md /= static_cast<double>(est.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) h += (est[i] - ms) * (ref[i] - md).transpose();
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) sum += (r * (est[i] - ms) + md - ref[i]).squaredNorm();
  return 100.0 * std::sqrt(sum / static_cast<double>(est.size()));
}

}  // namespace

TEST_CASE("precision and recall") {
  const Metrics m = precision_recall(22, 23, 22);
  CHECK(m.precision == doctest::Approx(22.0 / 23.0));
  CHECK(m.precision == doctest::Approx(0.9565).epsilon(1e-4));
  CHECK(m.recall == 1.0);
  const Metrics empty = precision_recall(0, 0, 0);
  CHECK(empty.precision == 1.0);
  CHECK(empty.recall == 1.0);
  const Metrics none = precision_recall(0, 4, 3);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  const Metrics missed = precision_recall(0, 0, 3);
  CHECK(missed.precision == 1.0);
  CHECK(missed.recall == 0.0);

  const Metrics p = pooled({precision_recall(3, 4, 3), precision_recall(1, 1, 2)});
  CHECK(p.matched == 4);
  CHECK(p.precision == doctest::Approx(4.0 / 5.0));
  CHECK(p.recall == doctest::Approx(4.0 / 5.0));
}

TEST_CASE("matching picks the closest pairs greedily") {
  ScoreTable t;
  t[{10, 1}] = {0.1, 0.0};
  t[{10, 2}] = {0.2, 0.0};
  t[{11, 1}] = {0.3, 0.0};
  t[{11, 2}] = {0.9, 0.0};
  const EntityMatching m = match_entities({10, 11}, {1, 2}, table_score(t), 0.5, 1.0);
  // Greedy would leave 11 alone after (10, 1); the augmenting path swaps to (10, 2), (11, 1).
  REQUIRE(m.matched.size() == 2);
  CHECK(m.matched[0] == std::pair<std::int64_t, std::int64_t>{10, 2});
  CHECK(m.matched[1] == std::pair<std::int64_t, std::int64_t>{11, 1});
  CHECK(m.unmatched_detected.empty());
  CHECK(m.unmatched_truth.empty());

  t[{11, 1}] = {0.3, 0.5};  // angle outside tolerance
  const EntityMatching m2 = match_entities({10, 11}, {1, 2}, table_score(t), 0.5, 0.4);
  REQUIRE(m2.matched.size() == 1);
  CHECK(m2.matched[0] == std::pair<std::int64_t, std::int64_t>{10, 1});
  CHECK(m2.unmatched_detected == std::vector<std::int64_t>{11});
  CHECK(m2.unmatched_truth == std::vector<std::int64_t>{2});
}

TEST_CASE("matching is injective, maximal and monotone in the tolerance") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int nd = 1 + static_cast<int>(rng() % 6), nt = 1 + static_cast<int>(rng() % 6);
    std::vector<std::int64_t> det(static_cast<std::size_t>(nd)), tru(static_cast<std::size_t>(nt));
    std::iota(det.begin(), det.end(), 100);
    std::iota(tru.begin(), tru.end(), 0);
    ScoreTable t;
    for (auto d : det)
      for (auto g : tru) t[{d, g}] = {u(rng), u(rng) * 0.5};

    std::size_t previous = 0;
    for (const double tol : {0.1, 0.3, 0.5, 0.7, 1.0}) {
      const EntityMatching m = match_entities(det, tru, table_score(t), tol, 0.4);
      std::set<std::int64_t> seen_d, seen_t;
      for (const auto& [d, g] : m.matched) {
        CHECK(seen_d.insert(d).second);
        CHECK(seen_t.insert(g).second);
        CHECK(t.at({d, g}).distance <= tol);
        CHECK(t.at({d, g}).angle <= 0.4);
      }
      CHECK(m.matched.size() + m.unmatched_detected.size() == det.size());
      CHECK(m.matched.size() + m.unmatched_truth.size() == tru.size());
      CHECK(std::is_sorted(m.matched.begin(), m.matched.end()));

      std::vector<std::vector<bool>> ok(static_cast<std::size_t>(nd), std::vector<bool>(static_cast<std::size_t>(nt)));
      for (int d = 0; d < nd; ++d)
        for (int g = 0; g < nt; ++g) {
          const PairScore s = t.at({100 + d, g});
          ok[static_cast<std::size_t>(d)][static_cast<std::size_t>(g)] = s.distance <= tol && s.angle <= 0.4;
        }
      CHECK(static_cast<int>(m.matched.size()) == brute_force_max(nd, nt, ok));
      CHECK(m.matched.size() >= previous);
      previous = m.matched.size();
    }
  }
}

TEST_CASE("ATE examples") {
  std::vector<Vec3> line;
  for (int i = 0; i < 16; ++i) line.emplace_back(0.25 * i, 0.0, 1.2);
  CHECK(ate_rmse(line, line) <= 1e-9);

  std::vector<Vec3> shifted = line;
  for (Vec3& p : shifted) p += Vec3(0.3, -2.0, 0.1);
  CHECK(ate_rmse(shifted, line) <= 1e-9);
  CHECK(ate_rmse(shifted, line, Alignment::YawOnly) <= 1e-9);

  // Sign pattern + - - + has zero sum and zero correlation with position, so no rigid motion helps.
  std::vector<Vec3> bumpy = line;
  const double signs[4] = {1, -1, -1, 1};
  for (std::size_t i = 0; i < bumpy.size(); ++i) bumpy[i].z() += 0.01 * signs[i % 4];
  CHECK(ate_rmse(bumpy, line) == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(ate_rmse(line, std::vector<Vec3>(line.begin(), line.end() - 1)), std::invalid_argument);
  CHECK(ate_rmse(std::vector<Vec3>{}, std::vector<Vec3>{}) == 0.0);
}

TEST_CASE("ATE matches an independent Kabsch alignment and is rigid invariant") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec3> ref, est;
    for (int i = 0; i < 40; ++i) {
      ref.push_back(random_vec(rng, 5.0));
      est.push_back(ref.back() + Vec3(n(rng), n(rng), n(rng)));
    }
    const double ate = ate_rmse(est, ref);
    CHECK(ate == doctest::Approx(kabsch_rmse_cm(est, ref)).epsilon(1e-9));

    const Pose rigid = random_pose(rng);
    std::vector<Vec3> moved;
    for (const Vec3& p : est) moved.push_back(rigid * p);
    CHECK(ate_rmse(moved, ref) == doctest::Approx(ate).epsilon(1e-8));

    // Yaw-only alignment cannot beat the full rigid one.
    CHECK(ate_rmse(est, ref, Alignment::YawOnly) >= ate - 1e-9);
    const Pose yaw = Pose::from_yaw(1.1, random_vec(rng, 3.0));
    std::vector<Vec3> yawed;
    for (const Vec3& p : est) yawed.push_back(yaw * p);
    CHECK(ate_rmse(yawed, ref, Alignment::YawOnly) ==
          doctest::Approx(ate_rmse(est, ref, Alignment::YawOnly)).epsilon(1e-8));
  }
}

TEST_CASE("graph ATE pairs keyframes by id") {
  const WorldSpec spec = load_world_spec(world_path("sr03"));
  GroundTruth truth = generate_world(spec);
  truth.trajectory = sample_trajectory(spec, CameraModel{});
  SceneGraph g;
  for (const TruthPose& tp : truth.trajectory) {
    const KeyFrameId id(tp.keyframe);
    g.keyframes[id] = {id, tp.timestamp, tp.pose};
  }
  CHECK(graph_ate(g, truth) <= 1e-9);
  g.keyframes.erase(g.keyframes.begin());
  CHECK_THROWS_AS(graph_ate(g, truth), std::invalid_argument);
}

TEST_CASE("a graph built from ground truth scores perfectly") {
  for (const char* name : {"sr03", "mr03", "mr05"}) {
    CAPTURE(name);
    const GroundTruth truth = generate_world(load_world_spec(world_path(name)));
    SceneGraph g = truth_graph(truth);
    run_structural_pass(g, StructuralConfig{}, truth.marker_database());
    const EvaluationReport r = evaluate(g, truth, MatchThresholds{});
    for (const Metrics* m : {&r.walls, &r.grounds, &r.rooms, &r.floors, &r.building, &r.structural}) {
      CHECK(m->precision == 1.0);
      CHECK(m->recall == 1.0);
    }
    CHECK(r.rooms.truth == static_cast<int>(truth.rooms.size()));
    CHECK_FALSE(r.ate_after_cm.has_value());
  }
}

TEST_CASE("a missing wall lowers recall only") {
  const GroundTruth truth = generate_world(load_world_spec(world_path("mr03")));
  SceneGraph g = truth_graph(truth);
  const std::size_t walls = truth.walls.size();
  // Drop one wall.
  auto it = std::find_if(g.components.begin(), g.components.end(),
                         [](const auto& kv) { return kv.second.plane.cls == SemanticClass::Wall; });
  REQUIRE(it != g.components.end());
  g.components.erase(it);
  const EvaluationReport r = evaluate(g, truth, MatchThresholds{});
  CHECK(r.walls.matched == static_cast<int>(walls) - 1);
  CHECK(r.walls.precision == 1.0);
  CHECK(r.walls.recall == doctest::Approx(static_cast<double>(walls - 1) / static_cast<double>(walls)));
}

TEST_CASE("report rendering") {
  const GroundTruth truth = generate_world(load_world_spec(world_path("sr03")));
  SceneGraph g = truth_graph(truth);
  run_structural_pass(g, StructuralConfig{}, truth.marker_database());
  EvaluationReport r = evaluate(g, truth, MatchThresholds{});
  r.ate_before_cm = 20.0;
  r.ate_after_cm = 5.0;
  const std::string json_text = report_to_json(r);
  CHECK(json_text == report_to_json(r));
  CHECK(json_text.find("\"improvement_percent\": 75.0") != std::string::npos);
  CHECK(json_text.find("\"ate\"") < json_text.find("\"building_components\""));
  CHECK(report_to_table(r).find("Detected / GT") != std::string::npos);
  CHECK(report_to_svg(r).rfind("<svg", 0) == 0);

  MatchThresholds bad;
  bad.wall_distance = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
