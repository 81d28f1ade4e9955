#include "structmap/evaluation.hpp"

#include "json_util.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace structmap {

namespace {

using detail::json;

double horizontal_distance(const Vec3& a, const Vec3& b) { return (a - b).head<2>().norm(); }

// Kuhn augmenting path from detected index `d`.
bool augment(std::size_t d, const std::vector<std::vector<std::size_t>>& adj, std::vector<int>& truth_of,
             std::vector<int>& det_of, std::vector<char>& seen) {
  for (std::size_t t : adj[d]) {
    if (seen[t]) continue;
    seen[t] = 1;
    if (det_of[t] < 0 || augment(static_cast<std::size_t>(det_of[t]), adj, truth_of, det_of, seen)) {
      det_of[t] = static_cast<int>(d);
      truth_of[d] = static_cast<int>(t);
      return true;
    }
  }
  return false;
}

json metrics_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"matched", m.matched}, {"detected", m.detected},
          {"gt", m.truth}};
}

}  // namespace

EntityMatching match_entities(const std::vector<std::int64_t>& detected, const std::vector<std::int64_t>& truth,
                              const std::function<PairScore(std::int64_t, std::int64_t)>& score, double distance_tol,
                              double angle_tol) {
  std::vector<std::int64_t> det = detected, tru = truth;
  std::sort(det.begin(), det.end());
  std::sort(tru.begin(), tru.end());

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < det.size(); ++i)
    for (std::size_t k = 0; k < tru.size(); ++k) {
      const PairScore s = score(det[i], tru[k]);
      if (s.distance <= distance_tol && s.angle <= angle_tol) pairs.emplace_back(s.distance, i, k);
    }
  std::sort(pairs.begin(), pairs.end());

  std::vector<int> truth_of(det.size(), -1), det_of(tru.size(), -1);
  std::vector<std::vector<std::size_t>> adj(det.size());
  for (const auto& [d, i, k] : pairs) {
    adj[i].push_back(k);  // nearest first
    if (truth_of[i] < 0 && det_of[k] < 0) {
      truth_of[i] = static_cast<int>(k);
      det_of[k] = static_cast<int>(i);
    }
  }
  for (std::size_t i = 0; i < det.size(); ++i) {
    if (truth_of[i] >= 0 || adj[i].empty()) continue;
    std::vector<char> seen(tru.size(), 0);
    augment(i, adj, truth_of, det_of, seen);
  }

  EntityMatching m;
  m.distance_tol = distance_tol;
  m.angle_tol = angle_tol;
  for (std::size_t i = 0; i < det.size(); ++i) {
    if (truth_of[i] >= 0)
      m.matched.emplace_back(det[i], tru[static_cast<std::size_t>(truth_of[i])]);
    else
      m.unmatched_detected.push_back(det[i]);
  }
  for (std::size_t k = 0; k < tru.size(); ++k)
    if (det_of[k] < 0) m.unmatched_truth.push_back(tru[k]);
  return m;
}

Metrics precision_recall(int matched, int detected, int truth) {
  if (matched < 0 || detected < 0 || truth < 0 || matched > detected || matched > truth)
    throw std::invalid_argument("precision_recall: need 0 <= matched <= min(detected, gt)");
  Metrics m;
  m.matched = matched;
  m.detected = detected;
  m.truth = truth;
  m.precision = detected == 0 ? 1.0 : static_cast<double>(matched) / detected;
  m.recall = truth == 0 ? 1.0 : static_cast<double>(matched) / truth;
  return m;
}

Metrics precision_recall(const EntityMatching& m) {
  const int matched = static_cast<int>(m.matched.size());
  return precision_recall(matched, matched + static_cast<int>(m.unmatched_detected.size()),
                          matched + static_cast<int>(m.unmatched_truth.size()));
}

Metrics pooled(const std::vector<Metrics>& parts) {
  int matched = 0, detected = 0, truth = 0;
  for (const Metrics& p : parts) {
    matched += p.matched;
    detected += p.detected;
    truth += p.truth;
  }
  return precision_recall(matched, detected, truth);
}

void MatchThresholds::validate() const {
  for (double v : {wall_distance, wall_angle, ground_distance, ground_angle, room_distance, floor_distance})
    if (!(v > 0.0)) throw std::invalid_argument("matching thresholds must be > 0");
}

GraphMatching match_graph(const SceneGraph& g, const GroundTruth& truth, const MatchThresholds& thr) {
  thr.validate();
  std::vector<std::int64_t> walls, grounds;
  for (const auto& [id, c] : g.components) (c.plane.cls == SemanticClass::Wall ? walls : grounds).push_back(id.value);
  std::map<std::int64_t, const TruthWall*> tw;
  std::map<std::int64_t, const TruthGround*> tg;
  std::map<std::int64_t, const TruthRoom*> tr;
  std::map<std::int64_t, const TruthFloor*> tf;
  for (const auto& w : truth.walls) tw[w.id] = &w;
  for (const auto& x : truth.grounds) tg[x.id] = &x;
  for (const auto& r : truth.rooms) tr[r.id] = &r;
  for (const auto& f : truth.floors) tf[f.id] = &f;
  auto keys = [](const auto& m) {
    std::vector<std::int64_t> out;
    for (const auto& kv : m) out.push_back(kv.first);
    return out;
  };

  GraphMatching out;
  out.walls = match_entities(
      walls, keys(tw),
      [&](std::int64_t d, std::int64_t t) {
        const Plane& p = g.components.at(ComponentId(d)).plane;
        return PairScore{tw.at(t)->distance(p.centroid), angle_between(p.normal, tw.at(t)->plane.normal)};
      },
      thr.wall_distance, thr.wall_angle);
  out.grounds = match_entities(
      grounds, keys(tg),
      [&](std::int64_t d, std::int64_t t) {
        const Plane& p = g.components.at(ComponentId(d)).plane;
        return PairScore{tg.at(t)->distance(p.centroid), angle_between(p.normal, tg.at(t)->plane.normal)};
      },
      thr.ground_distance, thr.ground_angle);
  std::vector<std::int64_t> rooms;
  for (const auto& [id, r] : g.rooms) rooms.push_back(id.value);
  out.rooms = match_entities(
      rooms, keys(tr),
      [&](std::int64_t d, std::int64_t t) {
        return PairScore{horizontal_distance(g.rooms.at(RoomId(d)).centroid, tr.at(t)->centroid), 0.0};
      },
      thr.room_distance, M_PI);
  std::vector<std::int64_t> floors;
  if (g.floor) floors.push_back(g.floor->id.value);
  out.floors = match_entities(
      floors, keys(tf),
      [&](std::int64_t, std::int64_t t) {
        return PairScore{horizontal_distance(g.floor->centroid, tf.at(t)->centroid), 0.0};
      },
      thr.floor_distance, M_PI);
  return out;
}

double ate_rmse(const std::vector<Vec3>& estimated, const std::vector<Vec3>& truth, Alignment alignment) {
  if (estimated.size() != truth.size())
    throw std::invalid_argument("ate_rmse: trajectories have different lengths (" + std::to_string(estimated.size()) +
                                " vs " + std::to_string(truth.size()) + ")");
  const auto n = static_cast<Eigen::Index>(estimated.size());
  if (n == 0) return 0.0;
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimated[static_cast<std::size_t>(i)];
    dst.col(i) = truth[static_cast<std::size_t>(i)];
  }
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  const Vec3 mu_s = src.rowwise().mean(), mu_d = dst.rowwise().mean();
  if (alignment == Alignment::Rigid) {
    const Eigen::Matrix4d m = Eigen::umeyama(src, dst, false);
    r = m.topLeftCorner<3, 3>();
    t = m.topRightCorner<3, 1>();
  } else {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 a = src.col(i) - mu_s, b = dst.col(i) - mu_d;
      num += a.x() * b.y() - a.y() * b.x();
      den += a.x() * b.x() + a.y() * b.y();
    }
    r = Eigen::AngleAxisd(std::atan2(num, den), Vec3::UnitZ()).toRotationMatrix();
    t = mu_d - r * mu_s;
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sum += (r * src.col(i) + t - dst.col(i)).squaredNorm();
  return 100.0 * std::sqrt(sum / static_cast<double>(n));
}

double ate_rmse(const std::vector<Pose>& estimated, const std::vector<Pose>& truth, Alignment alignment) {
  std::vector<Vec3> a, b;
  for (const Pose& p : estimated) a.push_back(p.translation);
  for (const Pose& p : truth) b.push_back(p.translation);
  return ate_rmse(a, b, alignment);
}

double graph_ate(const SceneGraph& g, const GroundTruth& truth, Alignment alignment) {
  std::vector<Vec3> est, ref;
  std::set<std::int64_t> used;
  for (const TruthPose& tp : truth.trajectory) {
    const auto it = g.keyframes.find(KeyFrameId(tp.keyframe));
    if (it == g.keyframes.end())
      throw std::invalid_argument("keyframe " + std::to_string(tp.keyframe) + " missing from the graph");
    est.push_back(it->second.pose.translation);
    ref.push_back(tp.pose.translation);
    used.insert(tp.keyframe);
  }
  for (const auto& [id, kf] : g.keyframes)
    if (!used.contains(id.value))
      throw std::invalid_argument("keyframe " + std::to_string(id.value) + " has no ground-truth pose");
  return ate_rmse(est, ref, alignment);
}

EvaluationReport evaluate(const SceneGraph& g, const GroundTruth& truth, const MatchThresholds& thr,
                          const SceneGraph* before, Alignment alignment) {
  const GraphMatching m = match_graph(g, truth, thr);
  EvaluationReport r;
  r.sequence_id = g.sequence_id;
  r.walls = precision_recall(m.walls);
  r.grounds = precision_recall(m.grounds);
  r.rooms = precision_recall(m.rooms);
  r.floors = precision_recall(m.floors);
  r.building = pooled({r.walls, r.grounds});
  r.structural = pooled({r.rooms, r.floors});
  r.keyframes = static_cast<int>(g.keyframes.size());
  if (!truth.trajectory.empty()) {
    r.ate_after_cm = graph_ate(g, truth, alignment);
    if (before != nullptr) r.ate_before_cm = graph_ate(*before, truth, alignment);
  }
  return r;
}

std::string report_to_json(const EvaluationReport& r) {
  json j;
  j["sequence_id"] = r.sequence_id;
  j["keyframes"] = r.keyframes;
  j["walls"] = metrics_json(r.walls);
  j["grounds"] = metrics_json(r.grounds);
  j["rooms"] = metrics_json(r.rooms);
  j["floors"] = metrics_json(r.floors);
  j["building_components"] = metrics_json(r.building);
  j["structural_elements"] = metrics_json(r.structural);
  json ate = json::object();
  if (r.ate_before_cm) ate["before_cm"] = *r.ate_before_cm;
  if (r.ate_after_cm) ate["after_cm"] = *r.ate_after_cm;
  if (r.ate_before_cm && r.ate_after_cm && *r.ate_before_cm > 0.0)
    ate["improvement_percent"] = 100.0 * (*r.ate_before_cm - *r.ate_after_cm) / *r.ate_before_cm;
  j["ate"] = ate;
  return j.dump(2) + "\n";
}

std::string report_to_table(const EvaluationReport& r) {
  std::ostringstream out;
  out << "Sequence: " << r.sequence_id << " (" << r.keyframes << " keyframes)\n\n";
  out << std::left << std::setw(22) << "Entity" << std::setw(16) << "Detected / GT" << std::setw(11) << "Precision"
      << "Recall\n";
  auto row = [&](const char* name, const Metrics& m) {
    std::ostringstream counts;
    counts << m.detected << " / " << m.truth;
    out << std::left << std::setw(22) << name << std::setw(16) << counts.str() << std::fixed << std::setprecision(2)
        << std::setw(11) << m.precision << m.recall << "\n";
  };
  row("Walls", r.walls);
  row("Grounds", r.grounds);
  row("Rooms", r.rooms);
  row("Floors", r.floors);
  row("Building components", r.building);
  row("Structural elements", r.structural);
  if (r.ate_before_cm || r.ate_after_cm) {
    out << "\n" << std::left << std::setw(22) << "ATE [cm]" << std::setw(16) << "Before" << std::setw(11) << "After"
        << "Gain\n";
    auto cell = [](const std::optional<double>& v) {
      std::ostringstream s;
      if (v)
        s << std::fixed << std::setprecision(2) << *v;
      else
        s << "-";
      return s.str();
    };
    std::string gain = "-";
    if (r.ate_before_cm && r.ate_after_cm && *r.ate_before_cm > 0.0) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << 100.0 * (*r.ate_before_cm - *r.ate_after_cm) / *r.ate_before_cm
        << "%";
      gain = s.str();
    }
    out << std::left << std::setw(22) << r.sequence_id << std::setw(16) << cell(r.ate_before_cm) << std::setw(11)
        << cell(r.ate_after_cm) << gain << "\n";
  }
  return out.str();
}

std::string report_to_svg(const EvaluationReport& r) {
  const std::vector<std::pair<const char*, const Metrics*>> rows{
      {"walls", &r.walls}, {"grounds", &r.grounds}, {"rooms", &r.rooms}, {"floors", &r.floors}};
  const int width = 640, height = 320, left = 50, base = 260, bar = 24, plot_h = 200;
  std::ostringstream s;
  s << std::fixed << std::setprecision(1);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << left << "\" y=\"24\">" << r.sequence_id << " precision / recall</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << base << "\" x2=\"" << left + 4 * 80 << "\" y2=\"" << base
    << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double x = left + 10 + 80.0 * static_cast<double>(i);
    const double hp = plot_h * rows[i].second->precision, hr = plot_h * rows[i].second->recall;
    s << "<rect x=\"" << x << "\" y=\"" << base - hp << "\" width=\"" << bar << "\" height=\"" << hp
      << "\" fill=\"#4472c4\"/>\n";
    s << "<rect x=\"" << x + bar << "\" y=\"" << base - hr << "\" width=\"" << bar << "\" height=\"" << hr
      << "\" fill=\"#ed7d31\"/>\n";
    s << "<text x=\"" << x << "\" y=\"" << base + 16 << "\">" << rows[i].first << "</text>\n";
  }
  if (r.ate_before_cm || r.ate_after_cm) {
    const double top = std::max(r.ate_before_cm.value_or(0.0), r.ate_after_cm.value_or(0.0));
    const double scale = top > 0.0 ? plot_h / top : 0.0;
    const double x = left + 4 * 80 + 60;
    s << "<text x=\"" << x << "\" y=\"24\">ATE [cm]</text>\n";
    int k = 0;
    for (const auto& [name, v] : {std::pair{"before", r.ate_before_cm}, std::pair{"after", r.ate_after_cm}}) {
      if (!v) continue;
      const double h = scale * *v;
      const double bx = x + 60.0 * k++;
      s << "<rect x=\"" << bx << "\" y=\"" << base - h << "\" width=\"" << 2 * bar << "\" height=\"" << h
        << "\" fill=\"#70ad47\"/>\n";
      s << "<text x=\"" << bx << "\" y=\"" << base + 16 << "\">" << name << "</text>\n";
      s << "<text x=\"" << bx << "\" y=\"" << base - h - 4 << "\">" << *v << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace structmap
