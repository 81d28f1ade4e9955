#pragma once

#include "structmap/scene_graph.hpp"
#include "structmap/synthetic.hpp"

#include <cmath>
#include <vector>

namespace testsupport {

/// Scene graph built straight from ground truth: one level keyframe at each room's center (camera height 1.2 m),
/// one wall component per true wall and a single ground component, all observed from their room's keyframe.
/// Support points lie on the true surfaces on a `step` grid, door gaps left out.
inline structmap::SceneGraph truth_graph(const structmap::GroundTruth& truth, double step = 0.1) {
  using namespace structmap;
  SceneGraph g;
  g.sequence_id = truth.sequence_id;
  std::map<std::string, KeyFrameId> kf_of_room;
  for (const auto& room : truth.rooms) {
    const KeyFrameId id(static_cast<std::int64_t>(kf_of_room.size()));
    kf_of_room[room.name] = id;
    g.keyframes[id] = {id, 0.5 * static_cast<double>(id.value),
                       Pose::from_translation({room.centroid.x(), room.centroid.y(), 1.2})};
  }
  const auto observe = [&](KeyFrameId kf, const Plane& global, const std::vector<Vec3>& pts) {
    const Pose inv = g.keyframes.at(kf).pose.inverse();
    Observation obs;
    obs.keyframe = kf;
    obs.local = transform_plane(inv, global);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) {
      obs.support.push_back(inv * p);
      mean += obs.support.back();
    }
    if (!pts.empty()) obs.local.centroid = mean / static_cast<double>(pts.size());
    obs.local.inlier_count = pts.size();
    return obs;
  };

  for (const auto& w : truth.walls) {
    std::vector<Vec3> pts;
    const Eigen::Vector2d dir = (w.b - w.a).normalized();
    for (double s = 0.5 * step; s < w.length(); s += step) {
      bool gap = false;
      for (const auto& [s0, s1] : w.gaps) gap = gap || (s >= s0 && s <= s1);
      if (gap) continue;
      const Eigen::Vector2d xy = w.a + s * dir;
      for (double z = 0.5 * step; z < w.height; z += step) pts.emplace_back(xy.x(), xy.y(), z);
    }
    MapComponent c;
    c.id = g.next_component_id();
    c.plane = w.plane;
    c.plane.inlier_count = pts.size();
    c.observations.push_back(observe(kf_of_room.at(w.room), w.plane, pts));
    g.components[c.id] = c;
  }

  MapComponent ground;
  ground.id = g.next_component_id();
  ground.plane = truth.grounds.front().plane;
  Vec3 sum = Vec3::Zero();
  std::size_t count = 0;
  for (const auto& room : truth.rooms) {
    Eigen::Vector2d lo = room.polygon.front(), hi = room.polygon.front();
    for (const auto& v : room.polygon) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    std::vector<Vec3> pts;
    for (double x = lo.x() + 0.5 * step; x < hi.x(); x += step)
      for (double y = lo.y() + 0.5 * step; y < hi.y(); y += step) {
        bool inside = true;
        const std::size_t n = room.polygon.size();
        for (std::size_t i = 0; i < n; ++i) {
          const Eigen::Vector2d e = room.polygon[(i + 1) % n] - room.polygon[i];
          const Eigen::Vector2d q = Eigen::Vector2d(x, y) - room.polygon[i];
          inside = inside && e.x() * q.y() - e.y() * q.x() > 0.0;
        }
        if (inside) pts.emplace_back(x, y, 0.0);
      }
    for (const auto& p : pts) sum += p;
    count += pts.size();
    ground.observations.push_back(observe(kf_of_room.at(room.name), ground.plane, pts));
  }
  ground.plane.centroid = sum / static_cast<double>(count);
  ground.plane.inlier_count = count;
  g.components[ground.id] = ground;
  return g;
}

}  // namespace testsupport
