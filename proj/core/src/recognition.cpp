#include "structmap/recognition.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>

namespace structmap {

namespace {

using VoxelKey = std::array<std::int64_t, 3>;

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    return static_cast<std::size_t>(k[0] * 73856093LL ^ k[1] * 19349663LL ^ k[2] * 83492791LL);
  }
};

VoxelKey voxel_of(const Vec3& p, double leaf) {
  return {static_cast<std::int64_t>(std::floor(p.x() / leaf)), static_cast<std::int64_t>(std::floor(p.y() / leaf)),
          static_cast<std::int64_t>(std::floor(p.z() / leaf))};
}

}  // namespace

ClassTable::ClassTable(std::map<std::uint8_t, std::string> names) : names_(std::move(names)) {}

ClassTable ClassTable::standard() { return ClassTable({{1, "wall"}, {2, "ground"}, {3, "furniture"}}); }

std::optional<SemanticClass> ClassTable::building_class(std::uint8_t label) const {
  const auto it = names_.find(label);
  if (it == names_.end()) return std::nullopt;
  if (it->second == "wall") return SemanticClass::Wall;
  if (it->second == "ground") return SemanticClass::Ground;
  return std::nullopt;
}

std::optional<std::uint8_t> ClassTable::label_of(std::string_view name) const {
  for (const auto& [id, n] : names_)
    if (n == name) return id;
  return std::nullopt;
}

void RecognitionConfig::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string("recognition.") + name + " must be positive");
  };
  positive(min_confidence, "min_confidence");
  positive(voxel_leaf, "voxel_leaf");
  positive(depth_max, "depth_max");
  positive(ransac_inlier_tol, "ransac_inlier_tol");
  positive(ransac_iterations, "ransac_iterations");
  positive(min_inliers, "min_inliers");
  positive(max_planes_per_class, "max_planes_per_class");
  positive(verticality_tol, "verticality_tol");
  positive(horizontality_tol, "horizontality_tol");
  if (!(cluster_tolerance >= 0.0)) throw std::invalid_argument("recognition.cluster_tolerance must be >= 0");
  positive(support_leaf, "support_leaf");
  if (depth_min < 0.0 || !(depth_min < depth_max))
    throw std::invalid_argument("recognition.depth_min must satisfy 0 <= depth_min < depth_max");
}

std::map<SemanticClass, std::vector<Vec3>> semantic_filter(const LabeledCloud& cloud, const ClassTable& classes,
                                                           double min_confidence) {
  std::map<SemanticClass, std::vector<Vec3>> out;
  for (const auto& p : cloud.points) {
    if (p.confidence < min_confidence) continue;
    if (const auto cls = classes.building_class(p.label)) out[*cls].push_back(p.position);
  }
  return out;
}

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double leaf) {
  if (!(leaf > 0.0)) throw std::invalid_argument("voxel_downsample: leaf must be positive");
  struct Accum {
    Vec3 sum = Vec3::Zero();
    std::size_t count = 0;
  };
  std::unordered_map<VoxelKey, Accum, VoxelKeyHash> voxels;
  voxels.reserve(points.size());
  for (const auto& p : points) {
    auto& acc = voxels[voxel_of(p, leaf)];
    acc.sum += p;
    ++acc.count;
  }
  // Lexicographic voxel order keeps the output independent of hashing.
  std::vector<const std::pair<const VoxelKey, Accum>*> order;
  order.reserve(voxels.size());
  for (const auto& kv : voxels) order.push_back(&kv);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->first < b->first; });
  std::vector<Vec3> out;
  out.reserve(order.size());
  for (const auto* kv : order) out.push_back(kv->second.sum / static_cast<double>(kv->second.count));
  return out;
}

std::vector<Vec3> range_filter(const std::vector<Vec3>& points, double depth_min, double depth_max) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const double r = p.norm();
    if (r >= depth_min && r <= depth_max) out.push_back(p);
  }
  return out;
}

Plane fit_plane_least_squares(const std::vector<Vec3>& points) {
  if (points.size() < 3) throw std::invalid_argument("fit_plane_least_squares: need at least 3 points");
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 q = p - c;
    cov += q * q.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Plane plane;
  plane.normal = eig.eigenvectors().col(0).normalized();
  plane.offset = -plane.normal.dot(c);
  plane.centroid = c;
  plane.inlier_count = points.size();
  return plane;
}

namespace {

std::vector<std::size_t> collect_inliers(const std::vector<Vec3>& points, const std::vector<std::size_t>& candidates,
                                         const Vec3& n, double d, double tol) {
  std::vector<std::size_t> inliers;
  for (const auto idx : candidates)
    if (std::abs(n.dot(points[idx]) + d) <= tol) inliers.push_back(idx);
  return inliers;
}

Plane refit(const std::vector<Vec3>& points, const std::vector<std::size_t>& idx) {
  std::vector<Vec3> sel;
  sel.reserve(idx.size());
  for (const auto i : idx) sel.push_back(points[i]);
  return fit_plane_least_squares(sel);
}

// Largest group of `idx` connected through occupied neighbouring voxels of size `leaf`. Ties go to the group with
// the lexicographically smallest voxel. Sorted output.
std::vector<std::size_t> largest_cluster(const std::vector<Vec3>& points, const std::vector<std::size_t>& idx,
                                         double leaf) {
  struct Cell {
    std::vector<std::size_t> members;
    bool seen = false;
  };
  std::unordered_map<VoxelKey, Cell, VoxelKeyHash> cells;
  cells.reserve(idx.size());
  for (const auto i : idx) cells[voxel_of(points[i], leaf)].members.push_back(i);
  std::vector<VoxelKey> seeds;
  seeds.reserve(cells.size());
  for (const auto& kv : cells) seeds.push_back(kv.first);
  std::sort(seeds.begin(), seeds.end());

  std::vector<std::size_t> best;
  std::vector<VoxelKey> stack;
  for (const auto& seed : seeds) {
    Cell& first = cells.at(seed);
    if (first.seen) continue;
    first.seen = true;
    stack.assign(1, seed);
    std::vector<std::size_t> members;
    while (!stack.empty()) {
      const VoxelKey k = stack.back();
      stack.pop_back();
      const auto& here = cells.at(k).members;
      members.insert(members.end(), here.begin(), here.end());
      for (std::int64_t dx = -1; dx <= 1; ++dx)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dz = -1; dz <= 1; ++dz) {
            const auto it = cells.find({k[0] + dx, k[1] + dy, k[2] + dz});
            if (it == cells.end() || it->second.seen) continue;
            it->second.seen = true;
            stack.push_back(it->first);
          }
    }
    if (members.size() > best.size()) best = std::move(members);
  }
  std::sort(best.begin(), best.end());
  return best;
}

}  // namespace

std::vector<PlaneFit> fit_planes_ransac(const std::vector<Vec3>& points, const RecognitionConfig& cfg,
                                        std::uint64_t rng_seed) {
  std::vector<PlaneFit> result;
  if (points.size() < 3) return result;

  std::mt19937_64 rng(rng_seed);
  std::vector<std::size_t> remaining(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) remaining[i] = i;

  const double tol = cfg.ransac_inlier_tol;
  while (static_cast<int>(result.size()) < cfg.max_planes_per_class && remaining.size() >= 3) {
    std::uniform_int_distribution<std::size_t> pick(0, remaining.size() - 1);
    std::size_t best_count = 0;
    Vec3 best_n = Vec3::Zero();
    double best_d = 0.0;
    bool any_valid = false;

    // Contiguous copy of the remaining points for the scoring loop.
    std::vector<double> xs(remaining.size()), ys(remaining.size()), zs(remaining.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      xs[i] = points[remaining[i]].x();
      ys[i] = points[remaining[i]].y();
      zs[i] = points[remaining[i]].z();
    }
    const std::size_t n_remaining = remaining.size();

    for (int it = 0; it < cfg.ransac_iterations; ++it) {
      const std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      std::size_t c = pick(rng);
      if (a == b || a == c || b == c) continue;
      const Vec3& p0 = points[remaining[a]];
      const Vec3 e1 = points[remaining[b]] - p0;
      const Vec3 e2 = points[remaining[c]] - p0;
      Vec3 n = e1.cross(e2);
      const double area = n.norm();
      if (!(area > 1e-9 * e1.norm() * e2.norm()) || area < 1e-15) continue;
      any_valid = true;
      n /= area;
      const double d = -n.dot(p0);
      // Scored in blocks; a hypothesis that can no longer beat the best is dropped early.
      std::size_t count = 0;
      constexpr std::size_t block = 256;
      for (std::size_t start = 0; start < n_remaining; start += block) {
        if (count + (n_remaining - start) <= best_count) break;
        const std::size_t end = std::min(n_remaining, start + block);
        for (std::size_t i = start; i < end; ++i)
          count += std::abs(n.x() * xs[i] + n.y() * ys[i] + n.z() * zs[i] + d) <= tol ? 1 : 0;
      }
      if (count > best_count) {
        best_count = count;
        best_n = n;
        best_d = d;
      }
    }
    if (!any_valid || best_count < static_cast<std::size_t>(cfg.min_inliers)) break;

    // Collect, keep the largest connected patch, refit; repeat until the inlier set settles. A tilted hypothesis
    // clips the band on one side and a single refit keeps part of that bias. Coplanar points of other surfaces
    // crossing the plane are not part of the patch.
    std::vector<std::size_t> inliers;
    Plane plane;
    plane.normal = best_n;
    plane.offset = best_d;
    for (int pass = 0; pass < 10; ++pass) {
      auto next = collect_inliers(points, remaining, plane.normal, plane.offset, tol);
      if (cfg.cluster_tolerance > 0.0) next = largest_cluster(points, next, cfg.cluster_tolerance);
      if (next.size() < 3 || next == inliers) break;
      inliers = std::move(next);
      plane = refit(points, inliers);
    }
    if (inliers.size() < static_cast<std::size_t>(cfg.min_inliers)) break;
    plane.inlier_count = inliers.size();

    std::vector<std::size_t> keep;
    keep.reserve(remaining.size() - inliers.size());
    std::size_t j = 0;
    for (const auto idx : remaining) {
      while (j < inliers.size() && inliers[j] < idx) ++j;
      if (j < inliers.size() && inliers[j] == idx) continue;
      keep.push_back(idx);
    }
    remaining = std::move(keep);
    result.push_back({plane, std::move(inliers)});
  }
  return result;
}

namespace {

bool passes_validation(Plane& plane, const RecognitionConfig& cfg, const Vec3& up) {
  if (plane.cls == SemanticClass::Ground) {
    if (plane.normal.dot(up) < 0.0) plane = plane.flipped();
    return angle_between(plane.normal, up) <= cfg.horizontality_tol;
  }
  return std::abs(angle_between(plane.normal, up) - M_PI / 2.0) <= cfg.verticality_tol;
}

}  // namespace

std::vector<Plane> validate_components(const std::vector<Plane>& planes, const RecognitionConfig& cfg,
                                       const Vec3& up) {
  std::vector<Plane> out;
  for (Plane p : planes)
    if (passes_validation(p, cfg, up)) out.push_back(p);
  return out;
}

std::vector<Plane> recognize(KeyFrame& kf, const ClassTable& classes, const RecognitionConfig& cfg,
                             std::uint64_t rng_seed) {
  cfg.validate();
  kf.components.clear();
  kf.detections.clear();

  const Vec3 up_local = kf.pose.rotation.transpose() * world_up();
  const auto partition = semantic_filter(kf.cloud, classes, cfg.min_confidence);
  for (const auto& [cls, raw] : partition) {
    const auto points = range_filter(voxel_downsample(raw, cfg.voxel_leaf), cfg.depth_min, cfg.depth_max);
    const std::uint64_t class_seed = rng_seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(cls) + 1;
    for (auto& fit : fit_planes_ransac(points, cfg, class_seed)) {
      Plane plane = fit.plane;
      plane.cls = cls;
      // Camera sits at the local origin: walls face away from it.
      if (cls == SemanticClass::Wall && plane.offset > 0.0) plane = plane.flipped();
      if (!passes_validation(plane, cfg, up_local)) continue;
      std::vector<Vec3> inlier_points;
      inlier_points.reserve(fit.inliers.size());
      for (const auto idx : fit.inliers) inlier_points.push_back(points[idx]);
      kf.detections.push_back({plane, voxel_downsample(inlier_points, cfg.support_leaf)});
      kf.components.push_back(transform_plane(kf.pose, plane));
    }
  }
  return kf.components;
}

}  // namespace structmap
