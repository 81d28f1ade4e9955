#include "structmap/optimizer.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace structmap {

void retract(Variable& v, const Eigen::VectorXd& delta) {
  switch (v.kind) {
    case VariableKind::Pose:
      v.pose.rotation = orthonormalize(v.pose.rotation * so3_exp(delta.head<3>()));
      v.pose.translation += delta.tail<3>();
      break;
    case VariableKind::Plane: {
      const Mat32 b = tangent_basis(v.plane.normal);
      v.plane.normal = (v.plane.normal + b * delta.head<2>()).normalized();
      v.plane.offset += delta(2);
      break;
    }
    case VariableKind::Point3:
      v.point += delta.head<3>();
      break;
  }
}

std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::Odometry:
      return "odometry";
    case FactorKind::PlaneObservation:
      return "plane_observation";
    case FactorKind::RoomParallel:
      return "room_parallel";
    case FactorKind::RoomPerpendicular:
      return "room_perpendicular";
    case FactorKind::RoomCentroid:
      return "room_centroid";
    case FactorKind::FloorCentroid:
      return "floor_centroid";
    case FactorKind::MarkerPose:
      return "marker_pose";
  }
  return "unknown";
}

FactorKind parse_factor_kind(std::string_view name) {
  for (const auto k : {FactorKind::Odometry, FactorKind::PlaneObservation, FactorKind::RoomParallel,
                       FactorKind::RoomPerpendicular, FactorKind::RoomCentroid, FactorKind::FloorCentroid,
                       FactorKind::MarkerPose})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown factor kind '" + std::string(name) + "'");
}

std::string_view to_string(Loss loss) {
  switch (loss) {
    case Loss::Squared:
      return "squared";
    case Loss::Huber:
      return "huber";
    case Loss::Absolute:
      return "absolute";
  }
  return "unknown";
}

Loss parse_loss(std::string_view name) {
  for (const auto l : {Loss::Squared, Loss::Huber, Loss::Absolute})
    if (to_string(l) == name) return l;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

int Factor::residual_dim() const {
  switch (kind) {
    case FactorKind::Odometry:
    case FactorKind::MarkerPose:
      return 6;
    case FactorKind::PlaneObservation:
    case FactorKind::RoomCentroid:
    case FactorKind::FloorCentroid:
      return 3;
    case FactorKind::RoomParallel:
    case FactorKind::RoomPerpendicular:
      return 1;
  }
  return 0;
}

Eigen::VectorXd pose_to_vector(const Pose& p) {
  Eigen::VectorXd v(12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v(3 * r + c) = p.rotation(r, c);
  v.tail<3>() = p.translation;
  return v;
}

Pose pose_from_vector(const Eigen::VectorXd& v) {
  if (v.size() != 12) throw std::invalid_argument("pose vector needs 12 values");
  Pose p;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = v(3 * r + c);
  p.translation = v.tail<3>();
  return p;
}

void SolverConfig::validate() const {
  if (max_iterations < 0) throw std::invalid_argument("solver.max_iterations must be nonnegative");
  if (!(initial_damping > 0.0)) throw std::invalid_argument("solver.initial_damping must be positive");
  if (!(cost_tolerance > 0.0)) throw std::invalid_argument("solver.cost_tolerance must be positive");
  if (!(update_tolerance > 0.0)) throw std::invalid_argument("solver.update_tolerance must be positive");
}

std::size_t Problem::add_pose(std::string name, const Pose& p, bool fixed) {
  Variable v;
  v.kind = VariableKind::Pose;
  v.name = std::move(name);
  v.pose = p;
  v.fixed = fixed;
  variables.push_back(std::move(v));
  return variables.size() - 1;
}

std::size_t Problem::add_plane(std::string name, const Plane& p, bool fixed) {
  Variable v;
  v.kind = VariableKind::Plane;
  v.name = std::move(name);
  v.plane = p;
  v.fixed = fixed;
  variables.push_back(std::move(v));
  return variables.size() - 1;
}

std::size_t Problem::add_point(std::string name, const Vec3& p, bool fixed) {
  Variable v;
  v.kind = VariableKind::Point3;
  v.name = std::move(name);
  v.point = p;
  v.fixed = fixed;
  variables.push_back(std::move(v));
  return variables.size() - 1;
}

namespace {

void expect_kinds(const Factor& f, const std::vector<Variable>& vars) {
  const auto kind_at = [&](std::size_t k) {
    if (k >= f.vars.size() || f.vars[k] >= vars.size())
      throw std::invalid_argument(std::string(to_string(f.kind)) + " factor references a missing variable");
    return vars[f.vars[k]].kind;
  };
  const auto require = [&](std::size_t k, VariableKind kind) {
    if (kind_at(k) != kind)
      throw std::invalid_argument(std::string(to_string(f.kind)) + " factor: variable " + std::to_string(k) +
                                  " has the wrong kind");
  };
  switch (f.kind) {
    case FactorKind::Odometry:
    case FactorKind::MarkerPose:
      if (f.vars.size() != 2) throw std::invalid_argument("pose factor needs 2 variables");
      require(0, VariableKind::Pose);
      require(1, VariableKind::Pose);
      if (f.measurement.size() != 12) throw std::invalid_argument("pose factor needs a 12-value measurement");
      break;
    case FactorKind::PlaneObservation:
      if (f.vars.size() != 2) throw std::invalid_argument("plane_observation factor needs 2 variables");
      require(0, VariableKind::Pose);
      require(1, VariableKind::Plane);
      if (f.measurement.size() != 4) throw std::invalid_argument("plane_observation needs a 4-value measurement");
      break;
    case FactorKind::RoomParallel:
    case FactorKind::RoomPerpendicular:
      if (f.vars.size() != 2) throw std::invalid_argument("wall-pair factor needs 2 variables");
      require(0, VariableKind::Plane);
      require(1, VariableKind::Plane);
      break;
    case FactorKind::RoomCentroid:
      if (f.vars.size() < 2) throw std::invalid_argument("room_centroid factor needs a room and walls");
      require(0, VariableKind::Point3);
      for (std::size_t k = 1; k < f.vars.size(); ++k) require(k, VariableKind::Plane);
      break;
    case FactorKind::FloorCentroid:
      if (f.vars.size() < 2) throw std::invalid_argument("floor_centroid factor needs a floor and rooms");
      for (std::size_t k = 0; k < f.vars.size(); ++k) require(k, VariableKind::Point3);
      break;
  }
  const int dim = f.residual_dim();
  if (f.information.rows() != dim || f.information.cols() != dim)
    throw std::invalid_argument(std::string(to_string(f.kind)) + " factor: information must be " +
                                std::to_string(dim) + "x" + std::to_string(dim));
  if (!f.information.isApprox(f.information.transpose(), 1e-12))
    throw std::invalid_argument(std::string(to_string(f.kind)) + " factor: information must be symmetric");
  if (f.loss == Loss::Huber && !(f.huber_delta > 0.0))
    throw std::invalid_argument("huber loss needs a positive delta");
}

}  // namespace

void Problem::add_factor(Factor f) {
  expect_kinds(f, variables);
  factors.push_back(std::move(f));
}

void Problem::validate() const {
  config.validate();
  if (factors.empty()) throw std::invalid_argument("problem has no factors");
  for (const auto& f : factors) expect_kinds(f, variables);

  std::vector<std::size_t> parent(variables.size());
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<char> used(variables.size(), 0);
  for (const auto& f : factors)
    for (const auto v : f.vars) {
      used[v] = 1;
      parent[find(v)] = find(f.vars.front());
    }
  std::vector<char> anchored(variables.size(), 0);
  for (std::size_t i = 0; i < variables.size(); ++i)
    if (variables[i].fixed) anchored[find(i)] = 1;
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].fixed) continue;
    if (!used[i]) throw std::invalid_argument("variable '" + variables[i].name + "' has no factors");
    if (!anchored[find(i)])
      throw std::invalid_argument("variable '" + variables[i].name + "' is not connected to a fixed variable");
  }
}

namespace {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

Plane measured_plane(const VecX& m) {
  Plane p;
  p.normal = m.head<3>();
  p.offset = m(3);
  return p;
}

VecX eval_odometry(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const Pose& ti = vars[f.vars[0]].pose;
  const Pose& tj = vars[f.vars[1]].pose;
  const Pose z = pose_from_vector(f.measurement);
  const Pose e = z.inverse() * ti.inverse() * tj;
  const Vec6 r = pose_log(e);
  if (jac) {
    const Mat3 jinv = so3_right_jacobian_inverse(r.head<3>());
    const Mat3 rzt = z.rotation.transpose();
    const Mat3 rit = ti.rotation.transpose();
    MatX ji = MatX::Zero(6, 6), jj = MatX::Zero(6, 6);
    ji.block<3, 3>(0, 0) = -jinv * tj.rotation.transpose() * ti.rotation;
    ji.block<3, 3>(3, 0) = rzt * skew(rit * (tj.translation - ti.translation));
    ji.block<3, 3>(3, 3) = -rzt * rit;
    jj.block<3, 3>(0, 0) = jinv;
    jj.block<3, 3>(3, 3) = rzt * rit;
    *jac = {ji, jj};
  }
  return r;
}

VecX eval_plane_observation(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const Pose& t = vars[f.vars[0]].pose;
  const Plane& pl = vars[f.vars[1]].plane;
  const Plane obs = measured_plane(f.measurement);
  const Vec3 r = plane_observation_residual(t, pl, obs);
  if (jac) {
    const Vec3 nl = t.rotation.transpose() * pl.normal;
    const Mat32 bo = tangent_basis(obs.normal.normalized());
    const Mat32 b = tangent_basis(pl.normal);
    MatX jp = MatX::Zero(3, 6), jl = MatX::Zero(3, 3);
    jp.block<2, 3>(0, 0) = bo.transpose() * skew(nl);
    jp.block<1, 3>(2, 3) = pl.normal.transpose();
    jl.block<2, 2>(0, 0) = bo.transpose() * t.rotation.transpose() * b;
    jl.block<1, 2>(2, 0) = t.translation.transpose() * b;
    jl(2, 2) = 1.0;
    *jac = {jp, jl};
  }
  return r;
}

VecX eval_parallel(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const Vec3& na = vars[f.vars[0]].plane.normal;
  const Vec3& nb = vars[f.vars[1]].plane.normal;
  const double s = na.dot(nb) >= 0.0 ? 1.0 : -1.0;
  // 1 - |na.nb| = |na - s nb|^2 / 2 for unit normals, without cancellation.
  const Vec3 e = na - s * nb;
  const double r = e.norm() / std::sqrt(2.0);
  if (jac) {
    MatX ja = MatX::Zero(1, 3), jb = MatX::Zero(1, 3);
    if (r > 1e-12) {
      const double k = -s / (2.0 * r);  // dr/dc
      ja.block<1, 2>(0, 0) = k * nb.transpose() * tangent_basis(na);
      jb.block<1, 2>(0, 0) = k * na.transpose() * tangent_basis(nb);
    }
    *jac = {ja, jb};
  }
  VecX out(1);
  out(0) = r;
  return out;
}

VecX eval_perpendicular(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const Vec3& na = vars[f.vars[0]].plane.normal;
  const Vec3& nb = vars[f.vars[1]].plane.normal;
  if (jac) {
    MatX ja = MatX::Zero(1, 3), jb = MatX::Zero(1, 3);
    ja.block<1, 2>(0, 0) = nb.transpose() * tangent_basis(na);
    jb.block<1, 2>(0, 0) = na.transpose() * tangent_basis(nb);
    *jac = {ja, jb};
  }
  VecX out(1);
  out(0) = na.dot(nb);
  return out;
}

VecX eval_room_centroid(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const auto k = static_cast<double>(f.vars.size() - 1);
  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 1; i < f.vars.size(); ++i) {
    const Plane& p = vars[f.vars[i]].plane;
    mean += p.project(p.centroid);
  }
  mean /= k;
  const Vec3 r = vars[f.vars[0]].point - mean;
  if (jac) {
    jac->assign(1, MatX::Identity(3, 3));
    for (std::size_t i = 1; i < f.vars.size(); ++i) {
      const Plane& p = vars[f.vars[i]].plane;
      const Mat32 b = tangent_basis(p.normal);
      const double s = p.signed_distance(p.centroid);
      MatX j = MatX::Zero(3, 3);
      j.block<3, 2>(0, 0) = (p.normal * p.centroid.transpose() * b + s * b) / k;
      j.col(2) = p.normal / k;
      jac->push_back(j);
    }
  }
  return r;
}

VecX eval_floor(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const auto k = static_cast<double>(f.vars.size() - 1);
  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 1; i < f.vars.size(); ++i) mean += vars[f.vars[i]].point;
  mean /= k;
  if (jac) {
    jac->assign(1, MatX::Identity(3, 3));
    for (std::size_t i = 1; i < f.vars.size(); ++i) jac->push_back(-MatX::Identity(3, 3) / k);
  }
  return vars[f.vars[0]].point - mean;
}

VecX eval_marker(const Factor& f, const std::vector<Variable>& vars, std::vector<MatX>* jac) {
  const Pose& kf = vars[f.vars[0]].pose;
  const Pose& mg = vars[f.vars[1]].pose;
  const Pose m = pose_from_vector(f.measurement);
  const Pose e = mg.inverse() * kf * m;
  const Vec6 r = pose_log(e);
  if (jac) {
    const Mat3 jinv = so3_right_jacobian_inverse(r.head<3>());
    const Mat3 rmt = mg.rotation.transpose();
    MatX jk = MatX::Zero(6, 6), jm = MatX::Zero(6, 6);
    jk.block<3, 3>(0, 0) = jinv * m.rotation.transpose();
    jk.block<3, 3>(3, 0) = -rmt * kf.rotation * skew(m.translation);
    jk.block<3, 3>(3, 3) = rmt;
    jm.block<3, 3>(0, 0) = -jinv * e.rotation.transpose();
    jm.block<3, 3>(3, 0) = skew(e.translation);
    jm.block<3, 3>(3, 3) = -rmt;
    *jac = {jk, jm};
  }
  return r;
}

}  // namespace

Eigen::VectorXd evaluate_factor(const Factor& f, const std::vector<Variable>& vars,
                                std::vector<Eigen::MatrixXd>* jacobians) {
  switch (f.kind) {
    case FactorKind::Odometry:
      return eval_odometry(f, vars, jacobians);
    case FactorKind::PlaneObservation:
      return eval_plane_observation(f, vars, jacobians);
    case FactorKind::RoomParallel:
      return eval_parallel(f, vars, jacobians);
    case FactorKind::RoomPerpendicular:
      return eval_perpendicular(f, vars, jacobians);
    case FactorKind::RoomCentroid:
      return eval_room_centroid(f, vars, jacobians);
    case FactorKind::FloorCentroid:
      return eval_floor(f, vars, jacobians);
    case FactorKind::MarkerPose:
      return eval_marker(f, vars, jacobians);
  }
  throw std::logic_error("unhandled factor kind");
}

double factor_cost(const Factor& f, const Eigen::VectorXd& residual) {
  const double s = std::max(0.0, residual.dot(f.information * residual));
  switch (f.loss) {
    case Loss::Squared:
      return s;
    case Loss::Huber:
      if (s <= f.huber_delta * f.huber_delta) return s;
      return 2.0 * f.huber_delta * std::sqrt(s) - f.huber_delta * f.huber_delta;
    case Loss::Absolute:
      return std::sqrt(s);
  }
  return s;
}

namespace {

// d rho / d s, the IRLS weight.
double loss_weight(const Factor& f, const Eigen::VectorXd& r) {
  const double s = std::max(0.0, r.dot(f.information * r));
  switch (f.loss) {
    case Loss::Squared:
      return 1.0;
    case Loss::Huber:
      return s > f.huber_delta * f.huber_delta ? f.huber_delta / std::sqrt(s) : 1.0;
    case Loss::Absolute:
      return 0.5 / std::max(std::sqrt(s), 1e-9);
  }
  return 1.0;
}

}  // namespace

double total_cost(const Problem& p) {
  double sum = 0.0;
  for (const auto& f : p.factors) sum += factor_cost(f, evaluate_factor(f, p.variables));
  return sum;
}

SolveResult solve(Problem& p) {
  p.validate();
  const SolverConfig& cfg = p.config;

  std::vector<int> offset(p.variables.size(), -1);
  int n = 0;
  for (std::size_t i = 0; i < p.variables.size(); ++i)
    if (!p.variables[i].fixed) {
      offset[i] = n;
      n += p.variables[i].dim();
    }

  SolveResult result;
  double cost = total_cost(p);
  result.cost_trace.push_back(cost);
  if (n == 0 || cost == 0.0) {
    result.converged = true;
    result.termination = n == 0 ? "no free variables" : "zero cost";
    return result;
  }

  double lambda = cfg.initial_damping;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    // Normal equations H dx = -g with IRLS weights for robust factors.
    std::vector<Eigen::Triplet<double>> triplets;
    VecX g = VecX::Zero(n);
    for (const auto& f : p.factors) {
      std::vector<MatX> jac;
      const VecX r = evaluate_factor(f, p.variables, &jac);
      const double w = loss_weight(f, r);
      const MatX info = w * f.information;
      for (std::size_t a = 0; a < f.vars.size(); ++a) {
        const int oa = offset[f.vars[a]];
        if (oa < 0) continue;
        const MatX jta = jac[a].transpose() * info;
        g.segment(oa, jac[a].cols()) += jta * r;
        for (std::size_t b = 0; b < f.vars.size(); ++b) {
          const int ob = offset[f.vars[b]];
          if (ob < 0) continue;
          const MatX block = jta * jac[b];
          for (int i = 0; i < block.rows(); ++i)
            for (int j = 0; j < block.cols(); ++j)
              if (block(i, j) != 0.0) triplets.emplace_back(oa + i, ob + j, block(i, j));
        }
      }
    }
    Eigen::SparseMatrix<double> h(n, n);
    h.setFromTriplets(triplets.begin(), triplets.end());
    const VecX diag = h.diagonal().cwiseMax(1e-9);

    bool accepted = false;
    bool stop = false;
    while (!accepted && !stop) {
      Eigen::SparseMatrix<double> damped = h;
      for (int i = 0; i < n; ++i) damped.coeffRef(i, i) += lambda * diag(i);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(damped);
      VecX dx;
      if (ldlt.info() == Eigen::Success) dx = ldlt.solve(-g);
      if (ldlt.info() != Eigen::Success || !dx.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e16) {
          stop = true;
          result.termination = "damping limit";
        }
        continue;
      }
      if (dx.norm() < cfg.update_tolerance) {
        stop = true;
        result.converged = true;
        result.termination = "update below tolerance";
        break;
      }
      std::vector<Variable> trial = p.variables;
      for (std::size_t i = 0; i < trial.size(); ++i)
        if (offset[i] >= 0) retract(trial[i], dx.segment(offset[i], trial[i].dim()));
      double trial_cost = 0.0;
      for (const auto& f : p.factors) trial_cost += factor_cost(f, evaluate_factor(f, trial));
      if (trial_cost < cost) {
        const double decrease = (cost - trial_cost) / cost;
        if (decrease < cfg.cost_tolerance) {
          stop = true;
          result.converged = true;
          result.termination = "cost decrease below tolerance";
          break;
        }
        p.variables = std::move(trial);
        cost = trial_cost;
        result.cost_trace.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          stop = true;
          result.converged = true;
          result.termination = "no decreasing step";
        }
      }
    }
    if (accepted) ++result.iterations;
    if (stop) return result;
    if (cost == 0.0) {
      result.converged = true;
      result.termination = "zero cost";
      return result;
    }
  }
  result.termination = "max iterations";
  return result;
}

Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const std::vector<Variable>&)>& residual,
                                 const std::vector<Variable>& vars, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("numeric_jacobian: h must be positive");
  int cols = 0;
  for (const auto& v : vars) cols += v.dim();
  const VecX r0 = residual(vars);
  MatX jac(r0.size(), cols);
  int col = 0;
  for (std::size_t i = 0; i < vars.size(); ++i)
    for (int k = 0; k < vars[i].dim(); ++k, ++col) {
      VecX step = VecX::Zero(vars[i].dim());
      step(k) = h;
      auto plus = vars;
      auto minus = vars;
      retract(plus[i], step);
      retract(minus[i], -step);
      jac.col(col) = (residual(plus) - residual(minus)) / (2.0 * h);
    }
  return jac;
}

namespace {

// The factor's variables copied into a compact list, with the factor re-indexed onto it.
std::pair<Factor, std::vector<Variable>> localize(const Factor& f, const std::vector<Variable>& vars) {
  Factor local = f;
  std::vector<Variable> sub;
  for (std::size_t k = 0; k < f.vars.size(); ++k) {
    sub.push_back(vars.at(f.vars[k]));
    local.vars[k] = k;
  }
  return {local, sub};
}

}  // namespace

Eigen::MatrixXd numeric_jacobian(const Factor& f, const std::vector<Variable>& vars, double h) {
  const auto [local, sub] = localize(f, vars);
  return numeric_jacobian([&local](const std::vector<Variable>& v) { return evaluate_factor(local, v); }, sub, h);
}

Eigen::MatrixXd analytic_jacobian(const Factor& f, const std::vector<Variable>& vars) {
  std::vector<MatX> blocks;
  const VecX r = evaluate_factor(f, vars, &blocks);
  int cols = 0;
  for (const auto& b : blocks) cols += static_cast<int>(b.cols());
  MatX out(r.size(), cols);
  int col = 0;
  for (const auto& b : blocks) {
    out.middleCols(col, b.cols()) = b;
    col += static_cast<int>(b.cols());
  }
  return out;
}

double parallel_cost(const Vec3& ni, const Vec3& nj) { return 1.0 - std::abs(ni.dot(nj)); }

double perpendicular_cost(const Vec3& ni, const Vec3& nj) { return std::abs(ni.dot(nj)); }

double room_centroid_cost(const Vec3& room_centroid, const std::vector<Vec3>& wall_centroids) {
  if (wall_centroids.empty()) throw std::domain_error("room_centroid_cost: no wall centroids");
  Vec3 mean = Vec3::Zero();
  for (const auto& c : wall_centroids) mean += c;
  mean /= static_cast<double>(wall_centroids.size());
  return (room_centroid - mean).squaredNorm();
}

double floor_cost(const Vec3& floor_centroid, const std::vector<Vec3>& room_centroids, const Mat3& information) {
  if (room_centroids.empty()) throw std::domain_error("floor_cost: no room centroids");
  Vec3 mean = Vec3::Zero();
  for (const auto& c : room_centroids) mean += c;
  mean /= static_cast<double>(room_centroids.size());
  const Vec3 r = floor_centroid - mean;
  return r.dot(information * r);
}

Vec6 marker_residual(const Pose& kf_pose, const Pose& marker_global, const Pose& local_obs) {
  return pose_log(inverse_compose(compose(local_obs, kf_pose), marker_global));
}

Vec3 plane_observation_residual(const Pose& kf_pose, const Plane& map_plane, const Plane& local_plane) {
  const Vec3 nl = kf_pose.rotation.transpose() * map_plane.normal;
  const double dl = map_plane.offset + map_plane.normal.dot(kf_pose.translation);
  const Vec3 n_obs = local_plane.normal.normalized();
  Vec3 r;
  r.head<2>() = tangent_basis(n_obs).transpose() * nl;
  r(2) = dl - local_plane.offset;
  return r;
}

WallPairs classify_wall_pairs(const Room& room, const SceneGraph& g, double angle_tol) {
  WallPairs pairs;
  const Vec3& inside = room.cluster.cells.empty() ? room.centroid : room.cluster.centroid;
  for (std::size_t i = 0; i < room.walls.size(); ++i)
    for (std::size_t j = i + 1; j < room.walls.size(); ++j) {
      const Plane& a = g.components.at(room.walls[i]).plane;
      const Plane& b = g.components.at(room.walls[j]).plane;
      const double angle = angle_between(a.normal, b.normal);
      const double folded = std::min(angle, M_PI - angle);
      if (folded <= angle_tol) {
        const bool opposite = a.normal.dot(b.normal) < 0.0;
        const bool facing = a.normal.dot(inside - a.centroid) < 0.0 && b.normal.dot(inside - b.centroid) < 0.0;
        if (opposite && facing) pairs.parallel.emplace_back(room.walls[i], room.walls[j]);
      } else if (std::abs(angle - M_PI / 2.0) <= angle_tol) {
        pairs.perpendicular.emplace_back(room.walls[i], room.walls[j]);
      }
    }
  return pairs;
}

double room_total_cost(const Room& room, const SceneGraph& g, double angle_tol) {
  const auto pairs = classify_wall_pairs(room, g, angle_tol);
  const auto normal = [&](ComponentId id) -> const Vec3& { return g.components.at(id).plane.normal; };
  double cost = 0.0;
  if (!pairs.parallel.empty()) {
    double sum = 0.0;
    for (const auto& [a, b] : pairs.parallel) sum += parallel_cost(normal(a), normal(b));
    cost += sum / static_cast<double>(pairs.parallel.size());
  }
  if (!pairs.perpendicular.empty()) {
    double sum = 0.0;
    for (const auto& [a, b] : pairs.perpendicular) sum += perpendicular_cost(normal(a), normal(b));
    cost += sum / static_cast<double>(pairs.perpendicular.size());
  }
  std::vector<Vec3> centroids;
  for (const auto w : room.walls) centroids.push_back(g.components.at(w).plane.centroid);
  return cost + room_centroid_cost(room.centroid, centroids);
}

Factor odometry_factor(std::size_t pose_i, std::size_t pose_j, const Pose& relative, const Mat6& information) {
  return {FactorKind::Odometry, {pose_i, pose_j}, pose_to_vector(relative), information, Loss::Squared, 0.0};
}

Factor plane_observation_factor(std::size_t pose, std::size_t plane, const Plane& local, const Mat3& information,
                                double huber_delta) {
  VecX m(4);
  m.head<3>() = local.normal;
  m(3) = local.offset;
  return {FactorKind::PlaneObservation, {pose, plane}, m, information,
          huber_delta > 0.0 ? Loss::Huber : Loss::Squared, huber_delta};
}

Factor room_parallel_factor(std::size_t plane_a, std::size_t plane_b, double weight) {
  return {FactorKind::RoomParallel, {plane_a, plane_b}, VecX(), MatX::Constant(1, 1, weight), Loss::Squared, 0.0};
}

Factor room_perpendicular_factor(std::size_t plane_a, std::size_t plane_b, double weight) {
  return {FactorKind::RoomPerpendicular, {plane_a, plane_b}, VecX(), MatX::Constant(1, 1, weight * weight),
          Loss::Absolute, 0.0};
}

Factor room_centroid_factor(std::size_t room, const std::vector<std::size_t>& walls, const Mat3& information) {
  Factor f{FactorKind::RoomCentroid, {room}, VecX(), information, Loss::Squared, 0.0};
  f.vars.insert(f.vars.end(), walls.begin(), walls.end());
  return f;
}

Factor floor_centroid_factor(std::size_t floor, const std::vector<std::size_t>& rooms, const Mat3& information) {
  Factor f{FactorKind::FloorCentroid, {floor}, VecX(), information, Loss::Squared, 0.0};
  f.vars.insert(f.vars.end(), rooms.begin(), rooms.end());
  return f;
}

Factor marker_factor(std::size_t kf_pose, std::size_t marker_pose, const Pose& local, const Mat6& information) {
  return {FactorKind::MarkerPose, {kf_pose, marker_pose}, pose_to_vector(local), information, Loss::Squared, 0.0};
}

void GraphProblemConfig::validate() const {
  if (!(odometry_sigma_rot > 0.0) || !(odometry_sigma_trans > 0.0))
    throw std::invalid_argument("optimizer odometry sigmas must be positive");
  if (!(plane_information > 0.0)) throw std::invalid_argument("optimizer.plane_information must be positive");
  if (huber_delta < 0.0) throw std::invalid_argument("optimizer.huber_delta must be nonnegative");
  if (!(pair_angle_tol > 0.0)) throw std::invalid_argument("optimizer.pair_angle_tol must be positive");
  solver.validate();
}

GraphProblem build_problem(const SceneGraph& g, const std::vector<OdometryMeasurement>& odometry,
                           const GraphProblemConfig& cfg) {
  cfg.validate();
  GraphProblem gp;
  Problem& p = gp.problem;
  p.config = cfg.solver;

  bool first = true;
  for (const auto& [id, kf] : g.keyframes) {
    gp.poses[id] = p.add_pose("kf:" + std::to_string(id.value), kf.pose, first);
    first = false;
  }

  Mat6 odo_info = Mat6::Zero();
  odo_info.diagonal().head<3>().setConstant(1.0 / (cfg.odometry_sigma_rot * cfg.odometry_sigma_rot));
  odo_info.diagonal().tail<3>().setConstant(1.0 / (cfg.odometry_sigma_trans * cfg.odometry_sigma_trans));
  for (const auto& o : odometry) {
    const auto a = gp.poses.find(o.from);
    const auto b = gp.poses.find(o.to);
    if (a == gp.poses.end() || b == gp.poses.end()) continue;
    p.add_factor(odometry_factor(a->second, b->second, o.relative, odo_info));
  }

  const Mat3 plane_info = Mat3::Identity() * cfg.plane_information;
  const double huber = cfg.huber_delta * std::sqrt(cfg.plane_information);
  for (const auto& [cid, comp] : g.components) {
    std::vector<const Observation*> usable;
    for (const auto& obs : comp.observations)
      if (gp.poses.contains(obs.keyframe)) usable.push_back(&obs);
    if (usable.empty()) continue;
    Plane init = comp.plane;
    init.normal.normalize();
    const auto idx = p.add_plane("plane:" + std::to_string(cid.value), init);
    gp.planes[cid] = idx;
    for (const auto* obs : usable) {
      // Observations are stored sign-aligned with the fused plane only up to the local orientation.
      Plane local = obs->local;
      const Vec3 predicted = g.keyframes.at(obs->keyframe).pose.rotation.transpose() * init.normal;
      if (predicted.dot(local.normal) < 0.0) local = local.flipped();
      p.add_factor(plane_observation_factor(gp.poses.at(obs->keyframe), idx, local, plane_info, huber));
    }
  }

  if (cfg.structural_factors) {
    for (const auto& [rid, room] : g.rooms) {
      std::vector<std::size_t> walls;
      for (const auto w : room.walls)
        if (const auto it = gp.planes.find(w); it != gp.planes.end()) walls.push_back(it->second);
      if (walls.size() != room.walls.size() || walls.empty()) continue;
      const auto ridx = p.add_point("room:" + std::to_string(rid.value), room.centroid);
      gp.rooms[rid] = ridx;
      p.add_factor(room_centroid_factor(ridx, walls));
      const auto pairs = classify_wall_pairs(room, g, cfg.pair_angle_tol);
      for (const auto& [a, b] : pairs.parallel)
        p.add_factor(room_parallel_factor(gp.planes.at(a), gp.planes.at(b),
                                          1.0 / static_cast<double>(pairs.parallel.size())));
      for (const auto& [a, b] : pairs.perpendicular)
        p.add_factor(room_perpendicular_factor(gp.planes.at(a), gp.planes.at(b),
                                               1.0 / static_cast<double>(pairs.perpendicular.size())));
    }
    if (g.floor) {
      std::vector<std::size_t> rooms;
      for (const auto r : g.floor->rooms)
        if (const auto it = gp.rooms.find(r); it != gp.rooms.end()) rooms.push_back(it->second);
      if (!rooms.empty()) {
        gp.floor = p.add_point("floor:" + std::to_string(g.floor->id.value), g.floor->centroid);
        p.add_factor(floor_centroid_factor(*gp.floor, rooms));
      }
    }
  }

  if (cfg.marker_factors) {
    for (const auto& [mid, marker] : g.markers) {
      std::vector<const MarkerSighting*> usable;
      for (const auto& s : marker.sightings)
        if (gp.poses.contains(s.keyframe)) usable.push_back(&s);
      if (usable.empty()) continue;
      const auto idx = p.add_pose("marker:" + std::to_string(mid.value), marker.pose);
      gp.markers[mid] = idx;
      for (const auto* s : usable) p.add_factor(marker_factor(gp.poses.at(s->keyframe), idx, s->local, s->information));
    }
  }
  return gp;
}

void write_back(const GraphProblem& gp, SceneGraph& g) {
  const auto& vars = gp.problem.variables;
  for (const auto& [id, idx] : gp.poses) g.keyframes.at(id).pose = vars[idx].pose;
  for (const auto& [id, idx] : gp.planes) {
    auto& plane = g.components.at(id).plane;
    const Plane& solved = vars[idx].plane;
    plane.normal = solved.normal;
    plane.offset = solved.offset;
    plane.centroid = solved.project(solved.centroid);
  }
  for (const auto& [id, idx] : gp.rooms) g.rooms.at(id).centroid = vars[idx].point;
  if (gp.floor && g.floor) g.floor->centroid = vars[*gp.floor].point;
  for (const auto& [id, idx] : gp.markers) g.markers.at(id).pose = vars[idx].pose;
}

SolveResult optimize_graph(SceneGraph& g, const std::vector<OdometryMeasurement>& odometry,
                           const GraphProblemConfig& cfg) {
  GraphProblem gp = build_problem(g, odometry, cfg);
  SolveResult result = solve(gp.problem);
  write_back(gp, g);
  return result;
}

namespace {

std::string_view kind_name(VariableKind k) {
  switch (k) {
    case VariableKind::Pose:
      return "POSE";
    case VariableKind::Plane:
      return "PLANE";
    case VariableKind::Point3:
      return "POINT3";
  }
  return "?";
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw std::invalid_argument("problem line " + std::to_string(line) + ": " + what);
}

template <typename T>
T take(std::istringstream& in, std::size_t line, const char* what) {
  T v{};
  if (!(in >> v)) parse_fail(line, std::string("expected ") + what);
  return v;
}

}  // namespace

void save_problem(const Problem& p, std::ostream& out) {
  out << std::setprecision(17);
  const auto& c = p.config;
  out << "SOLVER " << c.max_iterations << ' ' << c.initial_damping << ' ' << c.cost_tolerance << ' '
      << c.update_tolerance << '\n';
  for (std::size_t i = 0; i < p.variables.size(); ++i) {
    const auto& v = p.variables[i];
    out << "VAR " << i << ' ' << kind_name(v.kind) << ' ' << (v.name.empty() ? "-" : v.name) << ' '
        << (v.fixed ? 1 : 0);
    switch (v.kind) {
      case VariableKind::Pose:
        for (const double x : pose_to_vector(v.pose)) out << ' ' << x;
        break;
      case VariableKind::Plane:
        out << ' ' << to_string(v.plane.cls) << ' ' << v.plane.normal.x() << ' ' << v.plane.normal.y() << ' '
            << v.plane.normal.z() << ' ' << v.plane.offset << ' ' << v.plane.centroid.x() << ' '
            << v.plane.centroid.y() << ' ' << v.plane.centroid.z() << ' ' << v.plane.inlier_count;
        break;
      case VariableKind::Point3:
        out << ' ' << v.point.x() << ' ' << v.point.y() << ' ' << v.point.z();
        break;
    }
    out << '\n';
  }
  for (const auto& f : p.factors) {
    out << "FACTOR " << to_string(f.kind) << ' ' << f.vars.size();
    for (const auto v : f.vars) out << ' ' << v;
    out << ' ' << f.measurement.size();
    for (const double x : f.measurement) out << ' ' << x;
    out << ' ' << f.information.rows();
    for (int r = 0; r < f.information.rows(); ++r)
      for (int cidx = 0; cidx < f.information.cols(); ++cidx) out << ' ' << f.information(r, cidx);
    out << ' ' << to_string(f.loss) << ' ' << f.huber_delta << '\n';
  }
}

Problem load_problem(std::istream& in) {
  Problem p;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text[0] == '#') continue;
    std::istringstream ls(text);
    const auto tag = take<std::string>(ls, line, "record tag");
    if (tag == "SOLVER") {
      p.config.max_iterations = take<int>(ls, line, "max_iterations");
      p.config.initial_damping = take<double>(ls, line, "initial_damping");
      p.config.cost_tolerance = take<double>(ls, line, "cost_tolerance");
      p.config.update_tolerance = take<double>(ls, line, "update_tolerance");
    } else if (tag == "VAR") {
      const auto index = take<std::size_t>(ls, line, "variable index");
      if (index != p.variables.size()) parse_fail(line, "variables must be listed in index order");
      const auto kind = take<std::string>(ls, line, "variable kind");
      auto name = take<std::string>(ls, line, "variable name");
      if (name == "-") name.clear();
      const bool fixed = take<int>(ls, line, "fixed flag") != 0;
      if (kind == "POSE") {
        VecX v(12);
        for (int k = 0; k < 12; ++k) v(k) = take<double>(ls, line, "pose value");
        p.add_pose(name, pose_from_vector(v), fixed);
      } else if (kind == "PLANE") {
        Plane pl;
        try {
          pl.cls = parse_semantic_class(take<std::string>(ls, line, "plane class"));
        } catch (const std::invalid_argument& e) {
          parse_fail(line, e.what());
        }
        for (int k = 0; k < 3; ++k) pl.normal(k) = take<double>(ls, line, "plane normal");
        pl.offset = take<double>(ls, line, "plane offset");
        for (int k = 0; k < 3; ++k) pl.centroid(k) = take<double>(ls, line, "plane centroid");
        pl.inlier_count = take<std::size_t>(ls, line, "inlier count");
        p.add_plane(name, pl, fixed);
      } else if (kind == "POINT3") {
        Vec3 x;
        for (int k = 0; k < 3; ++k) x(k) = take<double>(ls, line, "point value");
        p.add_point(name, x, fixed);
      } else {
        parse_fail(line, "unknown variable kind '" + kind + "'");
      }
    } else if (tag == "FACTOR") {
      Factor f;
      try {
        f.kind = parse_factor_kind(take<std::string>(ls, line, "factor kind"));
      } catch (const std::invalid_argument& e) {
        parse_fail(line, e.what());
      }
      const auto nv = take<std::size_t>(ls, line, "variable count");
      for (std::size_t k = 0; k < nv; ++k) f.vars.push_back(take<std::size_t>(ls, line, "variable index"));
      const auto nm = take<std::size_t>(ls, line, "measurement size");
      f.measurement.resize(static_cast<Eigen::Index>(nm));
      for (std::size_t k = 0; k < nm; ++k) f.measurement(static_cast<Eigen::Index>(k)) = take<double>(ls, line, "measurement");
      const auto ni = take<Eigen::Index>(ls, line, "information size");
      f.information.resize(ni, ni);
      for (Eigen::Index r = 0; r < ni; ++r)
        for (Eigen::Index cidx = 0; cidx < ni; ++cidx) f.information(r, cidx) = take<double>(ls, line, "information");
      try {
        f.loss = parse_loss(take<std::string>(ls, line, "loss"));
      } catch (const std::invalid_argument& e) {
        parse_fail(line, e.what());
      }
      f.huber_delta = take<double>(ls, line, "huber delta");
      try {
        p.add_factor(std::move(f));
      } catch (const std::invalid_argument& e) {
        parse_fail(line, e.what());
      }
    } else {
      parse_fail(line, "unknown record '" + tag + "'");
    }
  }
  return p;
}

}  // namespace structmap
