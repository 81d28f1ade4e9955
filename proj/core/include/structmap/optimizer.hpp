#pragma once

#include "structmap/scene_graph.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace structmap {

enum class VariableKind : std::uint8_t { Pose, Plane, Point3 };

/// Optimizable node. Only the member matching `kind` is meaningful.
/// Tangent coordinates: pose [omega; v] with R <- R Exp(omega), t <- t + v;
/// plane [delta (2, in tangent_basis(n)); delta_d]; point3 additive.
struct Variable {
  VariableKind kind = VariableKind::Point3;
  std::string name;
  Pose pose;
  Plane plane;
  Vec3 point = Vec3::Zero();
  bool fixed = false;

  int dim() const { return kind == VariableKind::Pose ? 6 : 3; }
};

/// Applies a tangent-space update. Plane normals are re-normalized.
void retract(Variable& v, const Eigen::VectorXd& delta);

enum class FactorKind : std::uint8_t {
  Odometry,          // [pose_i, pose_j], measurement: relative pose (12 values)
  PlaneObservation,  // [pose, plane], measurement: local plane (n, d)
  RoomParallel,      // [plane_a, plane_b]
  RoomPerpendicular, // [plane_a, plane_b]
  RoomCentroid,      // [room point, wall planes...]
  FloorCentroid,     // [floor point, room points...]
  MarkerPose,        // [keyframe pose, marker pose], measurement: marker pose in the keyframe (12 values)
};

std::string_view to_string(FactorKind kind);
FactorKind parse_factor_kind(std::string_view name);

/// rho applied to s = r^T Lambda r. Absolute gives sqrt(s), i.e. an L1 term on a scalar residual.
enum class Loss : std::uint8_t { Squared, Huber, Absolute };

std::string_view to_string(Loss loss);
Loss parse_loss(std::string_view name);

struct Factor {
  FactorKind kind = FactorKind::Odometry;
  std::vector<std::size_t> vars;
  Eigen::VectorXd measurement;
  Eigen::MatrixXd information;
  Loss loss = Loss::Squared;
  /// Huber threshold on the Mahalanobis norm.
  double huber_delta = 0.0;

  int residual_dim() const;
};

/// Row-major rotation followed by translation.
Eigen::VectorXd pose_to_vector(const Pose& p);
Pose pose_from_vector(const Eigen::VectorXd& v);

struct SolverConfig {
  int max_iterations = 50;
  double initial_damping = 1e-4;
  double cost_tolerance = 1e-9;    // relative cost decrease
  double update_tolerance = 1e-8;  // step norm

  void validate() const;
};

class Problem {
 public:
  std::vector<Variable> variables;
  std::vector<Factor> factors;
  SolverConfig config;

  std::size_t add_pose(std::string name, const Pose& p, bool fixed = false);
  std::size_t add_plane(std::string name, const Plane& p, bool fixed = false);
  std::size_t add_point(std::string name, const Vec3& p, bool fixed = false);
  /// Checks variable kinds and matrix dimensions, then appends.
  void add_factor(Factor f);

  /// Throws std::invalid_argument when there are no factors, a free variable has no factor,
  /// or a connected component has no fixed variable.
  void validate() const;
};

/// Residual of one factor. When `jacobians` is given it receives one block per factor variable
/// (residual_dim x variable dim), in tangent coordinates.
Eigen::VectorXd evaluate_factor(const Factor& f, const std::vector<Variable>& vars,
                                std::vector<Eigen::MatrixXd>* jacobians = nullptr);

/// rho(r^T Lambda r): s, Huber (2 delta sqrt(s) - delta^2 beyond delta^2) or sqrt(s).
double factor_cost(const Factor& f, const Eigen::VectorXd& residual);
double total_cost(const Problem& p);

struct SolveResult {
  /// Total cost before the first iteration, then after every accepted step.
  std::vector<double> cost_trace;
  int iterations = 0;
  bool converged = false;
  std::string termination;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling on a sparse LDLT.
/// Steps are applied only when they decrease the cost by more than the relative tolerance.
SolveResult solve(Problem& p);

/// Central differences through `retract`. Columns follow the tangent coordinates of `vars` in order.
Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const std::vector<Variable>&)>& residual,
                                 const std::vector<Variable>& vars, double h = 1e-6);
/// Same for one factor, columns ordered by the factor's variable list.
Eigen::MatrixXd numeric_jacobian(const Factor& f, const std::vector<Variable>& vars, double h = 1e-6);
/// Analytic blocks of `evaluate_factor` stacked horizontally.
Eigen::MatrixXd analytic_jacobian(const Factor& f, const std::vector<Variable>& vars);

// Scalar cost terms.
double parallel_cost(const Vec3& ni, const Vec3& nj);
double perpendicular_cost(const Vec3& ni, const Vec3& nj);
/// Throws std::domain_error on an empty list.
double room_centroid_cost(const Vec3& room_centroid, const std::vector<Vec3>& wall_centroids);
double floor_cost(const Vec3& floor_centroid, const std::vector<Vec3>& room_centroids,
                  const Mat3& information = Mat3::Identity());

/// log((local_obs ⊞ kf_pose) ⊟ marker_global) = pose_log(M^-1 K m).
Vec6 marker_residual(const Pose& kf_pose, const Pose& marker_global, const Pose& local_obs);
/// Map plane predicted in the keyframe frame against the local observation:
/// [B(n_obs)^T n_pred; d_pred - d_obs].
Vec3 plane_observation_residual(const Pose& kf_pose, const Plane& map_plane, const Plane& local_plane);

struct WallPairs {
  std::vector<std::pair<ComponentId, ComponentId>> parallel;
  std::vector<std::pair<ComponentId, ComponentId>> perpendicular;
};

/// Parallel: normals within angle_tol of (anti)parallel and both walls facing the cluster centroid from
/// opposite sides. Perpendicular: within angle_tol of 90 degrees.
WallPairs classify_wall_pairs(const Room& room, const SceneGraph& g, double angle_tol);
double room_total_cost(const Room& room, const SceneGraph& g, double angle_tol);

// Factor constructors.
Factor odometry_factor(std::size_t pose_i, std::size_t pose_j, const Pose& relative, const Mat6& information);
Factor plane_observation_factor(std::size_t pose, std::size_t plane, const Plane& local, const Mat3& information,
                                double huber_delta = 0.0);
/// Residual sqrt(1 - |n_a.n_b|), information `weight`: cost weight * parallel_cost.
Factor room_parallel_factor(std::size_t plane_a, std::size_t plane_b, double weight);
/// Residual n_a.n_b under the absolute loss with information weight^2: cost weight * perpendicular_cost.
Factor room_perpendicular_factor(std::size_t plane_a, std::size_t plane_b, double weight);
Factor room_centroid_factor(std::size_t room, const std::vector<std::size_t>& walls,
                            const Mat3& information = Mat3::Identity());
Factor floor_centroid_factor(std::size_t floor, const std::vector<std::size_t>& rooms,
                             const Mat3& information = Mat3::Identity());
Factor marker_factor(std::size_t kf_pose, std::size_t marker_pose, const Pose& local, const Mat6& information);

/// Relative pose between consecutive keyframes as reported by odometry.
struct OdometryMeasurement {
  KeyFrameId from;
  KeyFrameId to;
  Pose relative;
};

struct GraphProblemConfig {
  double odometry_sigma_rot = 0.2 * M_PI / 180.0;  // radians per step
  double odometry_sigma_trans = 0.005;             // meters per step
  double plane_information = 1e4;
  /// Huber threshold in meters on plane-observation residuals.
  double huber_delta = 0.1;
  double pair_angle_tol = 10.0 * M_PI / 180.0;
  bool structural_factors = true;
  bool marker_factors = true;
  SolverConfig solver;

  void validate() const;
};

struct GraphProblem {
  Problem problem;
  std::map<KeyFrameId, std::size_t> poses;
  std::map<ComponentId, std::size_t> planes;
  std::map<RoomId, std::size_t> rooms;
  std::optional<std::size_t> floor;
  std::map<MarkerId, std::size_t> markers;
};

/// Poses (lowest keyframe id fixed), planes, room/floor centroids and markers with their factors.
GraphProblem build_problem(const SceneGraph& g, const std::vector<OdometryMeasurement>& odometry,
                           const GraphProblemConfig& cfg);
/// Copies solved values back; plane centroids are projected onto the updated planes.
void write_back(const GraphProblem& gp, SceneGraph& g);
SolveResult optimize_graph(SceneGraph& g, const std::vector<OdometryMeasurement>& odometry,
                           const GraphProblemConfig& cfg);

/// Plain-text dump: one SOLVER line, then one VAR or FACTOR per line.
void save_problem(const Problem& p, std::ostream& out);
Problem load_problem(std::istream& in);

}  // namespace structmap
