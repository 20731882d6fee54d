#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "ttogm/kdtree.hpp"
#include "ttogm/pointcloud.hpp"
#include "ttogm/pose.hpp"

namespace ttogm {

struct GicpConfig {
  int knn = 10;
  double cov_epsilon = 1e-3;
  int max_iterations = 64;
  double translation_tol = 1e-6;       // m
  double rotation_tol = 1e-6;          // rad
  double max_correspondence_dist = 1.0;  // m
  double keyframe_dist = 1.0;          // m
  double keyframe_angle = 30.0;        // deg
  int submap_k_nearest = 10;

  void validate() const;
};

struct CovPoint {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
};

using CovCloud = std::vector<CovPoint>;

/// Sample covariance of each point's knn neighborhood (the point included),
/// before any regularization.
std::vector<Eigen::Matrix3d> neighborhood_covariances(const PointCloud& cloud, const GicpConfig& cfg);

/// Plane-to-plane regularized covariances: the neighborhood eigenvalues are
/// replaced by (cov_epsilon, 1, 1), smallest first.
CovCloud estimate_covariances(const PointCloud& cloud, const GicpConfig& cfg);

CovCloud transform_cov_cloud(const CovCloud& cloud, const PoseSE3& pose);

/// Registration target: covariance points plus a spatial index over them.
class GicpTarget {
 public:
  explicit GicpTarget(CovCloud points);

  const CovCloud& points() const { return points_; }
  const KdTree3& index() const { return *index_; }
  bool empty() const { return points_.empty(); }

 private:
  CovCloud points_;
  std::unique_ptr<KdTree3> index_;
};

struct GicpResult {
  PoseSE3 pose;
  double residual = 0.0;  // final cost / correspondence count
  int iterations = 0;
  std::size_t correspondences = 0;
  bool converged = false;
  /// Per-pair cost after re-association rose on three consecutive iterations
  /// to more than twice the best value seen.
  bool diverged = false;
};

/// Finds the pose X minimizing sum d^T (C_t + R C_s R^T)^-1 d with
/// d = p_t - X p_s over nearest-neighbor pairs, re-associated every iteration.
/// Gauss-Newton on SE(3) with left increments and step halving.
GicpResult gicp_align(const CovCloud& source, const GicpTarget& target, const PoseSE3& init, const GicpConfig& cfg);
GicpResult gicp_align(const CovCloud& source, const CovCloud& target, const PoseSE3& init, const GicpConfig& cfg);

struct Keyframe {
  std::uint64_t id = 0;
  PoseSE3 pose;             // world frame
  PointCloud cloud;         // filtered, sensor frame
  CovCloud covariances;     // sensor frame
};

struct Submap {
  CovCloud points;  // world frame
  std::vector<std::uint64_t> source_keyframe_ids;

  bool empty() const { return points.empty(); }
};

struct ScanToMapResult {
  PoseSE3 pose;
  GicpResult alignment;
  /// Alignment diverged and the prior pose was returned instead.
  bool fell_back_to_prior = false;
};

/// World pose of `scan` against the submap, starting from `prior`.
ScanToMapResult scan_to_map_align(const CovCloud& scan, const GicpTarget& submap, const PoseSE3& prior,
                                  const GicpConfig& cfg);
ScanToMapResult scan_to_map_align(const CovCloud& scan, const Submap& submap, const PoseSE3& prior,
                                  const GicpConfig& cfg);

/// Keyframe database. Single writer; copies are cheap to snapshot for readers
/// since keyframes are shared immutably.
class KeyframeStore {
 public:
  struct Update {
    bool added = false;
    Submap submap;
  };

  /// Adds a keyframe iff the store is empty or the nearest keyframe (by
  /// translation) is at least keyframe_dist away or rotated by at least
  /// keyframe_angle. Returns the submap around `pose`.
  /// `covariances` are the sensor-frame covariances of `cloud`.
  Update update(const PoseSE3& pose, const PointCloud& cloud, const CovCloud& covariances, const GicpConfig& cfg);

  /// The insertion rule of update() without building the submap.
  bool maybe_add(const PoseSE3& pose, const PointCloud& cloud, const CovCloud& covariances, const GicpConfig& cfg);

  /// Ids of the submap_k_nearest keyframes closest to `pose`, ordered by
  /// distance then id.
  std::vector<std::uint64_t> nearest_ids(const PoseSE3& pose, const GicpConfig& cfg) const;

  Submap build_submap(const std::vector<std::uint64_t>& ids) const;

  std::size_t size() const { return keyframes_.size(); }
  bool empty() const { return keyframes_.empty(); }
  const Keyframe& at(std::size_t i) const { return *keyframes_[i]; }

 private:
  std::vector<std::shared_ptr<const Keyframe>> keyframes_;
  std::uint64_t next_id_ = 0;
};

}  // namespace ttogm
