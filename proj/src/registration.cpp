#include "ttogm/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"

namespace ttogm {

void GicpConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0.0)) throw ConfigError(fmt::format("gicp.{} must be > 0, got {}", name, v));
  };
  positive("knn", knn);
  positive("cov_epsilon", cov_epsilon);
  positive("max_iterations", max_iterations);
  positive("translation_tol", translation_tol);
  positive("rotation_tol", rotation_tol);
  positive("max_correspondence_dist", max_correspondence_dist);
  positive("keyframe_dist", keyframe_dist);
  positive("keyframe_angle", keyframe_angle);
  positive("submap_k_nearest", submap_k_nearest);
}

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

std::vector<Eigen::Vector3d> positions_of(const PointCloud& cloud) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.emplace_back(p.x, p.y, p.z);
  return out;
}

std::vector<Eigen::Vector3d> positions_of(const CovCloud& cloud) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(p.position);
  return out;
}

struct Pair {
  std::size_t source;
  std::size_t target;
};

std::vector<Pair> associate(const CovCloud& source, const GicpTarget& target, const PoseSE3& pose,
                            double max_dist) {
  std::vector<Pair> pairs;
  pairs.reserve(source.size());
  const double max_d2 = max_dist * max_dist;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto [j, d2] = target.index().nearest(pose * source[i].position);
    if (d2 <= max_d2) pairs.push_back({i, j});
  }
  return pairs;
}

double cost_at(const CovCloud& source, const GicpTarget& target, const std::vector<Pair>& pairs,
               const PoseSE3& pose) {
  const Eigen::Matrix3d R = pose.rotation_matrix();
  double cost = 0.0;
  for (const auto& pr : pairs) {
    const auto& s = source[pr.source];
    const auto& t = target.points()[pr.target];
    const Eigen::Matrix3d combined = t.covariance + R * s.covariance * R.transpose();
    const Eigen::Vector3d d = t.position - (R * s.position + pose.translation());
    cost += d.dot(combined.inverse() * d);
  }
  return cost;
}

}  // namespace

std::vector<Eigen::Matrix3d> neighborhood_covariances(const PointCloud& cloud, const GicpConfig& cfg) {
  const auto k = static_cast<std::size_t>(cfg.knn);
  if (cloud.size() <= k) {
    throw PreconditionError(
        fmt::format("covariance estimation needs more than knn={} points, cloud has {}", cfg.knn, cloud.size()));
  }
  const KdTree3 tree(positions_of(cloud));
  std::vector<std::size_t> idx(k);
  std::vector<double> d2(k);
  std::vector<Eigen::Matrix3d> out;
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::size_t found = tree.knn(tree.point(i), k, idx.data(), d2.data());
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (std::size_t n = 0; n < found; ++n) mean += tree.point(idx[n]);
    mean /= static_cast<double>(found);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t n = 0; n < found; ++n) {
      const Eigen::Vector3d c = tree.point(idx[n]) - mean;
      cov += c * c.transpose();
    }
    out.push_back(cov / static_cast<double>(found));
  }
  return out;
}

CovCloud estimate_covariances(const PointCloud& cloud, const GicpConfig& cfg) {
  const auto raw = neighborhood_covariances(cloud, cfg);
  const Eigen::Vector3d values(cfg.cov_epsilon, 1.0, 1.0);
  CovCloud out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(raw[i]);
    const Eigen::Matrix3d& V = eig.eigenvectors();
    out[i].position = {cloud.points[i].x, cloud.points[i].y, cloud.points[i].z};
    Eigen::Matrix3d c = V * values.asDiagonal() * V.transpose();
    out[i].covariance = 0.5 * (c + c.transpose());
  }
  return out;
}

CovCloud transform_cov_cloud(const CovCloud& cloud, const PoseSE3& pose) {
  const Eigen::Matrix3d R = pose.rotation_matrix();
  CovCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back({pose * p.position, R * p.covariance * R.transpose()});
  return out;
}

GicpTarget::GicpTarget(CovCloud points)
    : points_(std::move(points)), index_(std::make_unique<KdTree3>(positions_of(points_))) {}

GicpResult gicp_align(const CovCloud& source, const CovCloud& target, const PoseSE3& init, const GicpConfig& cfg) {
  if (target.empty()) throw PreconditionError("gicp_align: target cloud is empty");
  return gicp_align(source, GicpTarget(target), init, cfg);
}

GicpResult gicp_align(const CovCloud& source, const GicpTarget& target, const PoseSE3& init, const GicpConfig& cfg) {
  if (source.empty()) throw PreconditionError("gicp_align: source cloud is empty");
  if (target.empty()) throw PreconditionError("gicp_align: target cloud is empty");

  constexpr int kMaxHalvings = 8;
  constexpr int kDivergenceRun = 3;
  constexpr double kDivergenceFactor = 2.0;

  GicpResult result;
  result.pose = init;
  double last_cost = std::numeric_limits<double>::infinity();
  std::size_t last_pairs = 0;
  double prev_assoc_cost = std::numeric_limits<double>::infinity();
  double best_mean = std::numeric_limits<double>::infinity();
  PoseSE3 best_pose = init;
  int rising = 0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const auto pairs = associate(source, target, result.pose, cfg.max_correspondence_dist);
    if (pairs.empty()) {
      if (iter == 0) {
        throw NoCorrespondencesError(fmt::format(
            "gicp_align: no correspondences within {} m at the initial pose", cfg.max_correspondence_dist));
      }
      break;
    }

    const Eigen::Matrix3d R = result.pose.rotation_matrix();
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
    double cost = 0.0;
    for (const auto& pr : pairs) {
      const auto& s = source[pr.source];
      const auto& t = target.points()[pr.target];
      const Eigen::Vector3d p = R * s.position + result.pose.translation();
      const Eigen::Matrix3d M = (t.covariance + R * s.covariance * R.transpose()).inverse();
      const Eigen::Vector3d d = t.position - p;
      Eigen::Matrix<double, 3, 6> J;
      J.leftCols<3>() = -Eigen::Matrix3d::Identity();
      J.rightCols<3>() = skew(p);
      const Eigen::Matrix<double, 6, 3> JtM = J.transpose() * M;
      H.noalias() += JtM * J;
      b.noalias() += JtM * d;
      cost += d.dot(M * d);
    }
    last_cost = cost;
    last_pairs = pairs.size();
    result.iterations = iter + 1;

    // Re-association makes the per-pair cost jitter near the optimum, so a
    // rising run ends the search at the best pose seen; it only counts as
    // divergence when the cost has grown well beyond that best.
    const double mean_cost = cost / static_cast<double>(pairs.size());
    if (mean_cost < best_mean) {
      best_mean = mean_cost;
      best_pose = result.pose;
    }
    rising = mean_cost > prev_assoc_cost ? rising + 1 : 0;
    prev_assoc_cost = mean_cost;
    if (rising >= kDivergenceRun) {
      result.diverged = mean_cost > kDivergenceFactor * best_mean;
      result.converged = !result.diverged;
      result.pose = best_pose;
      last_cost = best_mean * static_cast<double>(pairs.size());
      break;
    }

    // Tiny ridge keeps the solve defined for degenerate geometry.
    const double ridge = 1e-9 * std::max(H.trace() / 6.0, 1e-12);
    Eigen::Matrix<double, 6, 1> step = -(H + ridge * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(b);
    if (!step.allFinite()) break;

    bool accepted = false;
    PoseSE3 candidate;
    for (int h = 0; h <= kMaxHalvings; ++h) {
      candidate = PoseSE3::exp(step) * result.pose;
      const double c = cost_at(source, target, pairs, candidate);
      if (c <= cost) {
        last_cost = c;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.converged = true;
      break;
    }
    result.pose = candidate;
    if (step.head<3>().norm() < cfg.translation_tol && step.tail<3>().norm() < cfg.rotation_tol) {
      result.converged = true;
      break;
    }
  }
  result.correspondences = last_pairs;
  result.residual = last_pairs > 0 ? last_cost / static_cast<double>(last_pairs) : 0.0;
  return result;
}

ScanToMapResult scan_to_map_align(const CovCloud& scan, const GicpTarget& submap, const PoseSE3& prior,
                                  const GicpConfig& cfg) {
  if (submap.empty()) throw PreconditionError("scan_to_map_align: submap is empty");
  ScanToMapResult out;
  out.alignment = gicp_align(scan, submap, prior, cfg);
  if (out.alignment.diverged) {
    spdlog::warn("scan-to-map alignment diverged after {} iterations, keeping prior pose",
                 out.alignment.iterations);
    out.fell_back_to_prior = true;
    out.pose = prior;
  } else {
    out.pose = out.alignment.pose;
  }
  return out;
}

ScanToMapResult scan_to_map_align(const CovCloud& scan, const Submap& submap, const PoseSE3& prior,
                                  const GicpConfig& cfg) {
  if (submap.empty()) throw PreconditionError("scan_to_map_align: submap is empty");
  return scan_to_map_align(scan, GicpTarget(submap.points), prior, cfg);
}

bool KeyframeStore::maybe_add(const PoseSE3& pose, const PointCloud& cloud, const CovCloud& covariances,
                              const GicpConfig& cfg) {
  if (!pose.is_finite()) throw PreconditionError("update_keyframes: pose is not finite");
  bool add = keyframes_.empty();
  if (!add) {
    const Keyframe* nearest = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& kf : keyframes_) {
      const double d = translation_distance(kf->pose, pose);
      if (d < best) {
        best = d;
        nearest = kf.get();
      }
    }
    const double angle_deg = rotation_distance(nearest->pose, pose) * 180.0 / std::numbers::pi;
    // Small slack so a rotation of exactly keyframe_angle is not lost to rounding.
    add = best >= cfg.keyframe_dist || angle_deg >= cfg.keyframe_angle - 1e-9;
  }
  if (add) {
    auto kf = std::make_shared<Keyframe>();
    kf->id = next_id_++;
    kf->pose = pose;
    kf->cloud = cloud;
    kf->covariances = covariances;
    keyframes_.push_back(std::move(kf));
  }
  return add;
}

KeyframeStore::Update KeyframeStore::update(const PoseSE3& pose, const PointCloud& cloud,
                                            const CovCloud& covariances, const GicpConfig& cfg) {
  const bool added = maybe_add(pose, cloud, covariances, cfg);
  return {added, build_submap(nearest_ids(pose, cfg))};
}

std::vector<std::uint64_t> KeyframeStore::nearest_ids(const PoseSE3& pose, const GicpConfig& cfg) const {
  std::vector<std::pair<double, std::uint64_t>> ranked;
  ranked.reserve(keyframes_.size());
  for (const auto& kf : keyframes_) ranked.emplace_back(translation_distance(kf->pose, pose), kf->id);
  std::sort(ranked.begin(), ranked.end());
  const std::size_t n = std::min(ranked.size(), static_cast<std::size_t>(cfg.submap_k_nearest));
  std::vector<std::uint64_t> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(ranked[i].second);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Submap KeyframeStore::build_submap(const std::vector<std::uint64_t>& ids) const {
  Submap map;
  for (const auto id : ids) {
    const auto it = std::find_if(keyframes_.begin(), keyframes_.end(), [&](const auto& kf) { return kf->id == id; });
    if (it == keyframes_.end()) throw PreconditionError(fmt::format("unknown keyframe id {}", id));
    const auto world = transform_cov_cloud((*it)->covariances, (*it)->pose);
    map.points.insert(map.points.end(), world.begin(), world.end());
    map.source_keyframe_ids.push_back(id);
  }
  return map;
}

}  // namespace ttogm
