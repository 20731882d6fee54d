#pragma once

#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nanoflann.hpp>

namespace ttogm {

/// Static 3D kd-tree over a point set it owns. Built once, queried many times.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Eigen::Vector3d> points)
      : adaptor_{std::move(points)},
        index_(std::make_unique<Index>(3, adaptor_, nanoflann::KDTreeSingleIndexAdaptorParams(10))) {}

  KdTree3(const KdTree3&) = delete;
  KdTree3& operator=(const KdTree3&) = delete;

  std::size_t size() const { return adaptor_.points.size(); }
  const Eigen::Vector3d& point(std::size_t i) const { return adaptor_.points[i]; }

  /// k nearest neighbors, closest first. Returns the number found.
  std::size_t knn(const Eigen::Vector3d& query, std::size_t k, std::size_t* indices, double* sq_dists) const {
    return index_->knnSearch(query.data(), k, indices, sq_dists);
  }

  /// Nearest neighbor as (index, squared distance). The tree must be nonempty.
  std::pair<std::size_t, double> nearest(const Eigen::Vector3d& query) const {
    std::size_t idx = 0;
    double d2 = 0.0;
    index_->knnSearch(query.data(), 1, &idx, &d2);
    return {idx, d2};
  }

 private:
  struct Adaptor {
    std::vector<Eigen::Vector3d> points;
    std::size_t kdtree_get_point_count() const { return points.size(); }
    double kdtree_get_pt(std::size_t i, std::size_t dim) const { return points[i][static_cast<int>(dim)]; }
    template <class BBox>
    bool kdtree_get_bbox(BBox&) const {
      return false;
    }
  };
  using Index = nanoflann::KDTreeSingleIndexAdaptor<nanoflann::L2_Simple_Adaptor<double, Adaptor>, Adaptor, 3,
                                                     std::size_t>;

  Adaptor adaptor_;
  std::unique_ptr<Index> index_;
};

}  // namespace ttogm
