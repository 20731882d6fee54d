#include "ttogm/pose.hpp"

#include <algorithm>
#include <cmath>

namespace ttogm {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

}  // namespace

PoseSE3 PoseSE3::from_matrix(const Eigen::Matrix4d& m) {
  return {Eigen::Quaterniond(Eigen::Matrix3d(m.topLeftCorner<3, 3>())), m.topRightCorner<3, 1>()};
}

PoseSE3 PoseSE3::exp(const Eigen::Matrix<double, 6, 1>& twist) {
  const Eigen::Vector3d rho = twist.head<3>();
  const Eigen::Vector3d phi = twist.tail<3>();
  const double theta = phi.norm();
  const Eigen::Matrix3d W = skew(phi);
  Eigen::Matrix3d V;
  Eigen::Quaterniond q;
  if (theta < 1e-10) {
    V = Eigen::Matrix3d::Identity() + 0.5 * W;
    q = Eigen::Quaterniond(1.0, 0.5 * phi.x(), 0.5 * phi.y(), 0.5 * phi.z());
  } else {
    const double a = (1.0 - std::cos(theta)) / (theta * theta);
    const double b = (theta - std::sin(theta)) / (theta * theta * theta);
    V = Eigen::Matrix3d::Identity() + a * W + b * W * W;
    q = Eigen::Quaterniond(Eigen::AngleAxisd(theta, phi / theta));
  }
  return {q, V * rho};
}

Eigen::Matrix4d PoseSE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

double PoseSE3::yaw() const {
  const Eigen::Vector3d fwd = rotation_ * Eigen::Vector3d::UnitX();
  return std::atan2(fwd.y(), fwd.x());
}

double PoseSE3::angle() const {
  return 2.0 * std::atan2(rotation_.vec().norm(), std::abs(rotation_.w()));
}

double translation_distance(const PoseSE3& a, const PoseSE3& b) {
  return (a.translation() - b.translation()).norm();
}

double rotation_distance(const PoseSE3& a, const PoseSE3& b) { return (a.inverse() * b).angle(); }

}  // namespace ttogm
