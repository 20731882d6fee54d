#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ttogm {

/// Rigid transform in 3D. Maps points from the child frame into the parent
/// frame: p_parent = rotation * p_child + translation.
class PoseSE3 {
 public:
  PoseSE3() = default;
  PoseSE3(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation.normalized()), translation_(translation) {}

  static PoseSE3 identity() { return {}; }
  static PoseSE3 from_xyz_yaw(double x, double y, double z, double yaw) {
    return {Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ())), {x, y, z}};
  }
  static PoseSE3 from_matrix(const Eigen::Matrix4d& m);

  /// Exponential map of a twist (rho, phi): translation part first, rotation
  /// part last. Uses the closed-form SE(3) left Jacobian.
  static PoseSE3 exp(const Eigen::Matrix<double, 6, 1>& twist);

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix3d rotation_matrix() const { return rotation_.toRotationMatrix(); }
  Eigen::Matrix4d matrix() const;

  PoseSE3 inverse() const {
    const Eigen::Quaterniond inv = rotation_.conjugate();
    return {inv, -(inv * translation_)};
  }

  PoseSE3 operator*(const PoseSE3& rhs) const {
    return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_};
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  /// Heading about the world z axis, in (-pi, pi].
  double yaw() const;

  /// Rotation angle of the pose in radians, in [0, pi].
  double angle() const;

  bool is_finite() const { return rotation_.coeffs().allFinite() && translation_.allFinite(); }

 private:
  Eigen::Quaterniond rotation_ = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Translation distance (m) and rotation angle (rad) between two poses.
double translation_distance(const PoseSE3& a, const PoseSE3& b);
double rotation_distance(const PoseSE3& a, const PoseSE3& b);

}  // namespace ttogm
