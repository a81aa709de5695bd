#pragma once

// Rotation/pose manifold algebra and the pinhole camera model shared by all
// estimator modules.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace vlio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecXd = Eigen::VectorXd;
using MatXd = Eigen::MatrixXd;

struct BehindCamera : std::runtime_error {
  BehindCamera() : std::runtime_error("point at or behind camera depth_min") {}
};
struct NonPositiveDepth : std::runtime_error {
  NonPositiveDepth() : std::runtime_error("unproject requires depth > 0") {}
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Small-angle cutoff for the Taylor branches of exp/log.
inline constexpr double kSmallAngle = 1e-8;

// Rodrigues formula with a second-order Taylor branch near identity.
inline Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 w = skew(omega);
  if (theta2 < kSmallAngle * kSmallAngle) {
    return Mat3::Identity() + w + 0.5 * w * w;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * w +
         ((1.0 - std::cos(theta)) / theta2) * w * w;
}

// Axis-angle vector with angle in [0, pi]. For the pi ambiguity the axis sign
// follows Eigen's AngleAxis convention (first nonzero axis component >= 0).
inline Vec3 so3_log(const Mat3& rot) {
  const Eigen::AngleAxisd aa(rot);
  return aa.angle() * aa.axis();
}

// Right Jacobian of SO(3): d/d(delta) Log(Exp(omega)^T Exp(omega + delta)).
inline Mat3 so3_right_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 w = skew(omega);
  if (theta2 < kSmallAngle * kSmallAngle) {
    return Mat3::Identity() - 0.5 * w + (1.0 / 6.0) * w * w;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() - ((1.0 - std::cos(theta)) / theta2) * w +
         ((theta - std::sin(theta)) / (theta2 * theta)) * w * w;
}

// Nearest orthonormal matrix (polar factor); keeps rotations on-manifold
// under repeated composition.
inline Mat3 reorthonormalize(const Mat3& rot) {
  const Eigen::JacobiSVD<Mat3> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 d = Mat3::Identity();
    d(2, 2) = -1.0;
    r = svd.matrixU() * d * svd.matrixV().transpose();
  }
  return r;
}

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose Identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
};

inline Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline Pose operator*(const Pose& a, const Pose& b) { return compose(a, b); }

struct CameraModel {
  double fx = 0, fy = 0;  // focal lengths [px]
  double cx = 0, cy = 0;  // principal point [px]
  int width = 0, height = 0;
  Pose T_bc;  // camera pose in the body frame (camera -> body)
  double depth_min = 0.01;

  Vec2 project(const Vec3& p_cam) const {
    if (p_cam.z() <= depth_min) throw BehindCamera();
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }

  // Returns false instead of throwing; for visibility scans.
  bool try_project(const Vec3& p_cam, Vec2& px) const {
    if (p_cam.z() <= depth_min) return false;
    px = {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
    return true;
  }

  Vec3 unproject(const Vec2& px, double depth) const {
    if (depth <= 0.0) throw NonPositiveDepth();
    return {(px.x() - cx) / fx * depth, (px.y() - cy) / fy * depth, depth};
  }

  Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p_cam) const {
    const double iz = 1.0 / p_cam.z();
    Eigen::Matrix<double, 2, 3> j;
    j << fx * iz, 0, -fx * p_cam.x() * iz * iz,
         0, fy * iz, -fy * p_cam.y() * iz * iz;
    return j;
  }

  bool in_image(const Vec2& px, double margin = 0.0) const {
    return px.x() >= margin && px.x() <= width - 1 - margin &&
           px.y() >= margin && px.y() <= height - 1 - margin;
  }

  Mat3 intrinsics() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
  }
};

inline Mat3 yaw_rotation(double yaw) {
  Mat3 r;
  const double c = std::cos(yaw), s = std::sin(yaw);
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

}  // namespace vlio
