#pragma once

// Error-state navigation state, IMU strapdown propagation with covariance,
// and LiDAR scan motion compensation.

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "vlio/geom.hpp"
#include "vlio/sync.hpp"

namespace vlio {

struct NonMonotoneTimestamps : std::runtime_error {
  NonMonotoneTimestamps() : std::runtime_error("IMU timestamps not strictly increasing") {}
};
struct TimestampOutOfRange : std::runtime_error {
  TimestampOutOfRange() : std::runtime_error("point timestamp outside trajectory span") {}
};

// Error-state layout: [dtheta, dp, dv, dbg, dba, dg, dtau_1..C].
namespace err {
inline constexpr int kTheta = 0;
inline constexpr int kPos = 3;
inline constexpr int kVel = 6;
inline constexpr int kBiasGyro = 9;
inline constexpr int kBiasAccel = 12;
inline constexpr int kGravity = 15;
inline constexpr int kExposure = 18;
}  // namespace err

struct NavState {
  Mat3 rotation = Mat3::Identity();  // world <- body
  Vec3 position = Vec3::Zero();      // [m]
  Vec3 velocity = Vec3::Zero();      // [m/s]
  Vec3 bias_gyro = Vec3::Zero();     // [rad/s]
  Vec3 bias_accel = Vec3::Zero();    // [m/s^2]
  Vec3 gravity = Vec3(0, 0, -9.81);  // [m/s^2]
  VecXd inv_exposure;                // per-camera tau_k, > 0

  explicit NavState(int num_cameras = 0)
      : inv_exposure(VecXd::Ones(num_cameras)) {}

  int num_cameras() const { return static_cast<int>(inv_exposure.size()); }
  int dim() const { return 18 + num_cameras(); }

  Pose pose() const { return {rotation, position}; }
};

// Rotation updated on the right, vector states added, exposure multiplied by
// exp(dtau) so positivity is preserved.
inline NavState boxplus(const NavState& x, const VecXd& dx) {
  NavState y = x;
  y.rotation = x.rotation * so3_exp(dx.segment<3>(err::kTheta));
  y.position += dx.segment<3>(err::kPos);
  y.velocity += dx.segment<3>(err::kVel);
  y.bias_gyro += dx.segment<3>(err::kBiasGyro);
  y.bias_accel += dx.segment<3>(err::kBiasAccel);
  y.gravity += dx.segment<3>(err::kGravity);
  for (int k = 0; k < x.num_cameras(); ++k) {
    y.inv_exposure[k] = x.inv_exposure[k] * std::exp(dx[err::kExposure + k]);
  }
  return y;
}

inline VecXd boxminus(const NavState& a, const NavState& b) {
  VecXd dx = VecXd::Zero(a.dim());
  dx.segment<3>(err::kTheta) = so3_log(b.rotation.transpose() * a.rotation);
  dx.segment<3>(err::kPos) = a.position - b.position;
  dx.segment<3>(err::kVel) = a.velocity - b.velocity;
  dx.segment<3>(err::kBiasGyro) = a.bias_gyro - b.bias_gyro;
  dx.segment<3>(err::kBiasAccel) = a.bias_accel - b.bias_accel;
  dx.segment<3>(err::kGravity) = a.gravity - b.gravity;
  for (int k = 0; k < a.num_cameras(); ++k) {
    dx[err::kExposure + k] = std::log(a.inv_exposure[k] / b.inv_exposure[k]);
  }
  return dx;
}

struct ProcessNoise {
  double gyro = 1e-3;         // [rad/s/sqrt(Hz)]
  double accel = 1e-2;        // [m/s^2/sqrt(Hz)]
  double bias_gyro_walk = 1e-5;
  double bias_accel_walk = 1e-5;
};

// One pose/velocity sample of the propagated trajectory, kept for scan
// motion compensation.
struct StateSample {
  double t = 0.0;
  Pose pose;
  Vec3 velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();  // body frame, bias-corrected
};

struct PropagationResult {
  NavState state;
  MatXd covariance;
  std::vector<StateSample> trajectory;
};

// Discrete strapdown integration with midpoint rates and first-order
// error-state covariance propagation. The trajectory holds one sample per
// IMU timestamp.
inline PropagationResult propagate(const NavState& x0, const MatXd& p0,
                                   const std::vector<ImuSample>& imu,
                                   const ProcessNoise& noise = {}) {
  if (imu.empty()) throw NonMonotoneTimestamps();
  const int dim = x0.dim();
  NavState x = x0;
  MatXd cov = p0;
  std::vector<StateSample> traj;
  traj.reserve(imu.size());
  {
    const Vec3 w0 = imu.front().angular_velocity - x.bias_gyro;
    traj.push_back({imu.front().timestamp, x.pose(), x.velocity, w0});
  }
  for (std::size_t i = 0; i + 1 < imu.size(); ++i) {
    const double dt = imu[i + 1].timestamp - imu[i].timestamp;
    if (dt <= 0.0) throw NonMonotoneTimestamps();
    const Vec3 w = 0.5 * (imu[i].angular_velocity + imu[i + 1].angular_velocity) -
                   x.bias_gyro;
    const Vec3 a = 0.5 * (imu[i].linear_acceleration + imu[i + 1].linear_acceleration) -
                   x.bias_accel;
    const Mat3 r_mid = x.rotation * so3_exp(0.5 * dt * w);
    const Mat3 r_next = x.rotation * so3_exp(dt * w);
    const Vec3 acc_world = r_mid * a + x.gravity;

    // Error-state transition consistent with the discrete nominal map.
    MatXd f = MatXd::Identity(dim, dim);
    f.block<3, 3>(err::kTheta, err::kTheta) = so3_exp(dt * w).transpose();
    f.block<3, 3>(err::kTheta, err::kBiasGyro) = -so3_right_jacobian(dt * w) * dt;
    f.block<3, 3>(err::kPos, err::kVel) = dt * Mat3::Identity();
    f.block<3, 3>(err::kPos, err::kTheta) = -0.5 * dt * dt * r_mid * skew(a);
    f.block<3, 3>(err::kPos, err::kBiasAccel) = -0.5 * dt * dt * r_mid;
    f.block<3, 3>(err::kPos, err::kGravity) = 0.5 * dt * dt * Mat3::Identity();
    f.block<3, 3>(err::kVel, err::kTheta) = -r_mid * skew(a) * dt;
    f.block<3, 3>(err::kVel, err::kBiasAccel) = -r_mid * dt;
    f.block<3, 3>(err::kVel, err::kGravity) = dt * Mat3::Identity();

    MatXd q = MatXd::Zero(dim, dim);
    q.block<3, 3>(err::kTheta, err::kTheta) =
        noise.gyro * noise.gyro * dt * Mat3::Identity();
    q.block<3, 3>(err::kVel, err::kVel) =
        noise.accel * noise.accel * dt * Mat3::Identity();
    q.block<3, 3>(err::kBiasGyro, err::kBiasGyro) =
        noise.bias_gyro_walk * noise.bias_gyro_walk * dt * Mat3::Identity();
    q.block<3, 3>(err::kBiasAccel, err::kBiasAccel) =
        noise.bias_accel_walk * noise.bias_accel_walk * dt * Mat3::Identity();

    x.position += x.velocity * dt + 0.5 * acc_world * dt * dt;
    x.velocity += acc_world * dt;
    x.rotation = r_next;
    cov = f * cov * f.transpose() + q;
    cov = 0.5 * (cov + cov.transpose());

    traj.push_back({imu[i + 1].timestamp, x.pose(), x.velocity, w});
  }
  x.rotation = reorthonormalize(x.rotation);
  return {x, cov, traj};
}

// Pose at time t by piecewise constant-velocity interpolation between
// trajectory samples.
inline Pose interpolate_pose(const std::vector<StateSample>& traj, double t) {
  if (traj.empty() || t < traj.front().t - 1e-9 || t > traj.back().t + 1e-9) {
    throw TimestampOutOfRange();
  }
  std::size_t i = 0;
  while (i + 1 < traj.size() && traj[i + 1].t <= t) ++i;
  const StateSample& s = traj[i];
  const double dt = t - s.t;
  return {s.pose.rotation * so3_exp(dt * s.angular_velocity),
          s.pose.translation + dt * s.velocity};
}

// Transforms each point from the body frame at its own timestamp into the
// body frame at scan end (the last trajectory sample).
inline std::vector<Vec3> undistort_scan(const std::vector<TimedPoint>& points,
                                        const std::vector<StateSample>& traj) {
  if (traj.empty()) throw TimestampOutOfRange();
  const Pose end_inv = traj.back().pose.inverse();
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const Pose at_t = interpolate_pose(traj, p.timestamp);
    out.push_back(end_inv.apply(at_t.apply(p.position)));
  }
  return out;
}

}  // namespace vlio
