#pragma once

// Direct photometric front-end: exposure/vignetting normalization, planar
// homography warps, intra-camera patch residuals, and cross-view migration
// detection and residuals.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "vlio/geom.hpp"
#include "vlio/image.hpp"
#include "vlio/imu.hpp"
#include "vlio/voxmap.hpp"

namespace vlio {

struct PlaneTooClose : std::runtime_error {
  PlaneTooClose() : std::runtime_error("plane distance below d_min") {}
};

struct CameraPhotoCalib {
  double alpha = 1.0;                      // exposure scale
  std::array<double, 3> beta = {0, 0, 0};  // vignetting polynomial
  double center_x = 0.0, center_y = 0.0;   // image center [px]
  double inv_corner_r2 = 1.0;              // 1 / r^2 at the image corner

  static CameraPhotoCalib for_image(int width, int height, double alpha = 1.0,
                                    std::array<double, 3> beta = {0, 0, 0}) {
    CameraPhotoCalib c;
    c.alpha = alpha;
    c.beta = beta;
    c.center_x = 0.5 * (width - 1);
    c.center_y = 0.5 * (height - 1);
    c.inv_corner_r2 = 1.0 / (c.center_x * c.center_x + c.center_y * c.center_y);
    return c;
  }

  double normalized_r2(double u, double v) const {
    const double du = u - center_x, dv = v - center_y;
    return (du * du + dv * dv) * inv_corner_r2;
  }

  double vignette(double r2) const {
    return 1.0 + beta[0] * r2 + beta[1] * r2 * r2 + beta[2] * r2 * r2 * r2;
  }
};

using PhotometricCalib = std::vector<CameraPhotoCalib>;

// I' = alpha * V(r^2) * I, with r^2 = 1 at the image corners.
inline double normalize_intensity(double intensity, double u, double v,
                                  const CameraPhotoCalib& calib) {
  return calib.alpha * calib.vignette(calib.normalized_r2(u, v)) * intensity;
}

inline Image normalize_image(const Image& raw, const CameraPhotoCalib& calib) {
  Image out(raw.width(), raw.height());
  for (int y = 0; y < raw.height(); ++y) {
    for (int x = 0; x < raw.width(); ++x) {
      out.at(x, y) = normalize_intensity(raw.at(x, y), x, y, calib);
    }
  }
  return out;
}

// T_{j->i}(t) = T_j^w (T_i^w)^{-1}.
inline Pose relative_transform(const Pose& pose_j, const Pose& pose_i) {
  return pose_j * pose_i.inverse();
}

// Plane-induced ray homography H = R + t n^T / d. R, t map camera-i
// coordinates to camera-j coordinates; the plane satisfies n^T p = d in
// camera i with d > 0 (normal pointing away from the camera).
inline Mat3 homography(const Mat3& rotation_ji, const Vec3& translation_ji,
                       const Vec3& normal_i, double distance_i,
                       double d_min = 0.05) {
  if (distance_i <= d_min) throw PlaneTooClose();
  return rotation_ji + translation_ji * normal_i.transpose() / distance_i;
}

// Samples an S x S patch whose destination grid (stride 2^level around
// `anchor`) is mapped through the pixel homography `h_pix` into `image`.
// h_pix acts on homogeneous pixel coordinates of the destination.
inline Eigen::ArrayXXd warp_patch(const Image& image, const Mat3& h_pix,
                                  const Vec2& anchor, int patch_size,
                                  int level) {
  Eigen::ArrayXXd out(patch_size, patch_size);
  const double stride = static_cast<double>(1 << level);
  const double half = (patch_size - 1) / 2.0;
  for (int y = 0; y < patch_size; ++y) {
    for (int x = 0; x < patch_size; ++x) {
      const Vec3 q(anchor.x() + (x - half) * stride,
                   anchor.y() + (y - half) * stride, 1.0);
      const Vec3 s = h_pix * q;
      if (std::abs(s.z()) < 1e-12) throw OutOfBounds();
      const double sx = s.x() / s.z(), sy = s.y() / s.z();
      if (!image.contains(sx, sy)) throw OutOfBounds();
      out(y, x) = image.bilinear(sx, sy);
    }
  }
  return out;
}

struct MigrationEvent {
  std::int64_t point_id = -1;
  int camera_from = -1;  // i
  int camera_to = -1;    // j
  double timestamp = 0.0;
  Mat3 H = Mat3::Identity();    // ray homography, camera i -> camera j
  Vec2 anchor_j = Vec2::Zero(); // point pixel in camera j at linearization
};

struct PhotoConfig {
  double t_mig = 1.0;          // temporal migration window [s]
  double d_min = 0.05;         // closest admissible plane distance [m]
  double gamma_cur = 1.0;      // residual gains on current/reference patches
  double gamma_ref = 1.0;
  double tukey_c = 4.685;
  double min_weight = 1e-3;
};

// Visibility of a world point in one camera, requiring full patch support.
inline bool point_visible(const Vec3& p_world, const CameraModel& cam,
                          const Pose& T_wc, double margin) {
  Vec2 px;
  if (!cam.try_project(T_wc.inverse().apply(p_world), px)) return false;
  return cam.in_image(px, margin);
}

// Emits a migration event iff the point's reference camera i lost it, it is
// now exclusively visible in a single other camera j, and it was seen in i
// within the last t_mig seconds. A fitted plane is required to build the
// homography; without one no event is emitted. On emission the migration
// counter increments and the reference camera moves to j.
inline std::optional<MigrationEvent> detect_migration(
    VisualPoint& point, const std::vector<char>& visible_now, double t_now,
    const PlaneParams* plane, const std::vector<Pose>& T_wc_now,
    const std::vector<CameraModel>& cams, const PhotoConfig& cfg = {}) {
  const int i = point.ref_camera;
  if (i < 0) return std::nullopt;
  if (i < static_cast<int>(visible_now.size()) && visible_now[i]) {
    return std::nullopt;
  }
  int j = -1, num_visible = 0;
  for (std::size_t k = 0; k < visible_now.size(); ++k) {
    if (visible_now[k]) {
      ++num_visible;
      j = static_cast<int>(k);
    }
  }
  if (num_visible != 1 || j == i) return std::nullopt;
  const auto seen = point.last_seen.find(i);
  if (seen == point.last_seen.end() || t_now - seen->second > cfg.t_mig) {
    return std::nullopt;
  }
  const ObservationRecord* ref = point.record_from(i);
  if (ref == nullptr || plane == nullptr) return std::nullopt;

  // Plane in camera-i coordinates at the reference capture pose. Map normals
  // face the viewpoint, so the camera-side convention (n^T p = d, d > 0)
  // flips the sign.
  const Pose& T_wi = ref->T_wc;
  const Vec3 n_i = -(T_wi.rotation.transpose() * plane->normal);
  const double d_i = plane->normal.dot(T_wi.translation) + plane->d;
  const Pose T_ji = T_wc_now[j].inverse() * T_wi;
  Mat3 h;
  try {
    h = homography(T_ji.rotation, T_ji.translation, n_i, d_i, cfg.d_min);
  } catch (const PlaneTooClose&) {
    return std::nullopt;
  }
  if (std::abs(h.determinant()) < 1e-9) return std::nullopt;

  MigrationEvent ev;
  ev.point_id = point.id;
  ev.camera_from = i;
  ev.camera_to = j;
  ev.timestamp = t_now;
  ev.H = h;
  if (!cams[j].try_project(T_wc_now[j].inverse().apply(point.position),
                           ev.anchor_j)) {
    return std::nullopt;
  }
  ++point.migration_count;
  point.ref_camera = j;
  return ev;
}

struct SourceTag {
  enum Kind { kLidar, kIntra, kMigration } kind = kIntra;
  int camera_i = -1;  // intra: camera; migration: source camera
  int camera_j = -1;  // migration: target camera
  std::int64_t point_id = -1;
};

struct PatchResidual {
  VecXd r;       // S*S rows
  MatXd J;       // rows x D error-state Jacobian
  double weight = 1.0;
  SourceTag tag;
};

namespace detail {

// d(p_cam)/d[dtheta, dp] for p_cam = R_bc^T (R_wb^T (p_w - t_wb) - t_bc)
// under the right-perturbation convention of boxplus.
inline void point_camera_jacobian(const Vec3& p_body, const Mat3& R_wb,
                                  const Mat3& R_bc, Mat3& d_theta, Mat3& d_pos) {
  d_theta = R_bc.transpose() * skew(p_body);
  d_pos = -R_bc.transpose() * R_wb.transpose();
}

}  // namespace detail

// Direct residual of one patch inside camera k:
//   r_s = gamma_cur I'_k(pi_k(p) + o_s) - gamma_ref P_ref[o_s].
// The Jacobian chains the image gradient, the projection Jacobian, and the
// pose perturbation; exposure columns are zero (normalization carries the
// calibrated exposure).
inline PatchResidual intra_residual(const VisualPoint& point,
                                    const ObservationRecord& ref,
                                    const Image& current_normalized,
                                    const CameraModel& cam, int camera_id,
                                    const NavState& state,
                                    const VoxmapConfig& map_cfg,
                                    const PhotoConfig& cfg = {}) {
  const int s = map_cfg.patch_size;
  const double half = (s - 1) / 2.0;
  const Pose T_wc = state.pose() * cam.T_bc;
  const Pose T_cw = T_wc.inverse();
  const Vec3 p_body = state.rotation.transpose() *
                      (point.position - state.position);
  const Vec3 p_cam = T_cw.apply(point.position);
  const Vec2 center = cam.project(p_cam);  // throws BehindCamera

  Mat3 d_theta, d_pos;
  detail::point_camera_jacobian(p_body, state.rotation, cam.T_bc.rotation,
                                d_theta, d_pos);
  const Eigen::Matrix<double, 2, 3> j_proj = cam.project_jacobian(p_cam);

  PatchResidual out;
  out.r.resize(s * s);
  out.J = MatXd::Zero(s * s, state.dim());
  out.tag = {SourceTag::kIntra, camera_id, -1, point.id};
  int row = 0;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x, ++row) {
      const double px = center.x() + (x - half);
      const double py = center.y() + (y - half);
      double ref_val = 0.0;
      if (!ref.pyramid[0].sample(x - half, y - half, ref_val)) throw OutOfBounds();
      const double cur = current_normalized.bilinear(px, py);  // throws
      out.r[row] = cfg.gamma_cur * cur - cfg.gamma_ref * ref_val;
      const Vec2 grad = current_normalized.gradient(px, py);
      const Eigen::RowVector3d chain =
          cfg.gamma_cur * grad.transpose() * j_proj;
      out.J.block<1, 3>(row, err::kTheta) = chain * d_theta;
      out.J.block<1, 3>(row, err::kPos) = chain * d_pos;
    }
  }
  return out;
}

// Cross-view migration residual:
//   r_s = phi_{i->j} tau_j I'_j(pi_j(p) + o_s) - tau_i W_H[P_i](o_s)
// with phi = alpha_j / alpha_i. The homography and the reference sampling
// grid (event.anchor_j + o_s) are frozen at the linearization point, so the
// only state dependencies are the projection into camera j and the
// inverse-exposure entries.
inline PatchResidual migration_residual(const MigrationEvent& event,
                                        const VisualPoint& point,
                                        const ObservationRecord& ref,
                                        const Image& current_normalized_j,
                                        const CameraModel& cam_i,
                                        const CameraModel& cam_j,
                                        const PhotometricCalib& calib,
                                        const NavState& state,
                                        const VoxmapConfig& map_cfg,
                                        const PhotoConfig& cfg = {}) {
  const int s = map_cfg.patch_size;
  const double half = (s - 1) / 2.0;
  const int i = event.camera_from, j = event.camera_to;
  const double phi = calib[j].alpha / calib[i].alpha;
  const double tau_i = state.inv_exposure.size() > i ? state.inv_exposure[i] : 1.0;
  const double tau_j = state.inv_exposure.size() > j ? state.inv_exposure[j] : 1.0;

  const Pose T_wc = state.pose() * cam_j.T_bc;
  const Vec3 p_body = state.rotation.transpose() *
                      (point.position - state.position);
  const Vec3 p_cam = T_wc.inverse().apply(point.position);
  const Vec2 center = cam_j.project(p_cam);

  // Pixel map: current camera-j pixel -> reference camera-i pixel.
  const Mat3 g = cam_i.intrinsics() * event.H.inverse() *
                 cam_j.intrinsics().inverse();

  Mat3 d_theta, d_pos;
  detail::point_camera_jacobian(p_body, state.rotation, cam_j.T_bc.rotation,
                                d_theta, d_pos);
  const Eigen::Matrix<double, 2, 3> j_proj = cam_j.project_jacobian(p_cam);

  PatchResidual out;
  out.r.resize(s * s);
  out.J = MatXd::Zero(s * s, state.dim());
  out.tag = {SourceTag::kMigration, i, j, point.id};
  int row = 0;
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x, ++row) {
      const double px = center.x() + (x - half);
      const double py = center.y() + (y - half);
      const Vec3 src = g * Vec3(event.anchor_j.x() + (x - half),
                                event.anchor_j.y() + (y - half), 1.0);
      if (std::abs(src.z()) < 1e-12) throw OutOfBounds();
      double warped = 0.0;
      if (!ref.pyramid[0].sample(src.x() / src.z() - ref.anchor.x(),
                                 src.y() / src.z() - ref.anchor.y(), warped)) {
        throw OutOfBounds();
      }
      const double cur = current_normalized_j.bilinear(px, py);
      const double term_cur = phi * tau_j * cur;
      const double term_ref = tau_i * warped;
      out.r[row] = term_cur - term_ref;
      const Vec2 grad = current_normalized_j.gradient(px, py);
      const Eigen::RowVector3d chain = phi * tau_j * grad.transpose() * j_proj;
      out.J.block<1, 3>(row, err::kTheta) = chain * d_theta;
      out.J.block<1, 3>(row, err::kPos) = chain * d_pos;
      if (state.inv_exposure.size() > j) out.J(row, err::kExposure + j) += term_cur;
      if (state.inv_exposure.size() > i) out.J(row, err::kExposure + i) -= term_ref;
    }
  }
  return out;
}

// dim(r_total) = N * P * S + sum_M P_M * S.
inline long stack_dimension(int num_cameras, int points_per_camera,
                            int patch_pixels,
                            const std::vector<int>& migration_point_counts) {
  long dim = static_cast<long>(num_cameras) * points_per_camera * patch_pixels;
  for (int p_m : migration_point_counts) dim += static_cast<long>(p_m) * patch_pixels;
  return dim;
}

inline int migration_count(std::int64_t point_id,
                           const std::vector<MigrationEvent>& log) {
  int n = 0;
  for (const auto& ev : log) {
    if (ev.point_id == point_id) ++n;
  }
  return n;
}

inline double tukey_weight(double u, double c = 4.685) {
  if (std::abs(u) >= c) return 0.0;
  const double t = 1.0 - (u / c) * (u / c);
  return t * t;
}

// Per-patch robust weights from the median absolute deviation of the patch
// RMS residuals, floored so weights stay in (0, 1].
inline std::vector<double> tukey_patch_weights(const std::vector<double>& rms,
                                               const PhotoConfig& cfg = {}) {
  std::vector<double> weights(rms.size(), 1.0);
  if (rms.size() < 3) return weights;
  std::vector<double> sorted = rms;
  std::sort(sorted.begin(), sorted.end());
  const double med = sorted[sorted.size() / 2];
  std::vector<double> dev(rms.size());
  for (std::size_t k = 0; k < rms.size(); ++k) dev[k] = std::abs(rms[k] - med);
  std::sort(dev.begin(), dev.end());
  const double mad = dev[dev.size() / 2];
  const double scale = 1.4826 * mad + 1e-9;
  for (std::size_t k = 0; k < rms.size(); ++k) {
    weights[k] = std::max(cfg.min_weight,
                          tukey_weight((rms[k] - med) / scale, cfg.tukey_c));
  }
  return weights;
}

}  // namespace vlio
