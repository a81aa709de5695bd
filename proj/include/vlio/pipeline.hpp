#pragma once

// Per-epoch odometry engine: IMU propagation, LiDAR point-to-plane update,
// multi-camera photometric update with cross-view migration, and unified
// map maintenance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vlio/esikf.hpp"
#include "vlio/eval.hpp"
#include "vlio/geom.hpp"
#include "vlio/imu.hpp"
#include "vlio/photo.hpp"
#include "vlio/sync.hpp"
#include "vlio/voxmap.hpp"

namespace vlio {

struct EngineConfig {
  bool vision_enabled = true;
  bool migration_enabled = true;
  bool adaptive_cov_enabled = true;
  UpdateSchedule schedule = UpdateSchedule::kSequential;

  double lidar_sigma = 0.02;          // point-to-plane base noise [m]
  double photo_sigma = 4.0 / 255.0;   // per patch pixel
  double lidar_gate = 0.5;            // point-to-plane residual gate [m]
  int lidar_stride = 2;               // subsampling of scan points in updates
  int max_intra_per_camera = 40;      // strongest tracked points kept
  double migration_active_window = 0.5;  // cross-view residual lifetime [s]
  int spawn_stride = 4;               // candidate subsampling for spawning

  UpdateOptions update;
  VoxmapConfig map;
  PhotoConfig photo;
  AdaptiveConfig adaptive;
  ProcessNoise process;
};

struct EpochStats {
  int epoch = 0;
  double t = 0.0;
  int lidar_residuals = 0;
  std::vector<int> intra_per_camera;
  int migration_residuals = 0;
  int migration_events = 0;
  int lidar_iterations = 0;
  int vision_iterations = 0;
  int visual_constraints = 0;     // intra + migration blocks in the update
  int cross_view_constraints = 0; // migration blocks in the update
  long vision_evals = 0;          // instrumentation: camera-path entries
  double intra_rms = 0.0;         // mean per-patch RMS residual at the prior
  double cross_rms = 0.0;
  std::vector<TrackingStats> tracking;
  VecXd alpha;
  double alpha_cross = 1.0;
  std::size_t map_voxels = 0;
  std::size_t visual_points = 0;
};

// One live cross-view constraint: the event plus the plane frozen in the
// reference camera frame so the warp can be refreshed each epoch.
struct ActiveMigration {
  MigrationEvent event;
  Vec3 normal_ref = Vec3::UnitZ();  // plane normal, camera-i frame
  double dist_ref = 1.0;            // plane distance, camera-i frame
};

class Engine {
 public:
  Engine(std::vector<CameraModel> cameras, PhotometricCalib calib,
         EngineConfig cfg, const NavState& x0, const MatXd& p0)
      : cams_(std::move(cameras)),
        calib_(std::move(calib)),
        cfg_(cfg),
        map_(cfg.map),
        x_(x0),
        cov_(p0) {}

  const NavState& state() const { return x_; }
  const MatXd& covariance() const { return cov_; }
  VoxelMap& map() { return map_; }
  const VoxelMap& map() const { return map_; }
  const std::vector<MigrationEvent>& event_log() const { return event_log_; }
  const std::vector<EpochStats>& stats() const { return stats_; }

  EpochStats process(const MeasurementPacket& pkt) {
    EpochStats st;
    st.epoch = pkt.epoch;
    st.t = pkt.trigger_time;
    st.intra_per_camera.assign(cams_.size(), 0);
    st.alpha = VecXd::Ones(cams_.size());

    // IMU forward propagation and scan motion compensation.
    PropagationResult prop = propagate(x_, cov_, pkt.imu, cfg_.process);
    x_ = prop.state;
    cov_ = prop.covariance;
    const std::vector<Vec3> pts_body = undistort_scan(pkt.points, prop.trajectory);

    const auto schedule = update_schedule(
        {cfg_.vision_enabled && !pkt.frames.empty(), cfg_.schedule});

    std::vector<Image> normalized;
    if (cfg_.vision_enabled && !pkt.frames.empty()) {
      normalized = normalize_frames(pkt);
    }

    for (UpdatePhase phase : schedule) {
      switch (phase) {
        case UpdatePhase::kLidar:
          run_lidar_update(pts_body, st);
          break;
        case UpdatePhase::kVision:
          run_vision_update(pkt, normalized, st);
          break;
        case UpdatePhase::kJoint:
          run_joint_update(pts_body, pkt, normalized, st);
          break;
      }
    }

    maintain_map(pkt, pts_body, normalized, st);
    trajectory_.push_back(
        {pkt.trigger_time, x_.position, Eigen::Quaterniond(x_.rotation)});
    st.map_voxels = map_.num_voxels();
    st.visual_points = map_.num_visual_points();
    stats_.push_back(st);
    return st;
  }

  const TrajectoryFile& trajectory() const { return trajectory_; }

 private:
  std::vector<Image> normalize_frames(const MeasurementPacket& pkt) const {
    std::vector<Image> out(cams_.size());
    for (const auto& f : pkt.frames) {
      out[f.camera_id] = normalize_image(f.image, calib_[f.camera_id]);
    }
    return out;
  }

  // Point-to-plane residuals against the voxel map; one stacked block.
  std::vector<ResidualBlock> lidar_blocks(const std::vector<Vec3>& pts_body,
                                          const NavState& x) const {
    std::vector<double> r;
    std::vector<Eigen::Matrix<double, 1, 6>> rows;  // [dtheta, dp]
    for (std::size_t i = 0; i < pts_body.size();
         i += static_cast<std::size_t>(cfg_.lidar_stride)) {
      const Vec3& pb = pts_body[i];
      const Vec3 pw = x.rotation * pb + x.position;
      const PlaneParams* plane = map_.query_plane(pw);
      if (!plane) continue;
      const double res = point_to_plane(*plane, pw);
      if (std::abs(res) > cfg_.lidar_gate) continue;
      r.push_back(res);
      rows.push_back(point_to_plane_jacobian(plane->normal, x.rotation, pb));
    }
    if (r.empty()) return {};
    ResidualBlock block;
    block.tag = {SourceTag::kLidar, -1, -1, -1};
    block.r = Eigen::Map<VecXd>(r.data(), r.size());
    block.H = MatXd::Zero(r.size(), x.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      block.H.block<1, 3>(i, err::kTheta) = rows[i].leftCols<3>();
      block.H.block<1, 3>(i, err::kPos) = rows[i].rightCols<3>();
    }
    block.variance = VecXd::Constant(r.size(), cfg_.lidar_sigma * cfg_.lidar_sigma);
    return {std::move(block)};
  }

  void run_lidar_update(const std::vector<Vec3>& pts_body, EpochStats& st) {
    const NavState prior = x_;
    const auto provider = [&](const VecXd& dx) {
      return lidar_blocks(pts_body, boxplus(prior, dx));
    };
    if (lidar_blocks(pts_body, prior).empty()) return;
    const UpdateResult res = iterate_update(cov_, provider, cfg_.update);
    x_ = boxplus(prior, res.dx);
    cov_ = res.covariance;
    st.lidar_iterations = res.iterations;
    st.lidar_residuals = static_cast<int>(lidar_blocks(pts_body, x_).size()
                                              ? lidar_blocks(pts_body, x_)[0].r.size()
                                              : 0);
  }

  // Tracked points per camera at the given state; deterministic order.
  struct Track {
    const VisualPoint* point;
    const ObservationRecord* ref;
    int camera;
    double grad = 0.0;
    const PlaneParams* plane = nullptr;
    Vec2 center_prior = Vec2::Zero();  // projection at the epoch prior
  };

  std::vector<Track> select_tracks(const std::vector<Image>& normalized,
                                   const NavState& x, EpochStats& st) const {
    const double margin = patch_support_margin(cfg_.map);
    std::vector<Track> tracks;
    for (std::size_t k = 0; k < cams_.size(); ++k) {
      const Pose T_wc = x.pose() * cams_[k].T_bc;
      const Pose T_cw = T_wc.inverse();
      std::vector<Track> per_cam;
      for (const VisualPoint* vp :
           const_cast<VoxelMap&>(map_).visual_points()) {
        const ObservationRecord* ref = vp->record_from(static_cast<int>(k));
        if (!ref) continue;
        Vec2 px;
        if (!cams_[k].try_project(T_cw.apply(vp->position), px)) continue;
        if (!cams_[k].in_image(px, margin)) continue;
        Track t;
        t.point = vp;
        t.ref = ref;
        t.camera = static_cast<int>(k);
        t.plane = map_.query_plane(vp->position);
        t.center_prior = px;
        try {
          t.grad = normalized[k].gradient(px.x(), px.y()).norm();
        } catch (const OutOfBounds&) {
          continue;
        }
        per_cam.push_back(t);
      }
      // Keep the strongest-gradient tracks, stable by point id.
      std::stable_sort(per_cam.begin(), per_cam.end(),
                       [](const Track& a, const Track& b) {
                         return a.grad > b.grad;
                       });
      if (static_cast<int>(per_cam.size()) > cfg_.max_intra_per_camera) {
        per_cam.resize(cfg_.max_intra_per_camera);
      }
      std::stable_sort(per_cam.begin(), per_cam.end(),
                       [](const Track& a, const Track& b) {
                         return a.point->id < b.point->id;
                       });
      st.intra_per_camera[k] = static_cast<int>(per_cam.size());
      tracks.insert(tracks.end(), per_cam.begin(), per_cam.end());
    }
    return tracks;
  }

  // Intra residual with the reference patch warped through the point's
  // plane homography when one is available (frozen per epoch).
  PatchResidual intra_with_warp(const Track& t, const Image& img,
                                const NavState& x, const Mat3* warp) const {
    PatchResidual res = intra_residual(*t.point, *t.ref, img, cams_[t.camera],
                                       t.camera, x, cfg_.map, cfg_.photo);
    if (!warp) return res;
    // Replace the reference samples with warped ones. The warp source grid
    // is frozen at the prior-state projection so the residual's only state
    // dependency stays in the current-image term, matching the Jacobian.
    const int s = cfg_.map.patch_size;
    const double half = (s - 1) / 2.0;
    const Pose T_wc = x.pose() * cams_[t.camera].T_bc;
    const Vec2 center = cams_[t.camera].project(T_wc.inverse().apply(t.point->position));
    int row = 0;
    for (int y = 0; y < s; ++y) {
      for (int x2 = 0; x2 < s; ++x2, ++row) {
        const Vec3 src = (*warp) * Vec3(t.center_prior.x() + (x2 - half),
                                        t.center_prior.y() + (y - half), 1.0);
        if (std::abs(src.z()) < 1e-12) throw OutOfBounds();
        double ref_val = 0.0;
        if (!t.ref->pyramid[0].sample(src.x() / src.z() - t.ref->anchor.x(),
                                      src.y() / src.z() - t.ref->anchor.y(),
                                      ref_val)) {
          throw OutOfBounds();
        }
        const double cur = img.bilinear(center.x() + (x2 - half),
                                        center.y() + (y - half));
        res.r[row] = cfg_.photo.gamma_cur * cur - cfg_.photo.gamma_ref * ref_val;
      }
    }
    return res;
  }

  // Pixel map current-frame -> reference-frame through the point's plane.
  // Returns false when no plane is available or it degenerates.
  bool reference_warp(const Track& t, const NavState& x, Mat3& out) const {
    if (!t.plane) return false;
    const Pose T_wi = t.ref->T_wc;
    const Vec3 n_i = -(T_wi.rotation.transpose() * t.plane->normal);
    const double d_i = t.plane->normal.dot(T_wi.translation) + t.plane->d;
    if (d_i <= cfg_.photo.d_min) return false;
    const Pose T_ji = (x.pose() * cams_[t.camera].T_bc).inverse() * T_wi;
    Mat3 h;
    try {
      h = homography(T_ji.rotation, T_ji.translation, n_i, d_i, cfg_.photo.d_min);
    } catch (const PlaneTooClose&) {
      return false;
    }
    if (std::abs(h.determinant()) < 1e-9) return false;
    out = cams_[t.camera].intrinsics() * h.inverse() *
          cams_[t.camera].intrinsics().inverse();
    return true;
  }

  std::vector<ResidualBlock> vision_blocks(
      const std::vector<Track>& tracks, const std::vector<Mat3>& warps,
      const std::vector<char>& has_warp,
      const std::vector<ActiveMigration>& active,
      const std::vector<Image>& normalized, const NavState& x,
      EpochStats* st) const {
    std::vector<PatchResidual> patches;
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      const Track& t = tracks[i];
      try {
        patches.push_back(intra_with_warp(t, normalized[t.camera], x,
                                          has_warp[i] ? &warps[i] : nullptr));
      } catch (const OutOfBounds&) {
      } catch (const BehindCamera&) {
      }
      if (st) ++st->vision_evals;
    }
    std::size_t num_intra = patches.size();
    for (const ActiveMigration& am : active) {
      const VisualPoint* vp = find_point(am.event.point_id);
      if (!vp) continue;
      const ObservationRecord* ref = vp->record_from(am.event.camera_from);
      if (!ref) continue;
      try {
        patches.push_back(migration_residual(
            am.event, *vp, *ref, normalized[am.event.camera_to],
            cams_[am.event.camera_from], cams_[am.event.camera_to], calib_, x,
            cfg_.map, cfg_.photo));
      } catch (const OutOfBounds&) {
      } catch (const BehindCamera&) {
      }
      if (st) ++st->vision_evals;
    }

    std::vector<double> rms(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
      rms[i] = std::sqrt(patches[i].r.squaredNorm() / patches[i].r.size());
    }
    const std::vector<double> weights = tukey_patch_weights(rms, cfg_.photo);

    std::vector<ResidualBlock> blocks;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      ResidualBlock b;
      b.r = std::move(patches[i].r);
      b.H = std::move(patches[i].J);
      b.tag = patches[i].tag;
      const double var =
          cfg_.photo_sigma * cfg_.photo_sigma / std::max(weights[i], 1e-6);
      b.variance = VecXd::Constant(b.r.size(), var);
      blocks.push_back(std::move(b));
    }
    if (st) {
      st->visual_constraints = static_cast<int>(blocks.size());
      st->cross_view_constraints = static_cast<int>(blocks.size() - num_intra);
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        (i < num_intra ? st->intra_rms : st->cross_rms) += rms[i];
      }
      if (num_intra > 0) st->intra_rms /= static_cast<double>(num_intra);
      if (blocks.size() > num_intra) {
        st->cross_rms /= static_cast<double>(blocks.size() - num_intra);
      }
    }
    return blocks;
  }

  const VisualPoint* find_point(std::int64_t id) const {
    for (const VisualPoint* vp : const_cast<VoxelMap&>(map_).visual_points()) {
      if (vp->id == id) return vp;
    }
    return nullptr;
  }

  std::vector<char> visibility(const VisualPoint& vp, const NavState& x) const {
    const double margin = patch_support_margin(cfg_.map);
    std::vector<char> vis(cams_.size(), 0);
    for (std::size_t k = 0; k < cams_.size(); ++k) {
      vis[k] = point_visible(vp.position, cams_[k], x.pose() * cams_[k].T_bc,
                             margin)
                   ? 1
                   : 0;
    }
    return vis;
  }

  void detect_migrations(double t_now, EpochStats& st) {
    if (!cfg_.migration_enabled) return;
    std::vector<Pose> T_wc_now(cams_.size());
    for (std::size_t k = 0; k < cams_.size(); ++k) {
      T_wc_now[k] = x_.pose() * cams_[k].T_bc;
    }
    for (VisualPoint* vp : map_.visual_points()) {
      const std::vector<char> vis = visibility(*vp, x_);
      const PlaneParams* plane = map_.query_plane(vp->position);
      const int prev_ref = vp->ref_camera;
      auto ev =
          detect_migration(*vp, vis, t_now, plane, T_wc_now, cams_, cfg_.photo);
      if (!ev) continue;
      const ObservationRecord* ref = vp->record_from(prev_ref);
      ActiveMigration am;
      am.event = *ev;
      am.normal_ref = -(ref->T_wc.rotation.transpose() * plane->normal);
      am.dist_ref = plane->normal.dot(ref->T_wc.translation) + plane->d;
      active_.push_back(am);
      event_log_.push_back(*ev);
      ++st.migration_events;
    }
    // Expire stale events and refresh homographies at the current state.
    std::vector<ActiveMigration> kept;
    for (ActiveMigration& am : active_) {
      if (t_now - am.event.timestamp > cfg_.migration_active_window) continue;
      const VisualPoint* vp = find_point(am.event.point_id);
      if (!vp) continue;
      const ObservationRecord* ref = vp->record_from(am.event.camera_from);
      if (!ref) continue;
      const Pose T_ji =
          T_wc_now[am.event.camera_to].inverse() * ref->T_wc;
      try {
        am.event.H = homography(T_ji.rotation, T_ji.translation, am.normal_ref,
                                am.dist_ref, cfg_.photo.d_min);
      } catch (const PlaneTooClose&) {
        continue;
      }
      if (!cams_[am.event.camera_to].try_project(
              T_wc_now[am.event.camera_to].inverse().apply(vp->position),
              am.event.anchor_j)) {
        continue;
      }
      kept.push_back(am);
    }
    active_ = std::move(kept);
  }

  void run_vision_update(const MeasurementPacket& pkt,
                         const std::vector<Image>& normalized, EpochStats& st) {
    detect_migrations(pkt.trigger_time, st);
    const NavState prior = x_;
    std::vector<Track> tracks = select_tracks(normalized, prior, st);
    if (tracks.empty() && active_.empty()) return;

    // Warps and adaptive weights are frozen at the prior for the epoch.
    std::vector<Mat3> warps(tracks.size());
    std::vector<char> has_warp(tracks.size(), 0);
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      has_warp[i] = reference_warp(tracks[i], prior, warps[i]) ? 1 : 0;
    }

    AdaptiveWeights weights = compute_adaptive(tracks, warps, has_warp,
                                               normalized, prior, st);
    const auto provider = [&](const VecXd& dx) {
      return vision_blocks(tracks, warps, has_warp, active_, normalized,
                           boxplus(prior, dx), nullptr);
    };
    // One instrumented evaluation for the stats record.
    const auto counted =
        vision_blocks(tracks, warps, has_warp, active_, normalized, prior, &st);
    if (counted.empty()) return;
    const UpdateResult res = iterate_update(
        cov_, provider, cfg_.update, cfg_.adaptive_cov_enabled ? &weights : nullptr);
    x_ = boxplus(prior, res.dx);
    cov_ = res.covariance;
    st.vision_iterations = res.iterations;
    st.migration_residuals = st.cross_view_constraints;
  }

  void run_joint_update(const std::vector<Vec3>& pts_body,
                        const MeasurementPacket& pkt,
                        const std::vector<Image>& normalized, EpochStats& st) {
    detect_migrations(pkt.trigger_time, st);
    const NavState prior = x_;
    std::vector<Track> tracks = select_tracks(normalized, prior, st);
    std::vector<Mat3> warps(tracks.size());
    std::vector<char> has_warp(tracks.size(), 0);
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      has_warp[i] = reference_warp(tracks[i], prior, warps[i]) ? 1 : 0;
    }
    AdaptiveWeights weights = compute_adaptive(tracks, warps, has_warp,
                                               normalized, prior, st);
    const auto provider = [&](const VecXd& dx) {
      const NavState x = boxplus(prior, dx);
      std::vector<ResidualBlock> blocks = lidar_blocks(pts_body, x);
      auto vb = vision_blocks(tracks, warps, has_warp, active_, normalized, x,
                              nullptr);
      blocks.insert(blocks.end(), std::make_move_iterator(vb.begin()),
                    std::make_move_iterator(vb.end()));
      return blocks;
    };
    const auto counted =
        vision_blocks(tracks, warps, has_warp, active_, normalized, prior, &st);
    if (counted.empty() && lidar_blocks(pts_body, prior).empty()) return;
    const UpdateResult res = iterate_update(
        cov_, provider, cfg_.update, cfg_.adaptive_cov_enabled ? &weights : nullptr);
    x_ = boxplus(prior, res.dx);
    cov_ = res.covariance;
    st.vision_iterations = res.iterations;
    st.migration_residuals = st.cross_view_constraints;
  }

  AdaptiveWeights compute_adaptive(const std::vector<Track>& tracks,
                                   const std::vector<Mat3>& warps,
                                   const std::vector<char>& has_warp,
                                   const std::vector<Image>& normalized,
                                   const NavState& x, EpochStats& st) const {
    std::vector<TrackingStats> stats(cams_.size());
    for (std::size_t i = 0; i < tracks.size(); ++i) {
      const Track& t = tracks[i];
      try {
        const PatchResidual pr = intra_with_warp(
            t, normalized[t.camera], x, has_warp[i] ? &warps[i] : nullptr);
        TrackingStats& s = stats[t.camera];
        ++s.tracked;
        s.mean_sq_residual += pr.r.squaredNorm() / pr.r.size();
        s.mean_gradient += t.grad;
      } catch (const OutOfBounds&) {
      } catch (const BehindCamera&) {
      }
    }
    for (auto& s : stats) {
      if (s.tracked > 0) {
        s.mean_sq_residual /= s.tracked;
        s.mean_gradient /= s.tracked;
      }
    }
    st.tracking = stats;
    AdaptiveWeights w;
    if (cfg_.adaptive_cov_enabled && !stats.empty()) {
      w = adaptive_covariance(stats, cfg_.adaptive);
    } else {
      w.alpha = VecXd::Ones(cams_.size());
      w.alpha_cross = 1.0;
    }
    st.alpha = w.alpha;
    st.alpha_cross = w.alpha_cross;
    return w;
  }

  void maintain_map(const MeasurementPacket& pkt,
                    const std::vector<Vec3>& pts_body,
                    const std::vector<Image>& normalized, EpochStats& st) {
    // Insert the scan with per-point colorization from the current frames.
    std::vector<MapPoint> mps(pts_body.size());
    std::vector<Pose> T_cw(cams_.size());
    const bool color = cfg_.vision_enabled && !normalized.empty();
    for (std::size_t k = 0; k < cams_.size(); ++k) {
      T_cw[k] = (x_.pose() * cams_[k].T_bc).inverse();
    }
    std::vector<Vec3> world(pts_body.size());
    for (std::size_t i = 0; i < pts_body.size(); ++i) {
      world[i] = x_.rotation * pts_body[i] + x_.position;
      mps[i].position = world[i];
      if (!color) continue;
      for (std::size_t k = 0; k < cams_.size(); ++k) {
        Vec2 px;
        if (!cams_[k].try_project(T_cw[k].apply(world[i]), px)) continue;
        if (!cams_[k].in_image(px, 1.0)) continue;
        const double val = std::clamp(normalized[k].bilinear(px.x(), px.y()),
                                      0.0, 1.0);
        const auto c = static_cast<std::uint8_t>(std::lround(255.0 * val));
        mps[i].rgb = {c, c, c};
        mps[i].colored = true;
        break;
      }
    }
    map_.insert_scan(mps, x_.position);

    if (!cfg_.vision_enabled || normalized.empty()) return;

    // Spawn new visual points from this scan's LiDAR points.
    std::vector<Vec3> candidates;
    candidates.reserve(world.size() / cfg_.spawn_stride + 1);
    for (std::size_t i = 0; i < world.size();
         i += static_cast<std::size_t>(cfg_.spawn_stride)) {
      candidates.push_back(world[i]);
    }
    spawn_visual_points(map_, normalized, cams_, x_.pose(), candidates,
                        pkt.trigger_time, x_.inv_exposure);

    // Refresh observations and visibility bookkeeping.
    const double margin = patch_support_margin(cfg_.map);
    std::vector<Pose> T_wc(cams_.size());
    for (std::size_t k = 0; k < cams_.size(); ++k) {
      T_wc[k] = x_.pose() * cams_[k].T_bc;
    }
    for (VisualPoint* vp : map_.visual_points()) {
      for (std::size_t k = 0; k < cams_.size(); ++k) {
        Vec2 px;
        if (!cams_[k].try_project(T_wc[k].inverse().apply(vp->position), px)) {
          continue;
        }
        if (!cams_[k].in_image(px, margin)) continue;
        vp->last_seen[static_cast<int>(k)] = pkt.trigger_time;
        ObservationRecord rec;
        rec.T_wc = T_wc[k];
        rec.camera_id = static_cast<int>(k);
        rec.timestamp = pkt.trigger_time;
        rec.anchor = px;
        rec.inv_exposure = x_.inv_exposure.size() > static_cast<int>(k)
                               ? x_.inv_exposure[static_cast<int>(k)]
                               : 1.0;
        if (!extract_pyramid(normalized[k], px, cfg_.map.patch_size,
                             cfg_.map.patch_margin, cfg_.map.pyramid_levels,
                             rec.pyramid)) {
          continue;
        }
        update_observation(*vp, std::move(rec), cfg_.map);
      }
      // Re-anchor the reference camera when its last sighting has gone
      // stale but the point is actively tracked elsewhere; later hand-offs
      // are then detected as migrations instead of being dropped as stale.
      const auto ref_seen = vp->last_seen.find(vp->ref_camera);
      if (ref_seen == vp->last_seen.end() ||
          pkt.trigger_time - ref_seen->second > cfg_.photo.t_mig) {
        for (std::size_t k = 0; k < cams_.size(); ++k) {
          const int cam_id = static_cast<int>(k);
          const auto seen = vp->last_seen.find(cam_id);
          if (seen != vp->last_seen.end() &&
              seen->second == pkt.trigger_time && vp->record_from(cam_id)) {
            vp->ref_camera = cam_id;
            break;
          }
        }
      }
    }
  }

  std::vector<CameraModel> cams_;
  PhotometricCalib calib_;
  EngineConfig cfg_;
  VoxelMap map_;
  NavState x_;
  MatXd cov_;
  std::vector<ActiveMigration> active_;
  std::vector<MigrationEvent> event_log_;
  std::vector<EpochStats> stats_;
  TrajectoryFile trajectory_;
};

// Small-uncertainty prior covariance for a known start pose.
inline MatXd default_prior_covariance(int num_cameras) {
  const int dim = 18 + num_cameras;
  VecXd d(dim);
  d.segment<3>(err::kTheta).setConstant(1e-6);
  d.segment<3>(err::kPos).setConstant(1e-6);
  d.segment<3>(err::kVel).setConstant(1e-4);
  d.segment<3>(err::kBiasGyro).setConstant(1e-6);
  d.segment<3>(err::kBiasAccel).setConstant(1e-4);
  d.segment<3>(err::kGravity).setConstant(1e-10);
  d.tail(num_cameras).setConstant(1e-12);
  return d.asDiagonal();
}

}  // namespace vlio
