#pragma once

// Measurement packet assembly: groups a segmented LiDAR scan, the bracketing
// IMU span, and one simultaneously triggered multi-camera frame set per
// fusion epoch.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "vlio/geom.hpp"
#include "vlio/image.hpp"

namespace vlio {

struct EmptyFrameList : std::runtime_error {
  EmptyFrameList() : std::runtime_error("no camera frame timestamps") {}
};
struct UnsyncedFrames : std::runtime_error {
  UnsyncedFrames() : std::runtime_error("camera trigger timestamps differ beyond sync_tol") {}
};
struct ImuGap : std::runtime_error {
  ImuGap() : std::runtime_error("IMU stream gap exceeds 3x nominal period") {}
};

struct TimedPoint {
  Vec3 position = Vec3::Zero();  // sensor frame [m]
  double timestamp = 0.0;        // [s]
  double intensity = 0.0;
};

struct ImuSample {
  Vec3 angular_velocity = Vec3::Zero();     // [rad/s]
  Vec3 linear_acceleration = Vec3::Zero();  // [m/s^2]
  double timestamp = 0.0;                   // [s]
};

struct CameraFrame {
  int camera_id = 0;
  Image image;              // intensities in [0,1]
  double exposure = 0.0;    // [s]
  double trigger_time = 0.0;
};

struct MeasurementPacket {
  std::vector<TimedPoint> points;   // segment assigned to this epoch
  std::vector<ImuSample> imu;       // spans [t_{k-1}, t_k]
  std::vector<CameraFrame> frames;  // one per camera, shared trigger
  int epoch = 0;
  double trigger_time = 0.0;
};

// Index of the temporally nearest frame; ties break toward the earlier frame.
inline std::size_t assign_point(double point_ts,
                                const std::vector<double>& frame_timestamps) {
  if (frame_timestamps.empty()) throw EmptyFrameList();
  std::size_t best = 0;
  double best_dist = std::abs(point_ts - frame_timestamps[0]);
  for (std::size_t k = 1; k < frame_timestamps.size(); ++k) {
    const double d = std::abs(point_ts - frame_timestamps[k]);
    if (d < best_dist) {
      best = k;
      best_dist = d;
    }
  }
  return best;
}

struct SyncConfig {
  double sync_tol = 1e-6;         // max trigger spread within a frame set [s]
  double imu_nominal_period = 0.005;
  double imu_gap_factor = 3.0;
};

// Validates one epoch's raw streams and builds the packet. The scan is the
// segment already assigned to this epoch by assign_point.
inline MeasurementPacket assemble_packet(std::vector<TimedPoint> scan,
                                         std::vector<ImuSample> imu,
                                         std::vector<CameraFrame> frames,
                                         int epoch,
                                         const SyncConfig& cfg = {}) {
  double trigger = frames.empty() ? 0.0 : frames.front().trigger_time;
  for (const auto& f : frames) {
    if (std::abs(f.trigger_time - trigger) > cfg.sync_tol) throw UnsyncedFrames();
  }
  for (std::size_t i = 1; i < imu.size(); ++i) {
    if (imu[i].timestamp - imu[i - 1].timestamp >
        cfg.imu_gap_factor * cfg.imu_nominal_period) {
      throw ImuGap();
    }
  }
  MeasurementPacket pkt;
  pkt.points = std::move(scan);
  pkt.imu = std::move(imu);
  pkt.frames = std::move(frames);
  pkt.epoch = epoch;
  pkt.trigger_time = trigger;
  return pkt;
}

// Partitions a scan over the epochs of `frame_timestamps` (one entry per
// epoch trigger). Returned vector has one segment per epoch.
inline std::vector<std::vector<TimedPoint>> segment_scan(
    const std::vector<TimedPoint>& scan,
    const std::vector<double>& frame_timestamps) {
  std::vector<std::vector<TimedPoint>> segments(frame_timestamps.size());
  for (const auto& p : scan) {
    segments[assign_point(p.timestamp, frame_timestamps)].push_back(p);
  }
  return segments;
}

}  // namespace vlio
