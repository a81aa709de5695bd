#pragma once

// Synthetic world and sensor-rig simulator: analytic trajectories, plane
// worlds with procedural textures, pinhole renders with exposure and
// vignetting, LiDAR scans, and IMU streams. Fully deterministic under a
// master seed.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlio/geom.hpp"
#include "vlio/image.hpp"
#include "vlio/imu.hpp"
#include "vlio/photo.hpp"
#include "vlio/sync.hpp"

namespace vlio::sim {

struct OutOfRange : std::runtime_error {
  OutOfRange() : std::runtime_error("time outside trajectory duration") {}
};

// ---------------------------------------------------------------------------
// Procedural textures

struct Texture {
  enum Kind { kUniform, kChecker, kNoise } kind = kUniform;
  double base = 0.5;
  double cell = 0.5;  // checker cell [m]
  struct Wave {
    double fu, fv, phase, amplitude;
  };
  std::vector<Wave> waves;
  struct Rect {
    double u0, v0, u1, v1;
  };
  std::vector<Rect> blanks;  // textureless regions (local plane coords)

  double value(double u, double v) const {
    for (const auto& b : blanks) {
      if (u >= b.u0 && u <= b.u1 && v >= b.v0 && v <= b.v1) return base;
    }
    switch (kind) {
      case kUniform:
        return base;
      case kChecker: {
        const int iu = static_cast<int>(std::floor(u / cell));
        const int iv = static_cast<int>(std::floor(v / cell));
        return ((iu + iv) & 1) ? 0.25 : 0.75;
      }
      case kNoise: {
        double s = base;
        for (const auto& w : waves) {
          s += w.amplitude *
               std::sin(2.0 * M_PI * (w.fu * u + w.fv * v) + w.phase);
        }
        return std::clamp(s, 0.02, 0.98);
      }
    }
    return base;
  }
};

inline Texture make_noise_texture(std::uint64_t seed, double amplitude = 0.35,
                                  double max_freq = 2.0, int components = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uf(0.2, max_freq);
  std::uniform_real_distribution<double> up(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> ua(0.5, 1.0);
  Texture t;
  t.kind = Texture::kNoise;
  double total = 0.0;
  for (int k = 0; k < components; ++k) {
    Texture::Wave w{uf(rng), uf(rng), up(rng), ua(rng)};
    total += w.amplitude;
    t.waves.push_back(w);
  }
  for (auto& w : t.waves) w.amplitude *= amplitude / total;
  return t;
}

// ---------------------------------------------------------------------------
// World

struct WorldPlane {
  Pose pose;       // col0/col1 span the plane, col2 is the normal
  double extent_u = 1.0, extent_v = 1.0;  // full widths [m]
  Texture texture;
};

struct RayHit {
  double range = 0.0;
  double u = 0.0, v = 0.0;
  const WorldPlane* plane = nullptr;
};

struct World {
  std::vector<WorldPlane> planes;

  std::optional<RayHit> raycast(const Vec3& origin, const Vec3& dir) const {
    std::optional<RayHit> best;
    for (const auto& pl : planes) {
      const Vec3 n = pl.pose.rotation.col(2);
      const double denom = n.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double t = n.dot(pl.pose.translation - origin) / denom;
      if (t <= 1e-6) continue;
      if (best && t >= best->range) continue;
      const Vec3 q = origin + t * dir - pl.pose.translation;
      const double u = pl.pose.rotation.col(0).dot(q);
      const double v = pl.pose.rotation.col(1).dot(q);
      if (std::abs(u) > 0.5 * pl.extent_u || std::abs(v) > 0.5 * pl.extent_v) {
        continue;
      }
      best = RayHit{t, u, v, &pl};
    }
    return best;
  }
};

inline WorldPlane make_plane(const Vec3& center, const Vec3& u_dir,
                             const Vec3& v_dir, double extent_u,
                             double extent_v, Texture tex) {
  WorldPlane p;
  p.pose.translation = center;
  p.pose.rotation.col(0) = u_dir.normalized();
  p.pose.rotation.col(1) = v_dir.normalized();
  p.pose.rotation.col(2) = u_dir.cross(v_dir).normalized();
  p.extent_u = extent_u;
  p.extent_v = extent_v;
  p.texture = std::move(tex);
  return p;
}

// Axis-aligned room: floor, ceiling, four walls. `corner_blank` meters of
// wall on each side of every vertical corner are left textureless.
inline World make_room(double half, double height, std::uint64_t seed,
                       double texture_amplitude = 0.35,
                       double corner_blank = 0.0,
                       double floor_amplitude = -1.0) {
  if (floor_amplitude < 0.0) floor_amplitude = texture_amplitude;
  World w;
  auto blank_edges = [&](Texture& t, double extent) {
    if (corner_blank <= 0.0) return;
    t.blanks.push_back({-0.5 * extent, -height, -0.5 * extent + corner_blank, height});
    t.blanks.push_back({0.5 * extent - corner_blank, -height, 0.5 * extent, height});
  };
  const double ext = 2.0 * half;
  // Walls: u runs horizontally, v vertically; normals point inward.
  struct WallSpec {
    Vec3 center, u, v;
  };
  const std::vector<WallSpec> walls = {
      {{half, 0, height / 2}, {0, 1, 0}, {0, 0, 1}},    // +x
      {{-half, 0, height / 2}, {0, -1, 0}, {0, 0, 1}},  // -x
      {{0, half, height / 2}, {-1, 0, 0}, {0, 0, 1}},   // +y
      {{0, -half, height / 2}, {1, 0, 0}, {0, 0, 1}},   // -y
  };
  std::uint64_t s = seed;
  for (const auto& spec : walls) {
    Texture t = make_noise_texture(++s, texture_amplitude);
    blank_edges(t, ext);
    w.planes.push_back(make_plane(spec.center, spec.u, spec.v, ext, height, t));
  }
  w.planes.push_back(make_plane({0, 0, 0}, {1, 0, 0}, {0, 1, 0}, ext, ext,
                                make_noise_texture(++s, floor_amplitude)));
  w.planes.push_back(make_plane({0, 0, height}, {1, 0, 0}, {0, -1, 0}, ext,
                                ext, make_noise_texture(++s, floor_amplitude)));
  return w;
}

// ---------------------------------------------------------------------------
// Trajectories

struct KinematicSample {
  Pose pose;                          // body in world
  Vec3 velocity = Vec3::Zero();       // world [m/s]
  Vec3 acceleration = Vec3::Zero();   // world [m/s^2]
  Vec3 angular_velocity = Vec3::Zero();  // body [rad/s]
};

class TrajectorySpec {
 public:
  enum Kind { kCircle, kFigureEight, kCorridor } kind = kCircle;
  double duration = 60.0;  // [s]
  double speed = 1.0;      // [m/s]
  double height = 1.5;     // constant z [m]
  double radius = 5.0;     // circle radius / figure-eight scale
  double half = 6.0;       // corridor loop half-size
  double corner_radius = 1.0;

  KinematicSample at(double t) const {
    if (t < -1e-9 || t > duration + 1e-9) throw OutOfRange();
    switch (kind) {
      case kCircle:
        return circle(t);
      case kFigureEight:
        return figure_eight(t);
      case kCorridor:
        return corridor(t);
    }
    return {};
  }

  double loop_length() const {
    switch (kind) {
      case kCircle:
        return 2.0 * M_PI * radius;
      case kCorridor:
        return 4.0 * straight_length() + 2.0 * M_PI * corner_radius;
      default:
        return 0.0;
    }
  }

  double straight_length() const { return 2.0 * (half - corner_radius); }

  // Time spans [t0, t1] of every 90-degree corner traversed in [0, duration].
  std::vector<std::pair<double, double>> corner_windows() const {
    std::vector<std::pair<double, double>> out;
    if (kind != kCorridor) return out;
    const double t_straight = straight_length() / speed;
    const double t_arc = 0.5 * M_PI * corner_radius / speed;
    for (int n = 0;; ++n) {
      const double t0 = n * (t_straight + t_arc) + t_straight;
      if (t0 >= duration) break;
      out.emplace_back(t0, std::min(t0 + t_arc, duration));
    }
    return out;
  }

 private:
  static KinematicSample planar(const Vec3& p, const Vec3& v, const Vec3& a,
                                double yaw, double yaw_rate) {
    KinematicSample s;
    s.pose = {yaw_rotation(yaw), p};
    s.velocity = v;
    s.acceleration = a;
    s.angular_velocity = {0, 0, yaw_rate};
    return s;
  }

  KinematicSample circle(double t) const {
    const double w = speed / radius;
    const double a = w * t;
    const Vec3 p(radius * std::cos(a), radius * std::sin(a), height);
    const Vec3 v(-speed * std::sin(a), speed * std::cos(a), 0);
    const Vec3 acc(-speed * w * std::cos(a), -speed * w * std::sin(a), 0);
    return planar(p, v, acc, a + M_PI / 2, w);
  }

  KinematicSample figure_eight(double t) const {
    const double w = speed / radius;
    const double x = radius * std::sin(w * t);
    const double y = 0.5 * radius * std::sin(2 * w * t);
    const Vec3 p(x, y, height);
    const Vec3 v(radius * w * std::cos(w * t),
                 radius * w * std::cos(2 * w * t), 0);
    const Vec3 a(-radius * w * w * std::sin(w * t),
                 -2 * radius * w * w * std::sin(2 * w * t), 0);
    const double yaw = std::atan2(v.y(), v.x());
    const double v2 = v.x() * v.x() + v.y() * v.y();
    const double yaw_rate = (v.x() * a.y() - v.y() * a.x()) / std::max(v2, 1e-12);
    return planar(p, v, a, yaw, yaw_rate);
  }

  // Counterclockwise rounded-square loop: straights of length L on the four
  // sides, quarter-circle arcs of radius corner_radius at the corners.
  KinematicSample corridor(double t) const {
    const double r = corner_radius;
    const double h = half - r;  // arc centers at (+-h, +-h)
    const double ls = straight_length();
    const double la = 0.5 * M_PI * r;
    const double perim = 4 * (ls + la);
    double s = std::fmod(speed * t, perim);
    if (s < 0) s += perim;

    // Segment order: right straight, TR arc, top straight, TL arc, ...
    for (int side = 0; side < 4; ++side) {
      const double yaw0 = M_PI / 2 + side * M_PI / 2;  // heading on straight
      const Mat3 rot = yaw_rotation(side * M_PI / 2);
      if (s < ls) {
        // Straight in canonical (side 0) frame: x = h + r, y from -h to h.
        const Vec3 p0(h + r, -h + s, height);
        const Vec3 v0(0, speed, 0);
        return planar(rot * p0, rot * v0, Vec3::Zero(), yaw0, 0.0);
      }
      s -= ls;
      if (s < la) {
        const double ang = s / r;  // 0..pi/2
        const Vec3 c0(h, h, height);
        const Vec3 p0 = c0 + r * Vec3(std::cos(ang), std::sin(ang), 0);
        const Vec3 v0 = speed * Vec3(-std::sin(ang), std::cos(ang), 0);
        const Vec3 a0 = -(speed * speed / r) * Vec3(std::cos(ang), std::sin(ang), 0);
        return planar(rot * p0, rot * v0, rot * a0, yaw0 + ang, speed / r);
      }
      s -= la;
    }
    return {};
  }
};

// ---------------------------------------------------------------------------
// Sensor rig

struct RigConfig {
  std::vector<CameraModel> cameras;
  PhotometricCalib calib;
  int lidar_azimuth = 360;
  int lidar_elevation = 16;
  double lidar_elev_min = -0.45;  // [rad]
  double lidar_elev_max = 0.45;
  double lidar_max_range = 100.0;
  double range_noise = 0.01;  // [m]
  double imu_rate = 200.0;    // [Hz]
  double frame_rate = 10.0;   // camera / LiDAR epoch rate [Hz]
  ProcessNoise imu_noise;
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

// Optical frame: z forward, x right, y down; body frame: x forward, z up.
inline Mat3 optical_in_body() {
  Mat3 r;
  r.col(0) = Vec3(0, -1, 0);
  r.col(1) = Vec3(0, 0, -1);
  r.col(2) = Vec3(1, 0, 0);
  return r;
}

// Cross-pattern rig: front, left, back, right at 90-degree yaw offsets.
inline RigConfig make_cross_rig(int num_cameras, int width = 320,
                                int height = 240, double focal = 200.0,
                                std::vector<double> alphas = {},
                                std::array<double, 3> beta = {-0.3, 0.05, 0.0}) {
  RigConfig rig;
  for (int k = 0; k < num_cameras; ++k) {
    CameraModel cam;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    const double yaw = k * M_PI / 2;
    cam.T_bc.rotation = yaw_rotation(yaw) * optical_in_body();
    cam.T_bc.translation = yaw_rotation(yaw) * Vec3(0.05, 0, 0);
    rig.cameras.push_back(cam);
    const double alpha =
        k < static_cast<int>(alphas.size()) ? alphas[k] : 1.0;
    rig.calib.push_back(CameraPhotoCalib::for_image(width, height, alpha, beta));
  }
  return rig;
}

// ---------------------------------------------------------------------------
// Sensor sampling

// IMU stream over [t0, t1] inclusive, body-frame rates with bias and white
// noise. Specific force f = R^T (a_w - g).
inline std::vector<ImuSample> sample_imu(const TrajectorySpec& spec,
                                         double t0, double t1, double rate,
                                         const RigConfig& rig,
                                         const Vec3& gravity,
                                         std::mt19937_64& rng,
                                         bool noiseless = false) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double dt = 1.0 / rate;
  const double gyro_sigma = rig.imu_noise.gyro * std::sqrt(rate);
  const double accel_sigma = rig.imu_noise.accel * std::sqrt(rate);
  std::vector<ImuSample> out;
  for (double t = t0; t <= t1 + 1e-9; t += dt) {
    const KinematicSample k = spec.at(std::min(t, spec.duration));
    ImuSample s;
    s.timestamp = t;
    s.angular_velocity = k.angular_velocity + rig.gyro_bias;
    s.linear_acceleration =
        k.pose.rotation.transpose() * (k.acceleration - gravity) +
        rig.accel_bias;
    if (!noiseless) {
      s.angular_velocity += gyro_sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
      s.linear_acceleration +=
          accel_sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
    }
    out.push_back(s);
  }
  return out;
}

// Raw render: scene radiance divided by alpha * V(r^2), so that
// normalize_image recovers radiance.
inline Image render_camera(const World& world, const Pose& T_wc,
                           const CameraModel& cam,
                           const CameraPhotoCalib& calib) {
  Image img(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir_c((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const Vec3 dir = (T_wc.rotation * dir_c).normalized();
      const auto hit = world.raycast(T_wc.translation, dir);
      double radiance = 0.0;
      if (hit) radiance = hit->plane->texture.value(hit->u, hit->v);
      const double v = calib.vignette(calib.normalized_r2(x, y));
      img.at(x, y) = std::clamp(radiance / (calib.alpha * v), 0.0, 1.0);
    }
  }
  return img;
}

// One LiDAR sweep over (t0, t1]: azimuth-major ray grid, timestamps linear
// in azimuth, each ray cast from the ground-truth pose at its own time.
// Points are returned in the body frame at their timestamp.
inline std::vector<TimedPoint> scan_lidar(const World& world,
                                          const TrajectorySpec& spec,
                                          double t0, double t1,
                                          const RigConfig& rig,
                                          std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<TimedPoint> out;
  const int na = rig.lidar_azimuth, ne = rig.lidar_elevation;
  for (int ia = 0; ia < na; ++ia) {
    const double frac = (ia + 1.0) / na;
    const double t = t0 + frac * (t1 - t0);
    const KinematicSample k = spec.at(t);
    const double az = 2.0 * M_PI * ia / na;
    for (int ie = 0; ie < ne; ++ie) {
      const double el = rig.lidar_elev_min +
                        (rig.lidar_elev_max - rig.lidar_elev_min) *
                            (ne == 1 ? 0.5 : static_cast<double>(ie) / (ne - 1));
      const Vec3 dir_b(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                       std::sin(el));
      const auto hit = world.raycast(k.pose.translation, k.pose.rotation * dir_b);
      if (!hit || hit->range > rig.lidar_max_range) continue;
      const double range = hit->range + rig.range_noise * gauss(rng);
      TimedPoint p;
      p.position = range * dir_b;
      p.timestamp = t;
      p.intensity = hit->plane->texture.value(hit->u, hit->v);
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario & streaming simulator

struct Scenario {
  TrajectorySpec trajectory;
  World world;
  RigConfig rig;
  Vec3 gravity = Vec3(0, 0, -9.81);
  std::uint64_t seed = 1;
  std::string name = "scenario";
};

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario sc;
  sc.seed = j.value("seed", 1u);
  sc.name = j.value("name", "scenario");
  const auto& tj = j.at("trajectory");
  const std::string kind = tj.value("type", "corridor");
  if (kind == "circle") sc.trajectory.kind = TrajectorySpec::kCircle;
  else if (kind == "figure_eight") sc.trajectory.kind = TrajectorySpec::kFigureEight;
  else if (kind == "corridor") sc.trajectory.kind = TrajectorySpec::kCorridor;
  else throw std::runtime_error("unknown trajectory type: " + kind);
  sc.trajectory.duration = j.value("duration", 60.0);
  sc.trajectory.speed = tj.value("speed", 1.0);
  sc.trajectory.height = tj.value("height", 1.5);
  sc.trajectory.radius = tj.value("radius", 5.0);
  sc.trajectory.half = tj.value("half", 6.0);
  sc.trajectory.corner_radius = tj.value("corner_radius", 1.0);

  const auto& wj = j.at("world");
  sc.world = make_room(wj.value("half", 8.0), wj.value("height", 3.0),
                       wj.value("seed", 7u),
                       wj.value("texture_amplitude", 0.35),
                       wj.value("corner_blank", 0.0),
                       wj.value("floor_texture_amplitude", -1.0));

  const auto& rj = j.at("rig");
  std::vector<double> alphas = rj.value("alpha", std::vector<double>{});
  std::array<double, 3> beta = {-0.3, 0.05, 0.0};
  if (rj.contains("vignette")) {
    const auto b = rj["vignette"].get<std::vector<double>>();
    for (std::size_t i = 0; i < 3 && i < b.size(); ++i) beta[i] = b[i];
  }
  sc.rig = make_cross_rig(rj.value("cameras", 4), rj.value("width", 320),
                          rj.value("height", 240), rj.value("fx", 200.0),
                          alphas, beta);
  if (j.contains("lidar")) {
    const auto& lj = j["lidar"];
    sc.rig.lidar_azimuth = lj.value("azimuth", 360);
    sc.rig.lidar_elevation = lj.value("elevation", 16);
    sc.rig.range_noise = lj.value("range_noise", 0.01);
  }
  if (j.contains("imu")) {
    const auto& ij = j["imu"];
    sc.rig.imu_rate = ij.value("rate", 200.0);
    sc.rig.imu_noise.gyro = ij.value("gyro_noise", 1e-3);
    sc.rig.imu_noise.accel = ij.value("accel_noise", 1e-2);
  }
  return sc;
}

// Streams packets epoch by epoch. Per-epoch RNG streams are derived from the
// master seed and epoch index, so any packet is reproducible in isolation.
class Simulator {
 public:
  explicit Simulator(Scenario scenario) : sc_(std::move(scenario)) {}

  const Scenario& scenario() const { return sc_; }
  double epoch_period() const { return 1.0 / sc_.rig.frame_rate; }
  int num_epochs() const {
    return static_cast<int>(std::floor(sc_.trajectory.duration *
                                       sc_.rig.frame_rate + 1e-9));
  }

  KinematicSample ground_truth(double t) const { return sc_.trajectory.at(t); }

  // Epoch k covers (t_{k-1}, t_k] with trigger at t_k, k in [1, num_epochs].
  MeasurementPacket packet(int epoch) const {
    const double dt = epoch_period();
    const double t1 = epoch * dt;
    const double t0 = t1 - dt;
    std::mt19937_64 lidar_rng(mix(sc_.seed, epoch, 1));
    std::mt19937_64 imu_rng(mix(sc_.seed, epoch, 2));

    std::vector<TimedPoint> scan =
        scan_lidar(sc_.world, sc_.trajectory, t0, t1, sc_.rig, lidar_rng);
    std::vector<ImuSample> imu = sample_imu(
        sc_.trajectory, t0, t1, sc_.rig.imu_rate, sc_.rig, sc_.gravity, imu_rng);

    std::vector<CameraFrame> frames;
    const KinematicSample k = sc_.trajectory.at(t1);
    for (std::size_t c = 0; c < sc_.rig.cameras.size(); ++c) {
      CameraFrame f;
      f.camera_id = static_cast<int>(c);
      f.trigger_time = t1;
      f.exposure = 1.0 / std::max(sc_.rig.calib[c].alpha, 1e-6);
      f.image = render_camera(sc_.world, k.pose * sc_.rig.cameras[c].T_bc,
                              sc_.rig.cameras[c], sc_.rig.calib[c]);
      frames.push_back(std::move(f));
    }
    return assemble_packet(std::move(scan), std::move(imu), std::move(frames),
                           epoch);
  }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t epoch,
                           std::uint64_t stream) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ull + epoch * 0xBF58476D1CE4E5B9ull +
                      stream * 0x94D049BB133111EBull;
    h ^= h >> 31;
    h *= 0xD6E8FEB86659FD93ull;
    h ^= h >> 27;
    return h;
  }

  Scenario sc_;
};

}  // namespace vlio::sim
