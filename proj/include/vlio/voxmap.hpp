#pragma once

// Unified volumetric map: per-voxel plane statistics from LiDAR with
// one-level octree refinement, plus visual map points carrying multi-view
// patch observations.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlio/geom.hpp"
#include "vlio/image.hpp"

namespace vlio {

struct TooFewPoints : std::runtime_error {
  TooFewPoints() : std::runtime_error("plane fit needs at least N_min points") {}
};

using VoxelKey = Eigen::Vector3i;

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    return static_cast<std::size_t>(k.x()) * 73856093u ^
           static_cast<std::size_t>(k.y()) * 19349669u ^
           static_cast<std::size_t>(k.z()) * 83492791u;
  }
};
struct VoxelKeyEq {
  bool operator()(const VoxelKey& a, const VoxelKey& b) const { return a == b; }
};

inline VoxelKey voxel_key(const Vec3& p, double v_size) {
  return {static_cast<int>(std::floor(p.x() / v_size)),
          static_cast<int>(std::floor(p.y() / v_size)),
          static_cast<int>(std::floor(p.z() / v_size))};
}

struct PlaneParams {
  Vec3 normal = Vec3::UnitZ();   // unit
  Vec3 centroid = Vec3::Zero();  // [m]
  double d = 0.0;                // -n . centroid
  int count = 0;
  double lambda_min = 0.0;       // [m^2]
};

// Signed distance of a world point to the plane.
// d(n . p_w + d)/d[dtheta, dp] for p_w = R_wb Exp(dtheta) p_b + t + dp.
inline Eigen::Matrix<double, 1, 6> point_to_plane_jacobian(
    const Vec3& normal, const Mat3& R_wb, const Vec3& p_body) {
  Eigen::Matrix<double, 1, 6> row;
  row.leftCols<3>() = -normal.transpose() * R_wb * skew(p_body);
  row.rightCols<3>() = normal.transpose();
  return row;
}

inline double point_to_plane(const PlaneParams& plane, const Vec3& p_w) {
  return plane.normal.dot(p_w) + plane.d;
}

struct VoxmapConfig {
  double v_size = 0.5;             // [m]
  double eps_plane = 1e-3;         // planarity bound on lambda_min [m^2]
  double eps_degenerate = 1e-6;    // middle-eigenvalue rank bound [m^2]
  int n_min = 5;                   // minimum points for a plane fit
  int n_split = 50;                // subdivision trigger
  double refit_ratio = 1.25;       // refit when count grows by this factor
  int max_points_per_voxel = 1000; // statistics freeze beyond this
  // Visual point management.
  int grid_size = 40;              // spawn grid cell [px]
  double shi_tomasi_min = 1e-4;    // spawn response floor
  int patch_size = 8;              // S
  int patch_margin = 4;            // extra border stored for warping
  int pyramid_levels = 3;          // L
  double obs_rot_thresh = 10.0 * M_PI / 180.0;  // theta_obs
  double obs_px_thresh = 40.0;                  // u_obs [px]
  int max_observations = 8;                     // N_obs_max
};

// Covariance (scatter eigendecomposition) plane fit; returns nullopt for non-planar or
// rank-deficient (collinear) point sets. Normal sign faces the viewpoint.
inline std::optional<PlaneParams> fit_plane(const std::vector<Vec3>& points,
                                            const Vec3& viewpoint,
                                            const VoxmapConfig& cfg = {}) {
  const int n = static_cast<int>(points.size());
  if (n < cfg.n_min) throw TooFewPoints();
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= n;
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov += d * d.transpose();
  }
  cov /= n;
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const double lmin = eig.eigenvalues()[0];
  const double lmid = eig.eigenvalues()[1];
  if (lmin >= cfg.eps_plane) return std::nullopt;
  if (lmid < cfg.eps_degenerate) return std::nullopt;  // collinear set
  PlaneParams plane;
  plane.normal = eig.eigenvectors().col(0);
  if (plane.normal.dot(viewpoint - mean) < 0.0) plane.normal = -plane.normal;
  plane.centroid = mean;
  plane.d = -plane.normal.dot(mean);
  plane.count = n;
  plane.lambda_min = lmin;
  return plane;
}

// A square intensity patch stored with a sampling margin so homography
// warps can resample beyond the S x S core.
struct Patch {
  int core = 0;    // S
  int margin = 0;  // extra border on each side
  Eigen::ArrayXXd values;  // (core + 2*margin)^2, row = y

  int extent() const { return core + 2 * margin; }
  double half() const { return (extent() - 1) / 2.0; }

  // Bilinear sample at offset (dx, dy) from the patch center.
  bool sample(double dx, double dy, double& out) const {
    const double x = half() + dx;
    const double y = half() + dy;
    if (x < 0 || y < 0 || x > extent() - 1 || y > extent() - 1) return false;
    const int x0 = std::min(static_cast<int>(x), extent() - 2);
    const int y0 = std::min(static_cast<int>(y), extent() - 2);
    const double ax = x - x0, ay = y - y0;
    out = (1 - ax) * (1 - ay) * values(y0, x0) + ax * (1 - ay) * values(y0, x0 + 1) +
          (1 - ax) * ay * values(y0 + 1, x0) + ax * ay * values(y0 + 1, x0 + 1);
    return true;
  }
};

// Extracts a patch pyramid around `anchor`: every level has the same sample
// extent, sampled at stride 2^l. Returns false if any sample would leave the
// image.
inline bool extract_pyramid(const Image& img, const Vec2& anchor, int core,
                            int margin, int levels, std::vector<Patch>& out) {
  out.clear();
  const int extent = core + 2 * margin;
  const double half = (extent - 1) / 2.0;
  for (int l = 0; l < levels; ++l) {
    const double stride = static_cast<double>(1 << l);
    Patch patch;
    patch.core = core;
    patch.margin = margin;
    patch.values.resize(extent, extent);
    for (int y = 0; y < extent; ++y) {
      for (int x = 0; x < extent; ++x) {
        const double px = anchor.x() + (x - half) * stride;
        const double py = anchor.y() + (y - half) * stride;
        if (!img.contains(px, py)) return false;
        patch.values(y, x) = img.bilinear(px, py);
      }
    }
    out.push_back(std::move(patch));
  }
  return true;
}

struct ObservationRecord {
  std::vector<Patch> pyramid;  // L levels
  Pose T_wc;                   // camera pose in world at capture
  double inv_exposure = 1.0;   // tau
  int camera_id = 0;
  double timestamp = 0.0;
  Vec2 anchor = Vec2::Zero();  // pixel of the point at capture
};

struct VisualPoint {
  std::int64_t id = 0;
  Vec3 position = Vec3::Zero();  // world [m]
  std::deque<ObservationRecord> observations;  // newest at back
  int migration_count = 0;
  int ref_camera = -1;
  std::unordered_map<int, double> last_seen;  // camera id -> time

  // Newest observation captured by `camera_id`, if any.
  const ObservationRecord* record_from(int camera_id) const {
    for (auto it = observations.rbegin(); it != observations.rend(); ++it) {
      if (it->camera_id == camera_id) return &*it;
    }
    return nullptr;
  }
};

// Appends a new observation iff viewpoint rotation or pixel displacement
// relative to the newest record crosses the configured thresholds. The
// record list is capped with oldest-first eviction.
inline bool update_observation(VisualPoint& point, ObservationRecord record,
                               const VoxmapConfig& cfg = {}) {
  if (!point.observations.empty()) {
    const ObservationRecord& last = point.observations.back();
    const double rot =
        so3_log(last.T_wc.rotation.transpose() * record.T_wc.rotation).norm();
    const double disp = last.camera_id == record.camera_id
                            ? (record.anchor - last.anchor).norm()
                            : std::numeric_limits<double>::infinity();
    if (rot <= cfg.obs_rot_thresh && disp <= cfg.obs_px_thresh) return false;
  }
  point.observations.push_back(std::move(record));
  while (static_cast<int>(point.observations.size()) > cfg.max_observations) {
    point.observations.pop_front();
  }
  if (point.ref_camera < 0) point.ref_camera = point.observations.back().camera_id;
  return true;
}

struct MapPoint {
  Vec3 position = Vec3::Zero();
  std::array<std::uint8_t, 3> rgb = {0, 0, 0};
  bool colored = false;
};

struct Voxel {
  Vec3 sum = Vec3::Zero();
  Mat3 outer = Mat3::Zero();
  int count = 0;
  int count_at_fit = 0;
  std::optional<PlaneParams> plane;
  std::vector<MapPoint> points;
  std::vector<std::int64_t> visual_point_ids;
  std::unique_ptr<std::array<Voxel, 8>> children;  // one-level octree
  bool frozen = false;
};

struct InsertSummary {
  std::size_t inserted = 0;
  std::size_t refits = 0;
  std::size_t subdivisions = 0;
};

class VoxelMap {
 public:
  explicit VoxelMap(VoxmapConfig cfg = {}) : cfg_(cfg) {}

  const VoxmapConfig& config() const { return cfg_; }
  std::size_t num_voxels() const { return voxels_.size(); }

  InsertSummary insert_scan(const std::vector<MapPoint>& points,
                            const Vec3& viewpoint) {
    InsertSummary summary;
    for (const auto& p : points) {
      Voxel& voxel = voxels_[voxel_key(p.position, cfg_.v_size)];
      insert_into(voxel, p, viewpoint, 0, summary);
      ++summary.inserted;
    }
    return summary;
  }

  InsertSummary insert_scan(const std::vector<Vec3>& points,
                            const Vec3& viewpoint) {
    std::vector<MapPoint> mps(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) mps[i].position = points[i];
    return insert_scan(mps, viewpoint);
  }

  // Plane hosting the point, if any. Children shadow their parent.
  const PlaneParams* query_plane(const Vec3& p) const {
    const auto it = voxels_.find(voxel_key(p, cfg_.v_size));
    if (it == voxels_.end()) return nullptr;
    const Voxel& v = it->second;
    if (v.children) {
      const Voxel& child = (*v.children)[child_index(p, it->first)];
      return child.plane ? &*child.plane : nullptr;
    }
    return v.plane ? &*v.plane : nullptr;
  }

  const Voxel* find_voxel(const VoxelKey& key) const {
    const auto it = voxels_.find(key);
    return it == voxels_.end() ? nullptr : &it->second;
  }

  std::vector<VisualPoint*> visual_points() {
    std::vector<VisualPoint*> out;
    out.reserve(visual_points_.size());
    for (auto& vp : visual_points_) out.push_back(vp.get());
    return out;
  }

  VisualPoint& add_visual_point(const Vec3& position) {
    auto vp = std::make_unique<VisualPoint>();
    vp->id = next_point_id_++;
    vp->position = position;
    VisualPoint& ref = *vp;
    visual_points_.push_back(std::move(vp));
    voxels_[voxel_key(position, cfg_.v_size)].visual_point_ids.push_back(ref.id);
    return ref;
  }

  std::size_t num_visual_points() const { return visual_points_.size(); }

  std::size_t count_colored() const {
    std::size_t n = 0;
    for_each_point([&](const VoxelKey&, const MapPoint& p) {
      if (p.colored) ++n;
    });
    return n;
  }

  std::size_t num_points() const {
    std::size_t n = 0;
    for_each_point([&](const VoxelKey&, const MapPoint&) { ++n; });
    return n;
  }

  template <typename Fn>
  void for_each_point(Fn&& fn) const {
    for (const auto& [key, voxel] : voxels_) {
      for (const auto& p : voxel.points) fn(key, p);
      if (voxel.children) {
        for (const auto& child : *voxel.children) {
          for (const auto& p : child.points) fn(key, p);
        }
      }
    }
  }

  template <typename Fn>
  void for_each_voxel(Fn&& fn) const {
    for (const auto& [key, voxel] : voxels_) fn(key, voxel);
  }

  // Binary little-endian PLY with RGB, a colored flag, and the source voxel
  // key as extra int properties.
  void export_ply(const std::string& path) const;

 private:
  int child_index(const Vec3& p, const VoxelKey& key) const {
    const Vec3 base = key.cast<double>() * cfg_.v_size;
    const double h = 0.5 * cfg_.v_size;
    int idx = 0;
    if (p.x() - base.x() >= h) idx |= 1;
    if (p.y() - base.y() >= h) idx |= 2;
    if (p.z() - base.z() >= h) idx |= 4;
    return idx;
  }

  void insert_into(Voxel& voxel, const MapPoint& p, const Vec3& viewpoint,
                   int depth, InsertSummary& summary) {
    if (voxel.children) {
      const VoxelKey key = voxel_key(p.position, cfg_.v_size);
      insert_into((*voxel.children)[child_index(p.position, key)], p, viewpoint,
                  depth + 1, summary);
      return;
    }
    if (voxel.frozen) return;
    voxel.points.push_back(p);
    voxel.sum += p.position;
    voxel.outer += p.position * p.position.transpose();
    ++voxel.count;
    if (voxel.count >= cfg_.max_points_per_voxel) voxel.frozen = true;

    const bool due = voxel.count >= cfg_.n_min &&
                     (voxel.count_at_fit == 0 ||
                      voxel.count >= cfg_.refit_ratio * voxel.count_at_fit);
    if (!due) return;
    voxel.count_at_fit = voxel.count;
    refit(voxel, viewpoint);
    ++summary.refits;

    // Dense non-planar voxels subdivide once; points move to the octants.
    if (depth == 0 && !voxel.plane && voxel.count > cfg_.n_split) {
      const VoxelKey key = voxel_key(p.position, cfg_.v_size);
      voxel.children = std::make_unique<std::array<Voxel, 8>>();
      for (const auto& mp : voxel.points) {
        Voxel& child = (*voxel.children)[child_index(mp.position, key)];
        child.points.push_back(mp);
        child.sum += mp.position;
        child.outer += mp.position * mp.position.transpose();
        ++child.count;
      }
      voxel.points.clear();
      voxel.sum.setZero();
      voxel.outer.setZero();
      voxel.count = 0;
      voxel.count_at_fit = 0;
      for (auto& child : *voxel.children) {
        if (child.count >= cfg_.n_min) {
          child.count_at_fit = child.count;
          refit(child, viewpoint);
        }
      }
      ++summary.subdivisions;
    }
  }

  void refit(Voxel& voxel, const Vec3& viewpoint) {
    const double n = voxel.count;
    const Vec3 mean = voxel.sum / n;
    Mat3 cov = voxel.outer / n - mean * mean.transpose();
    cov = 0.5 * (cov + cov.transpose());
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const double lmin = eig.eigenvalues()[0];
    const double lmid = eig.eigenvalues()[1];
    if (lmin >= cfg_.eps_plane || lmid < cfg_.eps_degenerate) {
      voxel.plane.reset();
      return;
    }
    PlaneParams plane;
    plane.normal = eig.eigenvectors().col(0);
    if (plane.normal.dot(viewpoint - mean) < 0.0) plane.normal = -plane.normal;
    plane.centroid = mean;
    plane.d = -plane.normal.dot(mean);
    plane.count = voxel.count;
    plane.lambda_min = std::max(lmin, 0.0);
    voxel.plane = plane;
  }

  VoxmapConfig cfg_;
  std::unordered_map<VoxelKey, Voxel, VoxelKeyHash, VoxelKeyEq> voxels_;
  std::vector<std::unique_ptr<VisualPoint>> visual_points_;
  std::int64_t next_point_id_ = 0;
};

// Pixel margin a point needs for full patch-pyramid support.
inline double patch_support_margin(const VoxmapConfig& cfg) {
  const int extent = cfg.patch_size + 2 * cfg.patch_margin;
  return 0.5 * (extent - 1) * (1 << (cfg.pyramid_levels - 1)) + 2.0;
}

// Promotes LiDAR points with the strongest Shi-Tomasi response into visual
// map points, one per unoccupied grid cell, scanning all camera views.
// Deterministic: candidates are ranked by response, then lowest camera id,
// then lexicographic pixel.
inline std::vector<VisualPoint*> spawn_visual_points(
    VoxelMap& map, const std::vector<Image>& normalized_images,
    const std::vector<CameraModel>& cams, const Pose& T_wb,
    const std::vector<Vec3>& candidates_world, double timestamp,
    const VecXd& inv_exposure) {
  const VoxmapConfig& cfg = map.config();
  const double margin = patch_support_margin(cfg);
  std::vector<VisualPoint*> spawned;

  struct Candidate {
    double response = 0.0;
    std::size_t point_idx = 0;
    Vec2 px = Vec2::Zero();
    bool valid = false;
  };

  // Occupancy and camera poses are shared across cells.
  std::vector<Pose> T_wc(cams.size());
  for (std::size_t k = 0; k < cams.size(); ++k) T_wc[k] = T_wb * cams[k].T_bc;

  std::vector<std::int64_t> promoted;  // candidate indices already used
  for (std::size_t k = 0; k < cams.size(); ++k) {
    const CameraModel& cam = cams[k];
    const Image& img = normalized_images[k];
    const int gx = (cam.width + cfg.grid_size - 1) / cfg.grid_size;
    const int gy = (cam.height + cfg.grid_size - 1) / cfg.grid_size;
    std::vector<char> occupied(static_cast<std::size_t>(gx) * gy, 0);

    const Pose T_cw = T_wc[k].inverse();
    for (VisualPoint* vp : map.visual_points()) {
      Vec2 px;
      if (!cam.try_project(T_cw.apply(vp->position), px)) continue;
      if (!cam.in_image(px)) continue;
      const int cx = static_cast<int>(px.x()) / cfg.grid_size;
      const int cy = static_cast<int>(px.y()) / cfg.grid_size;
      occupied[static_cast<std::size_t>(cy) * gx + cx] = 1;
    }

    std::vector<Candidate> best(static_cast<std::size_t>(gx) * gy);
    for (std::size_t i = 0; i < candidates_world.size(); ++i) {
      Vec2 px;
      if (!cam.try_project(T_cw.apply(candidates_world[i]), px)) continue;
      if (!cam.in_image(px, margin)) continue;
      const int cx = static_cast<int>(px.x()) / cfg.grid_size;
      const int cy = static_cast<int>(px.y()) / cfg.grid_size;
      const std::size_t cell = static_cast<std::size_t>(cy) * gx + cx;
      if (occupied[cell]) continue;
      const double resp = img.shi_tomasi(static_cast<int>(std::lround(px.x())),
                                         static_cast<int>(std::lround(px.y())));
      if (resp < cfg.shi_tomasi_min) continue;
      Candidate& b = best[cell];
      const bool better =
          !b.valid || resp > b.response ||
          (resp == b.response &&
           (px.x() < b.px.x() || (px.x() == b.px.x() && px.y() < b.px.y())));
      if (better) b = {resp, i, px, true};
    }

    for (std::size_t cell = 0; cell < best.size(); ++cell) {
      const Candidate& c = best[cell];
      if (!c.valid) continue;
      if (std::find(promoted.begin(), promoted.end(),
                    static_cast<std::int64_t>(c.point_idx)) != promoted.end()) {
        continue;
      }
      ObservationRecord rec;
      if (!extract_pyramid(img, c.px, cfg.patch_size, cfg.patch_margin,
                           cfg.pyramid_levels, rec.pyramid)) {
        continue;
      }
      rec.T_wc = T_wc[k];
      rec.camera_id = static_cast<int>(k);
      rec.timestamp = timestamp;
      rec.anchor = c.px;
      rec.inv_exposure =
          inv_exposure.size() > static_cast<int>(k) ? inv_exposure[k] : 1.0;
      VisualPoint& vp = map.add_visual_point(candidates_world[c.point_idx]);
      vp.observations.push_back(std::move(rec));
      vp.ref_camera = static_cast<int>(k);
      vp.last_seen[static_cast<int>(k)] = timestamp;
      promoted.push_back(static_cast<std::int64_t>(c.point_idx));
      occupied[cell] = 1;
      spawned.push_back(&vp);
    }
  }
  return spawned;
}

inline void VoxelMap::export_ply(const std::string& path) const {
  std::vector<std::pair<VoxelKey, const MapPoint*>> pts;
  for_each_point([&](const VoxelKey& key, const MapPoint& p) {
    pts.emplace_back(key, &p);
  });
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "comment colored=1 marks points with RGB from at least one camera\n";
  os << "comment voxel_x/voxel_y/voxel_z give the source voxel key\n";
  os << "element vertex " << pts.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "property uchar colored\n";
  os << "property int voxel_x\nproperty int voxel_y\nproperty int voxel_z\n";
  os << "end_header\n";
  for (const auto& [key, p] : pts) {
    const float xyz[3] = {static_cast<float>(p->position.x()),
                          static_cast<float>(p->position.y()),
                          static_cast<float>(p->position.z())};
    os.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    const std::uint8_t rgbc[4] = {p->rgb[0], p->rgb[1], p->rgb[2],
                                  static_cast<std::uint8_t>(p->colored ? 1 : 0)};
    os.write(reinterpret_cast<const char*>(rgbc), sizeof(rgbc));
    const std::int32_t k[3] = {key.x(), key.y(), key.z()};
    os.write(reinterpret_cast<const char*>(k), sizeof(k));
  }
}

}  // namespace vlio
