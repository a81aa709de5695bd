#pragma once

// Trajectory metrics: TUM-format I/O, nearest-timestamp association,
// closed-form rigid alignment, ATE RMSE, and PLY colored-point counting.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlio/geom.hpp"

namespace vlio {

struct TooFewPairs : std::runtime_error {
  TooFewPairs() : std::runtime_error("need at least 3 associated pose pairs") {}
};
struct MalformedFile : std::runtime_error {
  explicit MalformedFile(const std::string& what) : std::runtime_error(what) {}
};

struct StampedPose {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

using TrajectoryFile = std::vector<StampedPose>;

// Plain-text "timestamp tx ty tz qx qy qz qw" lines.
inline void write_trajectory(const TrajectoryFile& traj, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw MalformedFile("cannot open " + path);
  char line[256];
  for (const auto& s : traj) {
    std::snprintf(line, sizeof(line),
                  "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", s.t,
                  s.position.x(), s.position.y(), s.position.z(),
                  s.orientation.x(), s.orientation.y(), s.orientation.z(),
                  s.orientation.w());
    os << line;
  }
}

inline TrajectoryFile read_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MalformedFile("cannot open " + path);
  TrajectoryFile traj;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    StampedPose s;
    double qx, qy, qz, qw;
    if (!(ss >> s.t >> s.position.x() >> s.position.y() >> s.position.z() >>
          qx >> qy >> qz >> qw)) {
      throw MalformedFile("bad trajectory line: " + line);
    }
    s.orientation = Eigen::Quaterniond(qw, qx, qy, qz);
    traj.push_back(s);
  }
  return traj;
}

// Nearest-timestamp association; pairs with gap beyond `max_gap` are
// excluded, never interpolated.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(
    const TrajectoryFile& est, const TrajectoryFile& gt,
    double max_gap = 0.01) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    while (j + 1 < gt.size() &&
           std::abs(gt[j + 1].t - est[i].t) <= std::abs(gt[j].t - est[i].t)) {
      ++j;
    }
    if (!gt.empty() && std::abs(gt[j].t - est[i].t) <= max_gap) {
      pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

// Least-squares rigid (no scale) transform mapping est positions onto gt.
inline Pose align(const TrajectoryFile& est, const TrajectoryFile& gt,
                  double max_gap = 0.01) {
  const auto pairs = associate(est, gt, max_gap);
  if (pairs.size() < 3) throw TooFewPairs();
  MatXd src(3, pairs.size()), dst(3, pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    src.col(k) = est[pairs[k].first].position;
    dst.col(k) = gt[pairs[k].second].position;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  return {t.topLeftCorner<3, 3>(), t.topRightCorner<3, 1>()};
}

inline double ate_rmse(const TrajectoryFile& est, const TrajectoryFile& gt,
                       double max_gap = 0.01) {
  const Pose transform = align(est, gt, max_gap);
  const auto pairs = associate(est, gt, max_gap);
  double sum = 0.0;
  for (const auto& [i, j] : pairs) {
    sum += (transform.apply(est[i].position) - gt[j].position).squaredNorm();
  }
  return std::sqrt(sum / pairs.size());
}

// Counts PLY vertices whose `colored` flag is set (RGB assigned from at
// least one camera observation). Understands the binary little-endian
// layout written by VoxelMap::export_ply.
inline std::size_t count_colored_points(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MalformedFile("cannot open " + path);
  std::string line;
  std::size_t vertices = 0;
  long colored_offset = -1, stride = 0;
  bool binary_le = false;
  if (!std::getline(is, line) || line != "ply") throw MalformedFile("not a PLY file");
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tok == "element") {
      std::string what;
      ss >> what >> vertices;
      if (what != "vertex") throw MalformedFile("unsupported element: " + what);
    } else if (tok == "property") {
      std::string type, name;
      ss >> type >> name;
      long size;
      if (type == "float") size = 4;
      else if (type == "uchar") size = 1;
      else if (type == "int") size = 4;
      else throw MalformedFile("unsupported property type: " + type);
      if (name == "colored") colored_offset = stride;
      stride += size;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!binary_le || colored_offset < 0 || stride == 0) {
    throw MalformedFile("missing binary_little_endian format or colored property");
  }
  std::vector<char> buf(stride);
  std::size_t count = 0;
  for (std::size_t i = 0; i < vertices; ++i) {
    if (!is.read(buf.data(), stride)) throw MalformedFile("truncated vertex data");
    if (buf[colored_offset] != 0) ++count;
  }
  return count;
}

}  // namespace vlio
