#pragma once

// Recorded-sequence I/O: PGM images plus the CSV directory layout
//   imu.csv                 t, wx, wy, wz, ax, ay, az
//   lidar/<epoch>.csv       t, x, y, z, intensity
//   cam<i>/<epoch>.pgm      16-bit grayscale frame
//   cam<i>/meta.csv         epoch, t_trigger, exposure

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlio/image.hpp"
#include "vlio/sim.hpp"
#include "vlio/sync.hpp"

namespace vlio {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// 16-bit big-endian binary PGM (P5), values scaled from [0,1].
inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n65535\n";
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double v = std::clamp(img.at(x, y), 0.0, 1.0);
      const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
      const char bytes[2] = {static_cast<char>(q >> 8),
                             static_cast<char>(q & 0xff)};
      out.write(bytes, 2);
    }
  }
}

inline Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || width <= 0 || height <= 0 || maxval <= 0) {
    throw IoError("malformed PGM header in " + path);
  }
  in.get();  // single whitespace after maxval
  Image img(width, height);
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<char> row(static_cast<std::size_t>(width) * bytes);
  for (int y = 0; y < height; ++y) {
    in.read(row.data(), static_cast<std::streamsize>(row.size()));
    if (!in) throw IoError("truncated PGM data in " + path);
    for (int x = 0; x < width; ++x) {
      unsigned v = static_cast<unsigned char>(row[x * bytes]);
      if (bytes == 2) {
        v = (v << 8) | static_cast<unsigned char>(row[x * bytes + 1]);
      }
      img.at(x, y) = static_cast<double>(v) / maxval;
    }
  }
  return img;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

inline std::vector<double> parse_csv_line(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

}  // namespace detail

// Writes the whole simulated sequence under `dir`.
inline void dump_sequence(sim::Simulator& simulator, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "lidar");
  const int num_cams = static_cast<int>(simulator.scenario().rig.cameras.size());
  std::vector<std::ofstream> metas;
  for (int k = 0; k < num_cams; ++k) {
    const fs::path cam_dir = fs::path(dir) / ("cam" + std::to_string(k));
    fs::create_directories(cam_dir);
    metas.emplace_back(cam_dir / "meta.csv");
    metas.back() << "epoch,t_trigger,exposure\n";
  }
  std::ofstream imu_out(fs::path(dir) / "imu.csv");
  imu_out << "t,wx,wy,wz,ax,ay,az\n";

  for (int k = 1; k <= simulator.num_epochs(); ++k) {
    const MeasurementPacket pkt = simulator.packet(k);
    const double t0 = (k - 1) * simulator.epoch_period();
    for (const ImuSample& s : pkt.imu) {
      // Epochs share boundary samples; skip repeats.
      if (k > 1 && s.timestamp <= t0 + 1e-12) continue;
      imu_out << detail::fmt_double(s.timestamp);
      for (int i = 0; i < 3; ++i) {
        imu_out << "," << detail::fmt_double(s.angular_velocity[i]);
      }
      for (int i = 0; i < 3; ++i) {
        imu_out << "," << detail::fmt_double(s.linear_acceleration[i]);
      }
      imu_out << "\n";
    }
    std::ofstream scan_out(fs::path(dir) / "lidar" /
                           (std::to_string(k) + ".csv"));
    scan_out << "t,x,y,z,intensity\n";
    for (const TimedPoint& p : pkt.points) {
      scan_out << detail::fmt_double(p.timestamp) << ","
               << detail::fmt_double(p.position.x()) << ","
               << detail::fmt_double(p.position.y()) << ","
               << detail::fmt_double(p.position.z()) << ","
               << detail::fmt_double(p.intensity) << "\n";
    }
    for (const CameraFrame& f : pkt.frames) {
      const fs::path cam_dir =
          fs::path(dir) / ("cam" + std::to_string(f.camera_id));
      write_pgm((cam_dir / (std::to_string(k) + ".pgm")).string(), f.image);
      metas[f.camera_id] << k << "," << detail::fmt_double(f.trigger_time)
                         << "," << detail::fmt_double(f.exposure) << "\n";
    }
  }
}

// Loads a recorded sequence back into per-epoch measurement packets.
inline std::vector<MeasurementPacket> load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<MeasurementPacket> packets;

  std::vector<ImuSample> imu;
  {
    std::ifstream in(fs::path(dir) / "imu.csv");
    if (!in) throw IoError("missing imu.csv in " + dir);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto v = detail::parse_csv_line(line);
      if (v.size() != 7) throw IoError("malformed imu.csv row: " + line);
      imu.push_back({Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6]), v[0]});
    }
  }

  // Camera metadata: epoch -> (trigger, exposure) per camera.
  int num_cams = 0;
  while (fs::exists(fs::path(dir) / ("cam" + std::to_string(num_cams)))) {
    ++num_cams;
  }
  std::vector<std::vector<std::pair<double, double>>> meta(num_cams);
  for (int k = 0; k < num_cams; ++k) {
    std::ifstream in(fs::path(dir) / ("cam" + std::to_string(k)) / "meta.csv");
    if (!in) throw IoError("missing meta.csv for camera " + std::to_string(k));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto v = detail::parse_csv_line(line);
      if (v.size() != 3) throw IoError("malformed meta.csv row: " + line);
      const auto epoch = static_cast<std::size_t>(v[0]);
      if (meta[k].size() < epoch) meta[k].resize(epoch);
      meta[k][epoch - 1] = {v[1], v[2]};
    }
  }

  for (int epoch = 1;; ++epoch) {
    const fs::path scan_path =
        fs::path(dir) / "lidar" / (std::to_string(epoch) + ".csv");
    if (!fs::exists(scan_path)) break;
    MeasurementPacket pkt;
    pkt.epoch = epoch;
    std::ifstream in(scan_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto v = detail::parse_csv_line(line);
      if (v.size() != 5) throw IoError("malformed lidar row: " + line);
      pkt.points.push_back({Vec3(v[1], v[2], v[3]), v[0], v[4]});
    }
    for (int k = 0; k < num_cams; ++k) {
      if (static_cast<std::size_t>(epoch) > meta[k].size()) continue;
      CameraFrame frame;
      frame.camera_id = k;
      frame.trigger_time = meta[k][epoch - 1].first;
      frame.exposure = meta[k][epoch - 1].second;
      frame.image = read_pgm((fs::path(dir) / ("cam" + std::to_string(k)) /
                              (std::to_string(epoch) + ".pgm"))
                                 .string());
      pkt.frames.push_back(std::move(frame));
    }
    if (pkt.frames.empty()) {
      pkt.trigger_time = pkt.points.empty() ? 0.0 : pkt.points.back().timestamp;
    } else {
      pkt.trigger_time = pkt.frames.front().trigger_time;
    }
    // IMU span: from the previous trigger (or sequence start) to this one.
    const double t1 = pkt.trigger_time;
    const double t0 = packets.empty() ? imu.front().timestamp
                                      : packets.back().trigger_time;
    for (const ImuSample& s : imu) {
      if (s.timestamp >= t0 - 1e-9 && s.timestamp <= t1 + 1e-9) {
        pkt.imu.push_back(s);
      }
    }
    packets.push_back(std::move(pkt));
  }
  return packets;
}

}  // namespace vlio
