#include <doctest.h>

#include <random>

#include "vlio/sync.hpp"

using namespace vlio;

TEST_CASE("assign_point matches a brute-force oracle and breaks ties early") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> triggers;
  for (int k = 1; k <= 20; ++k) triggers.push_back(0.5 * k);

  for (int trial = 0; trial < 500; ++trial) {
    const double t = u(rng);
    const std::size_t got = assign_point(t, triggers);
    // Oracle: strictly smaller distance wins; equal distance keeps the
    // earlier index.
    std::size_t want = 0;
    for (std::size_t k = 1; k < triggers.size(); ++k) {
      if (std::abs(t - triggers[k]) < std::abs(t - triggers[want])) want = k;
    }
    CHECK(got == want);
  }

  // Exact midpoint between triggers 0.5 and 1.0.
  CHECK(assign_point(0.75, triggers) == 0);
  CHECK_THROWS_AS(assign_point(1.0, {}), EmptyFrameList);
}

TEST_CASE("segment_scan partitions every point exactly once") {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<TimedPoint> scan(200);
  for (auto& p : scan) p.timestamp = u(rng);
  const std::vector<double> triggers = {0.5, 1.5, 2.5};
  const auto segments = segment_scan(scan, triggers);
  REQUIRE(segments.size() == 3);
  std::size_t total = 0;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    total += segments[k].size();
    for (const auto& p : segments[k]) {
      CHECK(assign_point(p.timestamp, triggers) == k);
    }
  }
  CHECK(total == scan.size());
}

TEST_CASE("assemble_packet validates trigger spread and IMU continuity") {
  std::vector<CameraFrame> frames(2);
  frames[0].camera_id = 0;
  frames[0].trigger_time = 1.0;
  frames[1].camera_id = 1;
  frames[1].trigger_time = 1.0 + 1e-7;

  std::vector<ImuSample> imu;
  for (int k = 0; k <= 20; ++k) {
    ImuSample s;
    s.timestamp = 0.9 + 0.005 * k;
    imu.push_back(s);
  }

  SUBCASE("well-formed input passes through") {
    const auto pkt = assemble_packet({}, imu, frames, 3);
    CHECK(pkt.epoch == 3);
    CHECK(pkt.trigger_time == doctest::Approx(1.0));
    CHECK(pkt.imu.size() == imu.size());
  }
  SUBCASE("camera trigger spread beyond tolerance") {
    frames[1].trigger_time = 1.0 + 1e-3;
    CHECK_THROWS_AS(assemble_packet({}, imu, frames, 3), UnsyncedFrames);
  }
  SUBCASE("IMU gap beyond 3x nominal period") {
    imu[10].timestamp += 0.02;
    CHECK_THROWS_AS(assemble_packet({}, imu, frames, 3), ImuGap);
  }
}
