#pragma once

// End-to-end runner shared by the CLI and the integration tests: simulate a
// scenario, feed the engine epoch by epoch, and write the evaluation
// artifacts (trajectories, map, metrics).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "vlio/eval.hpp"
#include "vlio/pipeline.hpp"
#include "vlio/sim.hpp"

namespace vlio {

struct RunOptions {
  int cams = -1;            // override camera count, -1 keeps scenario value
  std::uint64_t seed = 0;   // override seed, 0 keeps scenario value
  bool migration = true;
  bool adaptive_cov = true;
  bool vision = true;
  std::string out_dir;      // empty: no files written
  EngineConfig engine;
};

struct RunReport {
  double ate_rmse = 0.0;
  int migration_events = 0;
  std::size_t colored_points = 0;
  std::size_t map_points = 0;
  long vision_evals = 0;
  std::vector<double> epoch_seconds;
  std::vector<EpochStats> epochs;
  TrajectoryFile estimate;
  TrajectoryFile ground_truth;
};

inline NavState initial_state(const sim::Scenario& sc) {
  NavState x(static_cast<int>(sc.rig.cameras.size()));
  const sim::KinematicSample k0 = sc.trajectory.at(0.0);
  x.rotation = k0.pose.rotation;
  x.position = k0.pose.translation;
  x.velocity = k0.velocity;
  x.gravity = sc.gravity;
  for (int c = 0; c < x.num_cameras(); ++c) {
    x.inv_exposure[c] = 1.0 / sc.rig.calib[c].alpha;
  }
  return x;
}

inline sim::Scenario apply_overrides(sim::Scenario sc, const RunOptions& opt) {
  if (opt.seed != 0) sc.seed = opt.seed;
  if (opt.cams > 0 && opt.cams < static_cast<int>(sc.rig.cameras.size())) {
    sc.rig.cameras.resize(opt.cams);
    sc.rig.calib.resize(opt.cams);
  }
  return sc;
}

// `tamper`, when set, mutates each packet before the engine sees it (e.g. to
// inject sensor faults for robustness experiments).
inline RunReport run_scenario(
    const sim::Scenario& scenario_in, const RunOptions& opt = {},
    const std::function<void(MeasurementPacket&)>& tamper = {}) {
  const sim::Scenario sc = apply_overrides(scenario_in, opt);
  sim::Simulator simulator(sc);

  EngineConfig cfg = opt.engine;
  cfg.vision_enabled = opt.vision;
  cfg.migration_enabled = opt.migration;
  cfg.adaptive_cov_enabled = opt.adaptive_cov;

  const int num_cams = static_cast<int>(sc.rig.cameras.size());
  Engine engine(sc.rig.cameras, sc.rig.calib, cfg, initial_state(sc),
                default_prior_covariance(num_cams));

  RunReport rep;
  for (int k = 1; k <= simulator.num_epochs(); ++k) {
    const auto t_start = std::chrono::steady_clock::now();
    MeasurementPacket pkt = simulator.packet(k);
    if (tamper) tamper(pkt);
    const EpochStats st = engine.process(pkt);
    rep.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_start)
            .count());
    rep.epochs.push_back(st);
    rep.migration_events += st.migration_events;
    rep.vision_evals += st.vision_evals;
    const sim::KinematicSample gt = simulator.ground_truth(pkt.trigger_time);
    rep.ground_truth.push_back({pkt.trigger_time, gt.pose.translation,
                                Eigen::Quaterniond(gt.pose.rotation)});
  }
  rep.estimate = engine.trajectory();
  rep.colored_points = engine.map().count_colored();
  rep.map_points = engine.map().num_points();

  if (associate(rep.estimate, rep.ground_truth).size() >= 3) {
    rep.ate_rmse = ate_rmse(rep.estimate, rep.ground_truth);
  }

  if (!opt.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    write_trajectory(rep.estimate, (fs::path(opt.out_dir) / "est.tum").string());
    write_trajectory(rep.ground_truth,
                     (fs::path(opt.out_dir) / "gt.tum").string());
    engine.map().export_ply((fs::path(opt.out_dir) / "map.ply").string());

    std::ofstream metrics(fs::path(opt.out_dir) / "metrics.txt");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", rep.ate_rmse);
    metrics << "ate_rmse=" << buf << "\n"
            << "epochs=" << rep.epochs.size() << "\n"
            << "migration_events=" << rep.migration_events << "\n"
            << "colored_points=" << rep.colored_points << "\n"
            << "map_points=" << rep.map_points << "\n"
            << "cameras=" << num_cams << "\n"
            << "seed=" << sc.seed << "\n";

    // Wall-clock timing is nondeterministic by nature, so it lives in its
    // own file and metrics.txt stays reproducible byte for byte.
    std::ofstream timing(fs::path(opt.out_dir) / "timing.csv");
    timing << "epoch,seconds\n";
    for (std::size_t i = 0; i < rep.epoch_seconds.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", rep.epoch_seconds[i]);
      timing << (i + 1) << "," << buf << "\n";
    }
  }
  return rep;
}

struct AblationRow {
  std::string name;
  RunReport report;
};

// Runs named configurations on the same scenario and seed.
inline std::vector<AblationRow> ablate(
    const sim::Scenario& sc,
    const std::vector<std::pair<std::string, RunOptions>>& grid) {
  std::vector<AblationRow> rows;
  for (const auto& [name, opt] : grid) {
    rows.push_back({name, run_scenario(sc, opt)});
  }
  return rows;
}

inline void write_ablation_csv(const std::string& path,
                               const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  out << "config,ate_rmse,migration_events,colored_points,mean_epoch_seconds\n";
  char buf[64];
  for (const auto& row : rows) {
    double mean_t = 0.0;
    for (double s : row.report.epoch_seconds) mean_t += s;
    if (!row.report.epoch_seconds.empty()) {
      mean_t /= static_cast<double>(row.report.epoch_seconds.size());
    }
    out << row.name << ",";
    std::snprintf(buf, sizeof buf, "%.9f", row.report.ate_rmse);
    out << buf << "," << row.report.migration_events << ","
        << row.report.colored_points << ",";
    std::snprintf(buf, sizeof buf, "%.6f", mean_t);
    out << buf << "\n";
  }
}

}  // namespace vlio
