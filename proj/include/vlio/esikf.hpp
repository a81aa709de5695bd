#pragma once

// Iterated error-state Kalman update: residual stacking in a canonical
// order, adaptive per-camera covariance scaling, and the iterated
// linearization loop solved in information form.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "vlio/geom.hpp"
#include "vlio/photo.hpp"

namespace vlio {

struct SingularInnovation : std::runtime_error {
  SingularInnovation() : std::runtime_error("innovation system is numerically singular") {}
};
struct DimensionMismatch : std::runtime_error {
  DimensionMismatch() : std::runtime_error("residual block dimensions disagree") {}
};
struct NoStats : std::runtime_error {
  NoStats() : std::runtime_error("adaptive covariance needs at least one camera") {}
};

// One stacked measurement contribution. `variance` holds the base noise per
// row (before adaptive scaling).
struct ResidualBlock {
  VecXd r;
  MatXd H;
  VecXd variance;
  SourceTag tag;
};

struct AdaptiveWeights {
  VecXd alpha;               // per camera
  double alpha_cross = 1.0;  // shared across migration pairs
  double floor = 0.25;
  double ceil = 16.0;

  double for_tag(const SourceTag& tag) const {
    switch (tag.kind) {
      case SourceTag::kIntra:
        return tag.camera_i < alpha.size() ? alpha[tag.camera_i] : 1.0;
      case SourceTag::kMigration:
        return alpha_cross;
      default:
        return 1.0;
    }
  }
};

struct TrackingStats {
  int tracked = 0;               // points with a residual this epoch
  double mean_sq_residual = 0.0;
  double mean_gradient = 0.0;    // mean patch gradient magnitude
};

struct AdaptiveConfig {
  // Inflation-only by default: a camera is never trusted beyond its
  // calibrated base noise, only degraded when its tracking quality drops.
  double alpha_floor = 1.0;
  double alpha_ceil = 16.0;
  double f_min = 1e-3;  // tracked-fraction floor
  double g_min = 1e-6;  // gradient floor
};

namespace detail {
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// Per-camera noise scales: worse tracking (large residuals, few tracked
// points, weak gradients) inflates the camera's measurement covariance.
// Cameras with identical statistics all get alpha = 1.
inline AdaptiveWeights adaptive_covariance(
    const std::vector<TrackingStats>& stats, const AdaptiveConfig& cfg = {}) {
  if (stats.empty()) throw NoStats();
  const int n = static_cast<int>(stats.size());
  double total_tracked = 0;
  for (const auto& s : stats) total_tracked += s.tracked;
  std::vector<double> fractions(n), residuals(n), gradients(n);
  for (int k = 0; k < n; ++k) {
    fractions[k] = total_tracked > 0 ? stats[k].tracked / total_tracked : 0.0;
    residuals[k] = stats[k].mean_sq_residual;
    gradients[k] = stats[k].mean_gradient;
  }
  const double r_med = std::max(detail::median(residuals), 1e-12);
  const double f_med = std::max(detail::median(fractions), cfg.f_min);
  const double g_med = std::max(detail::median(gradients), cfg.g_min);

  AdaptiveWeights w;
  w.floor = cfg.alpha_floor;
  w.ceil = cfg.alpha_ceil;
  w.alpha.resize(n);
  for (int k = 0; k < n; ++k) {
    if (stats[k].tracked == 0) {
      // No tracks means no residuals to weight and no evidence either way;
      // a neutral placeholder keeps the cross-view median meaningful.
      w.alpha[k] = 1.0;
      continue;
    }
    // The residual ratio carries the direct evidence about measurement
    // quality; tracked fraction and gradient strength are weaker proxies
    // (a camera tracking few low-texture patches can still match them
    // precisely), so their combined influence is bounded to a factor of 2.
    const double secondary =
        std::clamp((f_med / std::max(fractions[k], cfg.f_min)) *
                       (g_med / std::max(gradients[k], cfg.g_min)),
                   0.5, 2.0);
    const double a = (residuals[k] / r_med) * secondary;
    w.alpha[k] = std::clamp(a, cfg.alpha_floor, cfg.alpha_ceil);
  }
  std::vector<double> alphas(w.alpha.data(), w.alpha.data() + n);
  w.alpha_cross = std::clamp(2.0 * detail::median(alphas), cfg.alpha_floor,
                             2.0 * cfg.alpha_ceil);
  return w;
}

struct StackedSystem {
  VecXd r;
  MatXd H;
  VecXd variance;  // adaptive scaling applied
};

// Concatenates blocks in the canonical order: LiDAR rows first, then intra
// residuals by (camera, point), then migration residuals by (i, j, point).
// Input order does not matter.
inline StackedSystem stack(std::vector<ResidualBlock> blocks,
                           const AdaptiveWeights* weights = nullptr) {
  std::stable_sort(blocks.begin(), blocks.end(),
                   [](const ResidualBlock& a, const ResidualBlock& b) {
                     const auto key = [](const SourceTag& t) {
                       return std::make_tuple(static_cast<int>(t.kind),
                                              t.camera_i, t.camera_j, t.point_id);
                     };
                     return key(a.tag) < key(b.tag);
                   });
  long rows = 0;
  long cols = blocks.empty() ? 0 : blocks.front().H.cols();
  for (const auto& b : blocks) {
    if (b.r.size() != b.H.rows() || b.r.size() != b.variance.size() ||
        b.H.cols() != cols) {
      throw DimensionMismatch();
    }
    rows += b.r.size();
  }
  StackedSystem sys;
  sys.r.resize(rows);
  sys.H.resize(rows, cols);
  sys.variance.resize(rows);
  long at = 0;
  for (const auto& b : blocks) {
    const long n = b.r.size();
    const double scale = weights ? weights->for_tag(b.tag) : 1.0;
    sys.r.segment(at, n) = b.r;
    sys.H.middleRows(at, n) = b.H;
    sys.variance.segment(at, n) = b.variance * scale;
    at += n;
  }
  return sys;
}

struct UpdateOptions {
  int max_iter = 5;
  double tol = 1e-6;
  double cond_max = 1e12;
};

struct UpdateResult {
  VecXd dx;
  MatXd covariance;
  int iterations = 0;
  std::vector<double> step_norms;  // ||dx_l - dx_{l-1}|| per iteration
};

// Residual provider: evaluates all blocks at the linearization point
// x_prior boxplus dx. Residuals are minimized (r with Jacobian H = dr/ddx).
using ResidualProvider = std::function<std::vector<ResidualBlock>(const VecXd&)>;

namespace detail {

// Solves A x = b for symmetric positive definite A, escalating a diagonal
// jitter before giving up.
inline MatXd spd_inverse(const MatXd& a, double cond_max) {
  double jitter = 1e-9;
  for (int attempt = 0; attempt < 4; ++attempt) {
    MatXd trial = a;
    if (attempt > 0) {
      trial += jitter * MatXd::Identity(a.rows(), a.cols());
      jitter *= 10.0;
    }
    const Eigen::LDLT<MatXd> ldlt(trial);
    if (ldlt.info() != Eigen::Success) continue;
    const VecXd d = ldlt.vectorD();
    if (d.minCoeff() <= 0.0 || d.maxCoeff() / d.minCoeff() > cond_max) continue;
    return ldlt.solve(MatXd::Identity(a.rows(), a.cols()));
  }
  throw SingularInnovation();
}

}  // namespace detail

// Iterated update in information form:
//   (P^-1 + H^T R^-1 H) dx = H^T R^-1 (H dx_prev - r(x_prev boxplus dx_prev))
// repeated until the increment step stalls. On purely linear models this
// reproduces the closed-form Kalman update in a single iteration.
inline UpdateResult iterate_update(const MatXd& P_prior,
                                   const ResidualProvider& provider,
                                   const UpdateOptions& opts = {},
                                   const AdaptiveWeights* weights = nullptr) {
  const long dim = P_prior.rows();
  const MatXd P_inv = detail::spd_inverse(P_prior, opts.cond_max);
  UpdateResult res;
  res.dx = VecXd::Zero(dim);
  res.covariance = P_prior;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const StackedSystem sys = stack(provider(res.dx), weights);
    res.iterations = iter + 1;
    if (sys.r.size() == 0 || sys.H.lpNorm<Eigen::Infinity>() == 0.0) {
      res.step_norms.push_back(0.0);
      break;
    }
    const VecXd w = sys.variance.cwiseInverse();
    const MatXd hw = sys.H.transpose() * w.asDiagonal();
    const MatXd s = P_inv + hw * sys.H;
    const MatXd s_inv = detail::spd_inverse(s, opts.cond_max);
    const VecXd dx_new = s_inv * (hw * (sys.H * res.dx - sys.r));
    const double step = (dx_new - res.dx).norm();
    res.dx = dx_new;
    res.covariance = 0.5 * (s_inv + s_inv.transpose());
    res.step_norms.push_back(step);
    if (step < opts.tol) break;
  }
  return res;
}

enum class UpdateSchedule { kSequential, kJoint };

struct ScheduleConfig {
  bool vision_enabled = true;
  UpdateSchedule mode = UpdateSchedule::kSequential;
};

// Phases executed per epoch. Sequential mirrors the LiDAR-first algorithm;
// joint stacks everything into one iterated loop. With vision disabled both
// degenerate to a single geometric update.
enum class UpdatePhase { kLidar, kVision, kJoint };

inline std::vector<UpdatePhase> update_schedule(const ScheduleConfig& cfg) {
  if (!cfg.vision_enabled) return {UpdatePhase::kLidar};
  if (cfg.mode == UpdateSchedule::kJoint) return {UpdatePhase::kJoint};
  return {UpdatePhase::kLidar, UpdatePhase::kVision};
}

}  // namespace vlio
