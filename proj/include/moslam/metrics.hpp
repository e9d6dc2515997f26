#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "moslam/trajectory.hpp"

namespace moslam {

constexpr double kAssocMaxGap = 0.020;  // seconds

// Nearest-timestamp association within 20 ms; each truth entry used once.
inline std::vector<std::pair<const TrajectoryEntry*, const TrajectoryEntry*>> match_trajectories(
    const Trajectory& est, const Trajectory& truth, double max_gap = kAssocMaxGap) {
  std::vector<std::pair<const TrajectoryEntry*, const TrajectoryEntry*>> matches;
  size_t j = 0;
  for (const auto& e : est.entries) {
    while (j + 1 < truth.entries.size() &&
           std::abs(truth.entries[j + 1].timestamp - e.timestamp) <=
               std::abs(truth.entries[j].timestamp - e.timestamp))
      ++j;
    if (j < truth.entries.size() &&
        std::abs(truth.entries[j].timestamp - e.timestamp) <= max_gap)
      matches.emplace_back(&e, &truth.entries[j]);
  }
  return matches;
}

inline double ate_rmse(const Trajectory& est, const Trajectory& truth) {
  const auto matches = match_trajectories(est, truth);
  if (matches.size() < 2) throw NoOverlapError("ate_rmse: fewer than 2 matched pairs");
  std::vector<Vec3> src, dst;
  for (const auto& [e, g] : matches) {
    src.push_back(e->pose.t);
    dst.push_back(g->pose.t);
  }
  const RigidPose T = rigid_align(src, dst);
  double sq = 0;
  for (size_t i = 0; i < src.size(); ++i) sq += (T * src[i] - dst[i]).squaredNorm();
  return std::sqrt(sq / double(src.size()));
}

struct RpeResult {
  double translational = 0;  // metres / second
  double rotational = 0;     // degrees / second
};

inline RpeResult rpe_rmse(const Trajectory& est, const Trajectory& truth, double delta = 1.0) {
  const auto matches = match_trajectories(est, truth);
  if (matches.size() < 2) throw NoOverlapError("rpe_rmse: fewer than 2 matched pairs");
  double sq_t = 0, sq_r = 0;
  size_t n = 0;
  for (size_t i = 0; i < matches.size(); ++i) {
    // Find the matched pair closest to t + delta.
    const double target = matches[i].first->timestamp + delta;
    size_t best = matches.size();
    double bestgap = kAssocMaxGap;
    for (size_t k = i + 1; k < matches.size(); ++k) {
      const double gap = std::abs(matches[k].first->timestamp - target);
      if (gap <= bestgap) {
        bestgap = gap;
        best = k;
      }
      if (matches[k].first->timestamp > target + kAssocMaxGap) break;
    }
    if (best == matches.size()) continue;
    const RigidPose dq = matches[i].second->pose.inverse() * matches[best].second->pose;
    const RigidPose dp = matches[i].first->pose.inverse() * matches[best].first->pose;
    const RigidPose err = dq.inverse() * dp;
    sq_t += err.t.squaredNorm() / (delta * delta);
    const double angle =
        std::acos(std::clamp((err.R.trace() - 1.0) * 0.5, -1.0, 1.0)) * 180.0 / M_PI;
    sq_r += angle * angle / (delta * delta);
    ++n;
  }
  if (n == 0) throw NoOverlapError("rpe_rmse: no pose pairs at requested delta");
  return {std::sqrt(sq_t / double(n)), std::sqrt(sq_r / double(n))};
}

// IoU of one label's support in two label images; both-empty counts as 1.
inline double label_iou(const Image<uint8_t>& est, const Image<uint8_t>& gt, uint8_t label) {
  size_t inter = 0, uni = 0;
  for (int y = 0; y < est.height(); ++y)
    for (int x = 0; x < est.width(); ++x) {
      const bool a = est.at(x, y) == label;
      const bool b = gt.at(x, y) == label;
      inter += (a && b);
      uni += (a || b);
    }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline std::vector<double> iou_series(const std::vector<Image<uint8_t>>& est,
                                      const std::vector<Image<uint8_t>>& gt, uint8_t label) {
  std::vector<double> out;
  for (size_t i = 0; i < est.size() && i < gt.size(); ++i)
    out.push_back(label_iou(est[i], gt[i], label));
  return out;
}

}  // namespace moslam
