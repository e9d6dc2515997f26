#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "moslam/geometry.hpp"

namespace moslam {

struct TrajectoryEntry {
  double timestamp = 0;
  RigidPose pose;
};

struct Trajectory {
  std::vector<TrajectoryEntry> entries;

  void add(double ts, const RigidPose& p) {
    if (!entries.empty() && ts <= entries.back().timestamp)
      throw FormatError("trajectory timestamps must be strictly increasing");
    entries.push_back({ts, p});
  }
  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// TUM format: "timestamp tx ty tz qx qy qz qw", '#' comments.
inline Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file: " + path);
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double ts, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw FormatError(path + ": malformed line " + std::to_string(lineno));
    traj.add(ts, pose_from_quaternion(Vec3(tx, ty, tz), Eigen::Quaterniond(qw, qx, qy, qz)));
  }
  return traj;
}

inline void save_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory file: " + path);
  out << std::setprecision(9) << std::fixed;
  for (const auto& e : traj.entries) {
    const Eigen::Quaterniond q = to_quaternion(e.pose);
    out << e.timestamp << " " << e.pose.t.x() << " " << e.pose.t.y() << " " << e.pose.t.z() << " "
        << q.x() << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
  }
}

}  // namespace moslam
