#pragma once

#include <cmath>

#include "moslam/geometry.hpp"

namespace moslam {

inline IntensityMap intensity_from_color(const ColorMap& c) {
  IntensityMap out(c.width(), c.height());
  for (int y = 0; y < c.height(); ++y)
    for (int x = 0; x < c.width(); ++x) {
      const Rgb& p = c.at(x, y);
      double v = 0.299 * p.r + 0.587 * p.g + 0.114 * p.b;
      out.at(x, y) = static_cast<float>(std::min(255.0, std::max(0.0, std::floor(v + 0.5))));
    }
  return out;
}

inline bool valid_depth(float d) { return d > 0.0f && std::isfinite(d); }

inline VertexMap compute_vertices(const DepthMap& d, const CameraIntrinsics& K) {
  VertexMap vm(d.width(), d.height(), Eigen::Vector3f::Zero());
  const float fx = static_cast<float>(K.fx), fy = static_cast<float>(K.fy);
  const float cx = static_cast<float>(K.cx), cy = static_cast<float>(K.cy);
  for (int y = 0; y < d.height(); ++y)
    for (int x = 0; x < d.width(); ++x) {
      const float z = d.at(x, y);
      if (valid_depth(z)) vm.at(x, y) = Eigen::Vector3f((x - cx) * z / fx, (y - cy) * z / fy, z);
    }
  return vm;
}

// Central differences on the vertex map; normals oriented toward the camera.
// A pixel needs all four axis neighbours valid, otherwise it is invalid.
inline NormalMap compute_normals_from_vertices(const VertexMap& vm) {
  NormalMap nm(vm.width(), vm.height(), Eigen::Vector3f::Zero());
  for (int y = 1; y < vm.height() - 1; ++y)
    for (int x = 1; x < vm.width() - 1; ++x) {
      const Eigen::Vector3f& c = vm.at(x, y);
      const Eigen::Vector3f& l = vm.at(x - 1, y);
      const Eigen::Vector3f& r = vm.at(x + 1, y);
      const Eigen::Vector3f& u = vm.at(x, y - 1);
      const Eigen::Vector3f& dwn = vm.at(x, y + 1);
      if (c.z() <= 0 || l.z() <= 0 || r.z() <= 0 || u.z() <= 0 || dwn.z() <= 0) continue;
      Eigen::Vector3f n = (r - l).cross(dwn - u);
      const float len = n.norm();
      if (len < 1e-12f) continue;
      n /= len;
      if (n.dot(c) > 0) n = -n;  // camera-facing
      nm.at(x, y) = n;
    }
  return nm;
}

inline std::pair<VertexMap, NormalMap> compute_normals(const DepthMap& d,
                                                       const CameraIntrinsics& K) {
  VertexMap vm = compute_vertices(d, K);
  return {vm, compute_normals_from_vertices(vm)};
}

// Edge-preserving depth denoise. Sensor noise of a few millimetres swamps the
// central-difference normals otherwise; the range kernel keeps depth
// discontinuities from bleeding across object boundaries.
inline DepthMap bilateral_filter_depth(const DepthMap& d, int radius = 2,
                                       float sigma_space_px = 2.0f, float sigma_range_m = 0.01f) {
  DepthMap out(d.width(), d.height(), 0.0f);
  const float inv2ss = 1.0f / (2.0f * sigma_space_px * sigma_space_px);
  const float inv2sr = 1.0f / (2.0f * sigma_range_m * sigma_range_m);
  for (int y = 0; y < d.height(); ++y)
    for (int x = 0; x < d.width(); ++x) {
      const float c = d.at(x, y);
      if (!valid_depth(c)) continue;
      float sum = 0, wsum = 0;
      for (int oy = -radius; oy <= radius; ++oy)
        for (int ox = -radius; ox <= radius; ++ox) {
          const int xx = x + ox, yy = y + oy;
          if (xx < 0 || yy < 0 || xx >= d.width() || yy >= d.height()) continue;
          const float v = d.at(xx, yy);
          if (!valid_depth(v)) continue;
          const float dz = v - c;
          const float w = std::exp(-(ox * ox + oy * oy) * inv2ss - dz * dz * inv2sr);
          sum += w * v;
          wsum += w;
        }
      out.at(x, y) = sum / wsum;
    }
  return out;
}

}  // namespace moslam
