#pragma once

#include <vector>

#include "moslam/maps.hpp"

namespace moslam {

struct GeomSegSettings {
  int radius = 2;            // neighbourhood half-width (5x5 window)
  double lambda_hat = 1.0;   // concavity weight
  double tau = 0.04;         // edge threshold
  int connectivity = 4;      // 4 or 8
  int min_component_size = 100;
};

struct EdgeMap {
  Image<float> edginess;   // phi_d + lambda_hat * phi_c
  Image<uint8_t> is_edge;  // 1 = edge (includes invalid pixels)
};

// Labels: 0 = background/edge/too-small, 1..count = components in raster order.
struct GeometricLabeling {
  Image<int32_t> labels;
  int count = 0;
};

inline EdgeMap edginess(const VertexMap& vm, const NormalMap& nm, const GeomSegSettings& s = {}) {
  const int w = vm.width(), h = vm.height(), r = s.radius;
  EdgeMap em{Image<float>(w, h, 0.0f), Image<uint8_t>(w, h, 1)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector3f& v = vm.at(x, y);
      const Eigen::Vector3f& n = nm.at(x, y);
      if (v.z() <= 0 || n.squaredNorm() < 0.5f) continue;  // invalid stays edge
      float phi_d = 0, phi_c = 0;
      bool ok = true;
      for (int dy = -r; dy <= r && ok; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int xi = x + dx, yi = y + dy;
          if (!vm.inside(xi, yi)) {
            ok = false;
            break;
          }
          const Eigen::Vector3f& vi = vm.at(xi, yi);
          const Eigen::Vector3f& ni = nm.at(xi, yi);
          if (vi.z() <= 0 || ni.squaredNorm() < 0.5f) {
            ok = false;
            break;
          }
          const float along = (vi - v).dot(n);
          phi_d = std::max(phi_d, std::abs(along));
          if (along >= 0) phi_c = std::max(phi_c, 1.0f - ni.dot(n));
        }
      if (!ok) continue;  // invalid data in the window
      const float e = phi_d + static_cast<float>(s.lambda_hat) * phi_c;
      em.edginess.at(x, y) = e;
      em.is_edge.at(x, y) = e > s.tau ? 1 : 0;
    }
  return em;
}

inline GeometricLabeling connected_components(const EdgeMap& em, const GeomSegSettings& s = {}) {
  const int w = em.is_edge.width(), h = em.is_edge.height();
  GeometricLabeling out{Image<int32_t>(w, h, 0), 0};
  Image<int32_t> comp(w, h, -1);
  std::vector<int> sizes;
  std::vector<std::pair<int, int>> stack;
  const bool diag = s.connectivity == 8;
  int ncomp = 0;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (em.is_edge.at(x0, y0) || comp.at(x0, y0) >= 0) continue;
      const int id = ncomp++;
      int size = 0;
      stack.clear();
      stack.emplace_back(x0, y0);
      comp.at(x0, y0) = id;
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        ++size;
        auto visit = [&](int xi, int yi) {
          if (comp.inside(xi, yi) && !em.is_edge.at(xi, yi) && comp.at(xi, yi) < 0) {
            comp.at(xi, yi) = id;
            stack.emplace_back(xi, yi);
          }
        };
        visit(x - 1, y);
        visit(x + 1, y);
        visit(x, y - 1);
        visit(x, y + 1);
        if (diag) {
          visit(x - 1, y - 1);
          visit(x + 1, y - 1);
          visit(x - 1, y + 1);
          visit(x + 1, y + 1);
        }
      }
      sizes.push_back(size);
    }
  // Relabel surviving components 1..N in raster order of their first pixel.
  std::vector<int32_t> remap(ncomp, 0);
  int next = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int32_t c = comp.at(x, y);
      if (c < 0 || sizes[c] < s.min_component_size) continue;
      if (remap[c] == 0) remap[c] = ++next;
      out.labels.at(x, y) = remap[c];
    }
  out.count = next;
  return out;
}

}  // namespace moslam
