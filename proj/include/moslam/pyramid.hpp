#pragma once

#include <vector>

#include "moslam/maps.hpp"

namespace moslam {

struct PyramidLevel {
  DepthMap depth;
  IntensityMap intensity;
  CameraIntrinsics intrinsics;
  VertexMap vertices;
  NormalMap normals;
};

// Level 0 = full resolution; each level halves the previous one.
struct Pyramid {
  std::vector<PyramidLevel> levels;
  int count() const { return static_cast<int>(levels.size()); }
  const PyramidLevel& operator[](int i) const { return levels[i]; }
};

// Nearest valid depth per 2x2 block; never averages across discontinuities
// or into holes.
inline DepthMap downsample_depth(const DepthMap& d) {
  DepthMap out(d.width() / 2, d.height() / 2, 0.0f);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      float vals[4] = {d.at(2 * x, 2 * y), d.at(2 * x + 1, 2 * y), d.at(2 * x, 2 * y + 1),
                       d.at(2 * x + 1, 2 * y + 1)};
      float best = 0;
      for (float v : vals)
        if (valid_depth(v) && (best == 0 || v < best)) best = v;
      out.at(x, y) = best;
    }
  return out;
}

inline IntensityMap downsample_intensity(const IntensityMap& im) {
  IntensityMap out(im.width() / 2, im.height() / 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      out.at(x, y) = 0.25f * (im.at(2 * x, 2 * y) + im.at(2 * x + 1, 2 * y) +
                              im.at(2 * x, 2 * y + 1) + im.at(2 * x + 1, 2 * y + 1));
  return out;
}

// Intensity average restricted to pixels with valid depth; blocks without any
// valid source stay 0. Rendered views have holes (unseen or other-model
// regions) where the intensity buffer is 0 but not meaningful -- plain
// averaging would bleed those zeros into the rim and fabricate huge
// photometric residuals at coarse levels.
inline IntensityMap downsample_intensity_masked(const IntensityMap& im, const DepthMap& d) {
  IntensityMap out(im.width() / 2, im.height() / 2, 0.0f);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      float sum = 0;
      int n = 0;
      for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox)
          if (valid_depth(d.at(2 * x + ox, 2 * y + oy))) {
            sum += im.at(2 * x + ox, 2 * y + oy);
            ++n;
          }
      if (n > 0) out.at(x, y) = sum / n;
    }
  return out;
}

// Depth-guided 3x3 binomial blur. Rendered model views carry a small blur
// from splat blending; matching the live frame against them with crisp
// intensity leaves a texture-difference floor in the photometric residuals
// that drowns the alignment signal. Blurring the live side symmetrically
// removes it. Neighbours across a depth jump are excluded so object
// boundaries do not bleed into each other.
inline IntensityMap guided_blur_intensity(const IntensityMap& im, const DepthMap& d,
                                          float depth_tol = 0.02f) {
  static const float kW[3] = {1.0f, 2.0f, 1.0f};
  IntensityMap out(im.width(), im.height(), 0.0f);
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x) {
      const float dc = d.at(x, y);
      if (!valid_depth(dc)) {
        out.at(x, y) = im.at(x, y);
        continue;
      }
      float sum = 0, wsum = 0;
      for (int oy = -1; oy <= 1; ++oy)
        for (int ox = -1; ox <= 1; ++ox) {
          const int nx = x + ox, ny = y + oy;
          if (nx < 0 || ny < 0 || nx >= im.width() || ny >= im.height()) continue;
          const float dn = d.at(nx, ny);
          if (!valid_depth(dn) || std::abs(dn - dc) > depth_tol) continue;
          const float w = kW[ox + 1] * kW[oy + 1];
          sum += w * im.at(nx, ny);
          wsum += w;
        }
      out.at(x, y) = wsum > 0 ? sum / wsum : im.at(x, y);
    }
  return out;
}

namespace pyramid_detail {

inline Pyramid assemble(DepthMap d0, IntensityMap i0, const CameraIntrinsics& K, int levels,
                        bool masked_intensity) {
  if (levels < 1) throw Error("build_pyramid: levels must be >= 1");
  const int div = 1 << (levels - 1);
  if (d0.width() % div != 0 || d0.height() % div != 0)
    throw Error("build_pyramid: image size not divisible by 2^(levels-1)");
  Pyramid pyr;
  pyr.levels.resize(levels);
  pyr.levels[0].depth = std::move(d0);
  pyr.levels[0].intensity = std::move(i0);
  pyr.levels[0].intrinsics = K;
  for (int k = 1; k < levels; ++k) {
    const PyramidLevel& prev = pyr.levels[k - 1];
    pyr.levels[k].depth = downsample_depth(prev.depth);
    pyr.levels[k].intensity = masked_intensity
                                  ? downsample_intensity_masked(prev.intensity, prev.depth)
                                  : downsample_intensity(prev.intensity);
    pyr.levels[k].intrinsics = prev.intrinsics.halved();
  }
  for (auto& lvl : pyr.levels) {
    auto [vm, nm] = compute_normals(lvl.depth, lvl.intrinsics);
    lvl.vertices = std::move(vm);
    lvl.normals = std::move(nm);
  }
  return pyr;
}

}  // namespace pyramid_detail

// Live sensor frames: depth is denoised first, intensity is defined everywhere.
inline Pyramid build_pyramid(const DepthMap& d, const IntensityMap& i, const CameraIntrinsics& K,
                             int levels = 4) {
  DepthMap df = bilateral_filter_depth(d);
  IntensityMap ib = guided_blur_intensity(i, df);
  return pyramid_detail::assemble(std::move(df), std::move(ib), K, levels, false);
}

// Rendered model views: depth is already clean, intensity only exists where
// depth does.
inline Pyramid build_render_pyramid(const DepthMap& d, const IntensityMap& i,
                                    const CameraIntrinsics& K, int levels = 4) {
  return pyramid_detail::assemble(d, i, K, levels, true);
}

}  // namespace moslam
