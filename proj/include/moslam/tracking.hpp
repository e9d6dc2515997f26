#pragma once

#include <functional>
#include <vector>

#include "moslam/pyramid.hpp"
#include "moslam/surfel_map.hpp"

namespace moslam {

struct TrackingSettings {
  double lambda = 0.1;  // photometric weight
  int levels = 4;
  std::vector<int> iterations_per_level = {10, 7, 5, 4};  // coarse -> fine
  double icp_dist_gate = 0.10;      // metres, point-to-plane
  double icp_angle_gate_deg = 30.0;
  int min_valid_residuals = 200;
  // Coarse levels with fewer residuals than this are skipped: a small object
  // shrinks to a handful of pixels there and the under-constrained solve
  // throws the estimate far from the basin the finer levels can recover.
  int min_level_residuals = 400;
  double step_norm_tol = 1e-6;
  bool use_huber = true;
  double huber_delta = 0.03;      // metres, ICP residuals
  double rgb_huber_delta = 10.0;  // intensity units, photometric residuals
};

struct TrackingResult {
  RigidPose increment;  // maps frame-t points into the view (t-1) frame
  double energy = 0;
  int residual_count = 0;
  double icp_rms = 0;  // metres
  double rgb_rms = 0;  // intensity units
  bool converged = false;
};

using JacobianRow = Eigen::Matrix<double, 1, 6>;

struct ResidualBlock {
  std::vector<double> r;
  std::vector<JacobianRow> J;
  void clear() {
    r.clear();
    J.clear();
  }
  size_t size() const { return r.size(); }
};

// Point-to-plane residuals with projective association: each valid frame
// vertex is transformed by T, looked up in the view, and matched against the
// view's vertex/normal if it passes the distance and angle gates.
// Twist layout [omega; v], left-multiplicative perturbation of T.
inline void icp_residuals(const ModelView& view, const VertexMap& frame_vertices,
                          const NormalMap& frame_normals, const RigidPose& T,
                          const CameraIntrinsics& K, const TrackingSettings& s,
                          ResidualBlock& out) {
  const float cos_gate = static_cast<float>(std::cos(s.icp_angle_gate_deg * M_PI / 180.0));
  const float dist_gate = static_cast<float>(s.icp_dist_gate);
  const Eigen::Matrix3f R = T.R.cast<float>();
  const Eigen::Vector3f tr = T.t.cast<float>();
  const float fx = static_cast<float>(K.fx), fy = static_cast<float>(K.fy);
  const float cx = static_cast<float>(K.cx), cy = static_cast<float>(K.cy);
  for (int y = 0; y < frame_vertices.height(); ++y)
    for (int x = 0; x < frame_vertices.width(); ++x) {
      const Eigen::Vector3f& vt = frame_vertices.at(x, y);
      if (vt.z() <= 0) continue;
      const Eigen::Vector3f& nt = frame_normals.at(x, y);
      if (nt.squaredNorm() < 0.5f) continue;
      const Eigen::Vector3f p = R * vt + tr;
      if (p.z() <= 0.05f) continue;
      const int u = static_cast<int>(std::lround(fx * p.x() / p.z() + cx));
      const int v = static_cast<int>(std::lround(fy * p.y() / p.z() + cy));
      if (!view.depth.inside(u, v) || !view.valid(u, v)) continue;
      const Eigen::Vector3f& vv = view.vertices.at(u, v);
      const Eigen::Vector3f& nv = view.normals.at(u, v);
      if (nv.squaredNorm() < 0.5f) continue;
      const float r = (vv - p).dot(nv);
      if (std::abs(r) > dist_gate) continue;
      if ((R * nt).dot(nv) < cos_gate) continue;
      const Vec3 pd = p.cast<double>();
      const Vec3 nd = nv.cast<double>();
      JacobianRow Jrow;
      Jrow.head<3>() = -pd.cross(nd).transpose();
      Jrow.tail<3>() = -nd.transpose();
      out.r.push_back(r);
      out.J.push_back(Jrow);
    }
}

inline std::pair<Image<float>, Image<float>> sobel_gradients(const IntensityMap& im) {
  const int w = im.width(), h = im.height();
  Image<float> gx(w, h, 0.0f), gy(w, h, 0.0f);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      gx.at(x, y) = ((im.at(x + 1, y - 1) + 2 * im.at(x + 1, y) + im.at(x + 1, y + 1)) -
                     (im.at(x - 1, y - 1) + 2 * im.at(x - 1, y) + im.at(x - 1, y + 1))) /
                    8.0f;
      gy.at(x, y) = ((im.at(x - 1, y + 1) + 2 * im.at(x, y + 1) + im.at(x + 1, y + 1)) -
                     (im.at(x - 1, y - 1) + 2 * im.at(x, y - 1) + im.at(x + 1, y - 1))) /
                    8.0f;
    }
  return {gx, gy};
}

template <typename T>
inline float bilinear(const Image<T>& im, float x, float y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const float ax = x - x0, ay = y - y0;
  return (1 - ax) * (1 - ay) * im.at(x0, y0) + ax * (1 - ay) * im.at(x0 + 1, y0) +
         (1 - ax) * ay * im.at(x0, y0 + 1) + ax * ay * im.at(x0 + 1, y0 + 1);
}

// Reference image plus its Sobel gradients; `valid` (optional) marks where
// the reference carries data, e.g. the rendered depth of a model view.
struct PhotometricRef {
  const IntensityMap* intensity = nullptr;
  Image<float> grad_x, grad_y;
  const DepthMap* valid = nullptr;
  Image<uint8_t> interior;  // validity eroded by 2px; see covered()

  explicit PhotometricRef(const IntensityMap& im, const DepthMap* validity = nullptr)
      : intensity(&im), valid(validity) {
    auto [gx, gy] = sobel_gradients(im);
    grad_x = std::move(gx);
    grad_y = std::move(gy);
    if (valid) {
      // Sobel gradients within 1px of a hole mix in the zero intensity of the
      // uncovered region, so residuals must stay 2px clear of invalid pixels.
      const int w = valid->width(), h = valid->height();
      interior = Image<uint8_t>(w, h, 0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool ok = true;
          for (int oy = -2; ok && oy <= 2; ++oy)
            for (int ox = -2; ok && ox <= 2; ++ox) {
              const int nx = x + ox, ny = y + oy;
              if (nx < 0 || ny < 0 || nx >= w || ny >= h || !(valid->at(nx, ny) > 0)) ok = false;
            }
          interior.at(x, y) = ok ? 1 : 0;
        }
    }
  }

  bool covered(int x0, int y0) const {
    if (!valid) return true;
    return interior.at(x0, y0) && interior.at(x0 + 1, y0 + 1);
  }
};

// Photo-consistency residuals: r = I_t(u) - I_ref(pi(T pi^-1(u, D_t))).
// Pixels whose warp lands out of bounds or on invalid reference data are
// skipped, as are pixels with valid intensity but invalid depth. When the
// reference carries depth, warps landing on geometry further than
// `depth_gate` from the transformed point are rejected: occlusion
// boundaries of independently moving objects otherwise feed large intensity
// residuals into the pose estimate and drag it along with the object.
inline void rgb_residuals(const PhotometricRef& ref, const DepthMap& frame_depth,
                          const IntensityMap& frame_intensity, const RigidPose& T,
                          const CameraIntrinsics& K, ResidualBlock& out,
                          double depth_gate = std::numeric_limits<double>::infinity()) {
  const Eigen::Matrix3f R = T.R.cast<float>();
  const Eigen::Vector3f tr = T.t.cast<float>();
  const float fx = static_cast<float>(K.fx), fy = static_cast<float>(K.fy);
  const float cx = static_cast<float>(K.cx), cy = static_cast<float>(K.cy);
  const int w = frame_depth.width(), h = frame_depth.height();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float d = frame_depth.at(x, y);
      if (!valid_depth(d)) continue;
      const Eigen::Vector3f vt((x - cx) * d / fx, (y - cy) * d / fy, d);
      const Eigen::Vector3f p = R * vt + tr;
      if (p.z() <= 0.05f) continue;
      const float wx = fx * p.x() / p.z() + cx;
      const float wy = fy * p.y() / p.z() + cy;
      const int x0 = static_cast<int>(std::floor(wx));
      const int y0 = static_cast<int>(std::floor(wy));
      if (x0 < 1 || y0 < 1 || x0 + 1 >= w - 1 || y0 + 1 >= h - 1) continue;
      if (!ref.covered(x0, y0)) continue;
      if (ref.valid) {
        const float dref = ref.valid->at(static_cast<int>(std::lround(wx)),
                                         static_cast<int>(std::lround(wy)));
        if (!valid_depth(dref) || std::abs(p.z() - dref) > depth_gate) continue;
      }
      const float r = frame_intensity.at(x, y) - bilinear(*ref.intensity, wx, wy);
      const double gx = bilinear(ref.grad_x, wx, wy);
      const double gy = bilinear(ref.grad_y, wx, wy);
      // dr/ddelta = -grad^T dpi/dp dp/ddelta, dp/ddelta = [-[p]x, I]
      const double z = p.z(), iz = 1.0 / z;
      const double px = p.x(), py = p.y();
      Eigen::RowVector3d gp(gx * K.fx * iz, gy * K.fy * iz,
                            -(gx * K.fx * px + gy * K.fy * py) * iz * iz);
      JacobianRow Jrow;
      Jrow.head<3>() = gp * skew(p.cast<double>());  // -gp * (-[p]x)
      Jrow.tail<3>() = -gp;
      out.r.push_back(r);
      out.J.push_back(Jrow);
    }
}

// Solves the stacked normal equations [J_icp; sqrt(lambda) J_rgb].
inline Vec6 gauss_newton_step(const ResidualBlock& icp, const ResidualBlock& rgb, double lambda,
                              const std::vector<double>& icp_weights = {},
                              const std::vector<double>& rgb_weights = {}) {
  if (icp.size() + rgb.size() < 6)
    throw SingularSystemError("gauss_newton_step: fewer than 6 residuals");
  Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
  Vec6 b = Vec6::Zero();
  for (size_t i = 0; i < icp.size(); ++i) {
    const double w = icp_weights.empty() ? 1.0 : icp_weights[i];
    H.noalias() += w * icp.J[i].transpose() * icp.J[i];
    b.noalias() -= w * icp.J[i].transpose() * icp.r[i];
  }
  for (size_t i = 0; i < rgb.size(); ++i) {
    const double w = lambda * (rgb_weights.empty() ? 1.0 : rgb_weights[i]);
    H.noalias() += w * rgb.J[i].transpose() * rgb.J[i];
    b.noalias() -= w * rgb.J[i].transpose() * rgb.r[i];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> eig(H);
  const double emin = eig.eigenvalues().minCoeff();
  const double emax = eig.eigenvalues().maxCoeff();
  if (emin <= 0 || emax / emin > 1e12)
    throw SingularSystemError("gauss_newton_step: degenerate geometry (condition number > 1e12)");
  return H.ldlt().solve(b);
}

// Renders the model as seen at the previous pose for the given (per-level)
// intrinsics.
using ViewRenderer = std::function<ModelView(const CameraIntrinsics&)>;

namespace detail {

struct Energy {
  double value = 0;
  int count = 0;
  double icp_sq = 0, rgb_sq = 0;
  int icp_n = 0, rgb_n = 0;
};

inline Energy evaluate(const ModelView& view, const PyramidLevel& lvl, const PhotometricRef& ref,
                       const RigidPose& T, const TrackingSettings& s, ResidualBlock& icp,
                       ResidualBlock& rgb, std::vector<double>& weights,
                       std::vector<double>& rgb_weights) {
  icp.clear();
  rgb.clear();
  weights.clear();
  rgb_weights.clear();
  icp_residuals(view, lvl.vertices, lvl.normals, T, lvl.intrinsics, s, icp);
  if (s.lambda > 0)
    rgb_residuals(ref, lvl.depth, lvl.intensity, T, lvl.intrinsics, rgb, s.icp_dist_gate);
  Energy e;
  for (double r : icp.r) {
    double w = 1.0;
    if (s.use_huber && std::abs(r) > s.huber_delta) w = s.huber_delta / std::abs(r);
    weights.push_back(w);
    e.value += w * r * r;
    e.icp_sq += r * r;
  }
  for (double r : rgb.r) {
    double w = 1.0;
    if (s.use_huber && std::abs(r) > s.rgb_huber_delta) w = s.rgb_huber_delta / std::abs(r);
    rgb_weights.push_back(w);
    e.value += s.lambda * w * r * r;
    e.rgb_sq += r * r;
  }
  e.icp_n = static_cast<int>(icp.size());
  e.rgb_n = static_cast<int>(rgb.size());
  e.count = e.icp_n + e.rgb_n;
  return e;
}

}  // namespace detail

// Coarse-to-fine Gauss-Newton minimization of the joint energy. Returns the
// incremental transform mapping frame-t points into the previous camera
// frame; the caller composes it into the model trajectory.
inline TrackingResult track_model(const ViewRenderer& render, const Pyramid& frame,
                                  const TrackingSettings& s = {},
                                  const RigidPose& init = RigidPose::identity()) {
  RigidPose T = init;  // current increment estimate
  TrackingResult result;
  double initial_rms = -1;
  ResidualBlock icp, rgb;
  std::vector<double> weights, rgb_weights;
  const int levels = std::min<int>(s.levels, frame.count());
  detail::Energy e;
  for (int li = levels - 1; li >= 0; --li) {
    const PyramidLevel& lvl = frame[li];
    const ModelView view = render(lvl.intrinsics);
    const PhotometricRef ref(view.intensity, &view.depth);
    const int budget = li < static_cast<int>(s.iterations_per_level.size())
                           ? s.iterations_per_level[levels - 1 - li]
                           : 5;
    e = detail::evaluate(view, lvl, ref, T, s, icp, rgb, weights, rgb_weights);
    if (li > 0 && e.count < s.min_level_residuals) continue;
    if (initial_rms < 0 && e.count > 0)
      initial_rms = std::sqrt(e.value / e.count);
    for (int it = 0; it < budget; ++it) {
      if (e.count < 6) break;
      Vec6 delta;
      try {
        delta = gauss_newton_step(icp, rgb, s.lambda, weights, rgb_weights);
      } catch (const SingularSystemError&) {
        break;
      }
      // Step rejection with halving: never accept an energy increase.
      bool accepted = false;
      for (int halving = 0; halving <= 4; ++halving) {
        const RigidPose T_new = se3_exp(delta) * T;
        const detail::Energy e_new =
            detail::evaluate(view, lvl, ref, T_new, s, icp, rgb, weights, rgb_weights);
        // Mean energy, not the total: a step that merely drops residuals out
        // of the overlap must not look like progress. Both gates shrink the
        // residual set as T moves, so a step that sheds a chunk of the set is
        // rejected outright no matter what its mean says.
        if (e_new.count >= 6 && e_new.count >= static_cast<int>(0.9 * e.count) &&
            e_new.value / e_new.count <= e.value / std::max(1, e.count)) {
          T = T_new;
          e = e_new;
          accepted = true;
          break;
        }
        delta *= 0.5;
      }
      if (!accepted) {
        // Restore residuals at the current estimate and stop this level.
        e = detail::evaluate(view, lvl, ref, T, s, icp, rgb, weights, rgb_weights);
        break;
      }
      if (delta.norm() < s.step_norm_tol) break;
    }
    if (std::getenv("MOSLAM_DEBUG_TRACK"))
      std::fprintf(stderr, "  lvl=%d n=%d icp_n=%d rgb_n=%d mean=%.4f tx=%.4f\n", li, e.count,
                   e.icp_n, e.rgb_n, e.count ? e.value / e.count : -1, T.t.x());
  }
  result.increment = T;
  result.energy = e.value;
  result.residual_count = e.count;
  result.icp_rms = e.icp_n > 0 ? std::sqrt(e.icp_sq / e.icp_n) : 0.0;
  result.rgb_rms = e.rgb_n > 0 ? std::sqrt(e.rgb_sq / e.rgb_n) : 0.0;
  // Lost = too few geometric correspondences survive the gates; photometric
  // residuals alone cannot anchor the estimate.
  if (e.icp_n < s.min_valid_residuals)
    throw TrackingLostError("track_model: " + std::to_string(e.icp_n) +
                            " ICP residuals at finest level (need " +
                            std::to_string(s.min_valid_residuals) + ")");
  const double final_rms = e.count > 0 ? std::sqrt(e.value / e.count) : 0.0;
  result.converged = (initial_rms < 0 || final_rms <= initial_rms + 1e-12) &&
                     e.icp_n >= s.min_valid_residuals;
  return result;
}

}  // namespace moslam
