#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <vector>

#include "moslam/maps.hpp"

namespace moslam {

constexpr uint8_t kIgnoreLabel = 255;
constexpr uint8_t kBackgroundLabel = 0;

struct Surfel {
  Eigen::Vector3f position = Eigen::Vector3f::Zero();  // model frame, metres
  Eigen::Vector3f normal = Eigen::Vector3f::UnitZ();
  Rgb color;
  float weight = 0;  // confidence
  float radius = 0;  // metres
  int t_created = 0;
  int t_last_seen = 0;
  uint16_t penalties = 0;  // frames this surfel violated the stencil
};

struct FusionSettings {
  double dist_gate = 0.05;        // metres, association gate along the normal
  double angle_gate_deg = 20.0;   // normal angle gate
  double penalty_factor = 0.5;    // weight multiplier per violating frame
  double stable_weight = 10.0;    // w_stable
  int unstable_ttl = 20;          // frames
  int young_model_frames = 20;    // render all surfels of models younger than this
  double confidence_sigma_frac = 0.4;  // sigma = frac * max(width, height)
};

struct ObjectModel {
  std::vector<Surfel> surfels;
  int class_id = 0;      // 0..80
  uint8_t label = 0;     // 0 = background
  int created_frame = 0;
  std::map<int, RigidPose> trajectory;    // frame index -> model-to-camera transform
  std::map<int, bool> static_flags;       // frame index -> is-static

  const RigidPose& pose_at(int t) const {
    auto it = trajectory.find(t);
    if (it == trajectory.end())
      throw PoseMissingError("model " + std::to_string(label) + " has no pose at frame " +
                             std::to_string(t));
    return it->second;
  }
  bool is_static_at(int t) const {
    auto it = static_flags.find(t);
    return it == static_flags.end() ? true : it->second;
  }
};

// Model rendered into the camera: what tracking aligns the live frame against.
struct ModelView {
  DepthMap depth;
  IntensityMap intensity;
  VertexMap vertices;  // camera frame
  NormalMap normals;   // camera frame
  LabelImage labels;
  Image<int32_t> surfel_index;  // -1 = none

  bool valid(int x, int y) const { return depth.at(x, y) > 0; }
};

namespace detail {

inline float luma(const Rgb& c) {
  return static_cast<float>(
      std::min(255.0, std::max(0.0, std::floor(0.299 * c.r + 0.587 * c.g + 0.114 * c.b + 0.5))));
}

// Splat one surfel as a screen-space disc with a nearest-depth test. Near-equal
// depths (within kDepthTie) are broken by projected-centre distance so that a
// pixel re-associates with the surfel it was created from.
constexpr float kDepthTie = 1e-3f;  // metres

template <typename PerPixel>
inline void splat(const Eigen::Vector3f& pc, float radius_m, const CameraIntrinsics& K,
                  DepthMap& zbuf, Image<float>& distbuf, PerPixel&& emit) {
  if (pc.z() <= 0.05f) return;
  const float u = static_cast<float>(K.fx) * pc.x() / pc.z() + static_cast<float>(K.cx);
  const float v = static_cast<float>(K.fy) * pc.y() / pc.z() + static_cast<float>(K.cy);
  const float rp = std::max(0.6f, radius_m * static_cast<float>(K.fx) / pc.z());
  const int x0 = std::max(0, static_cast<int>(std::floor(u - rp)));
  const int x1 = std::min(K.width - 1, static_cast<int>(std::ceil(u + rp)));
  const int y0 = std::max(0, static_cast<int>(std::floor(v - rp)));
  const int y1 = std::min(K.height - 1, static_cast<int>(std::ceil(v + rp)));
  const float r2 = rp * rp;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const float dx = x - u, dy = y - v;
      const float d2 = dx * dx + dy * dy;
      if (d2 > r2) continue;
      float& z = zbuf.at(x, y);
      float& bd = distbuf.at(x, y);
      if (z > 0) {
        if (pc.z() > z + kDepthTie) continue;
        if (pc.z() >= z - kDepthTie && d2 >= bd) continue;
      }
      z = pc.z();
      bd = d2;
      emit(x, y);
    }
}

}  // namespace detail

// Deterministic software splat rasterizer. Renders stable surfels (all
// surfels while the model is young) seen from `pose` (model-to-camera).
inline ModelView render_model(const ObjectModel& model, const RigidPose& pose,
                              const CameraIntrinsics& K, int t = 0,
                              const FusionSettings& s = {}) {
  ModelView view;
  view.depth = DepthMap(K.width, K.height, 0.0f);
  view.intensity = IntensityMap(K.width, K.height, 0.0f);
  view.vertices = VertexMap(K.width, K.height, Eigen::Vector3f::Zero());
  view.normals = NormalMap(K.width, K.height, Eigen::Vector3f::Zero());
  view.labels = LabelImage(K.width, K.height, kIgnoreLabel);
  view.surfel_index = Image<int32_t>(K.width, K.height, -1);
  Image<float> distbuf(K.width, K.height, 0.0f);
  // Stable-only rendering needs a meaningful stable population; a model whose
  // fusion is frozen (e.g. while it moves) never matures its weights and
  // would otherwise render empty once past the young age.
  bool young = (t - model.created_frame) < s.young_model_frames;
  if (!young) {
    size_t stable = 0;
    for (const Surfel& sf : model.surfels)
      if (sf.weight >= s.stable_weight) ++stable;
    if (stable < model.surfels.size() / 10) young = true;
  }
  const Eigen::Matrix3f R = pose.R.cast<float>();
  const Eigen::Vector3f tr = pose.t.cast<float>();
  for (size_t i = 0; i < model.surfels.size(); ++i) {
    const Surfel& sf = model.surfels[i];
    if (!young && sf.weight < s.stable_weight) continue;
    const Eigen::Vector3f pc = R * sf.position + tr;
    const Eigen::Vector3f nc = R * sf.normal;
    if (nc.z() > 0.2f) continue;  // back-facing
    detail::splat(pc, sf.radius, K, view.depth, distbuf, [&](int x, int y) {
      view.intensity.at(x, y) = detail::luma(sf.color);
      view.vertices.at(x, y) = pc;
      view.normals.at(x, y) = nc;
      view.labels.at(x, y) = model.label;
      view.surfel_index.at(x, y) = static_cast<int32_t>(i);
    });
  }
  // Second pass: blend intensity across overlapping splats near the winning
  // depth. Winner-take-all texture is blocky at the surfel scale, which caps
  // photometric alignment at about a pixel; the blend restores a smooth,
  // subpixel-consistent signal.
  Image<float> isum(K.width, K.height, 0.0f), wsum(K.width, K.height, 0.0f);
  for (const Surfel& sf : model.surfels) {
    if (!young && sf.weight < s.stable_weight) continue;
    const Eigen::Vector3f pc = R * sf.position + tr;
    if ((R * sf.normal).z() > 0.2f || pc.z() <= 0.05f) continue;
    const float u = static_cast<float>(K.fx) * pc.x() / pc.z() + static_cast<float>(K.cx);
    const float v = static_cast<float>(K.fy) * pc.y() / pc.z() + static_cast<float>(K.cy);
    const float rp = std::max(0.6f, sf.radius * static_cast<float>(K.fx) / pc.z());
    const float lum = detail::luma(sf.color);
    const int bx0 = std::max(0, static_cast<int>(std::floor(u - rp)));
    const int bx1 = std::min(K.width - 1, static_cast<int>(std::ceil(u + rp)));
    const int by0 = std::max(0, static_cast<int>(std::floor(v - rp)));
    const int by1 = std::min(K.height - 1, static_cast<int>(std::ceil(v + rp)));
    const float inv_r2 = 1.0f / (rp * rp);
    for (int y = by0; y <= by1; ++y)
      for (int x = bx0; x <= bx1; ++x) {
        const float zw = view.depth.at(x, y);
        if (!(zw > 0) || std::abs(pc.z() - zw) > 0.02f) continue;
        const float dx = x - u, dy = y - v;
        const float d2 = (dx * dx + dy * dy) * inv_r2;
        if (d2 > 1.0f) continue;
        const float w = std::exp(-2.0f * d2);
        isum.at(x, y) += w * lum;
        wsum.at(x, y) += w;
      }
  }
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x)
      if (wsum.at(x, y) > 0) view.intensity.at(x, y) = isum.at(x, y) / wsum.at(x, y);
  return view;
}

// Per-pixel model labels from all models at their current poses, shared z-buffer.
inline LabelImage render_projected_labels(const std::vector<const ObjectModel*>& models,
                                          const std::vector<RigidPose>& poses,
                                          const CameraIntrinsics& K, int t,
                                          const FusionSettings& s = {}) {
  LabelImage labels(K.width, K.height, kIgnoreLabel);
  DepthMap zbuf(K.width, K.height, 0.0f);
  Image<float> distbuf(K.width, K.height, 0.0f);
  for (size_t m = 0; m < models.size(); ++m) {
    const ObjectModel& model = *models[m];
    bool young = (t - model.created_frame) < s.young_model_frames;
    if (!young) {  // same fallback as render_model for weight-frozen models
      size_t stable = 0;
      for (const Surfel& sf : model.surfels)
        if (sf.weight >= s.stable_weight) ++stable;
      if (stable < model.surfels.size() / 10) young = true;
    }
    const Eigen::Matrix3f R = poses[m].R.cast<float>();
    const Eigen::Vector3f tr = poses[m].t.cast<float>();
    for (const Surfel& sf : model.surfels) {
      if (!young && sf.weight < s.stable_weight) continue;
      const Eigen::Vector3f pc = R * sf.position + tr;
      if ((R * sf.normal).z() > 0.2f) continue;
      detail::splat(pc, sf.radius, K, zbuf, distbuf,
                    [&](int x, int y) { labels.at(x, y) = model.label; });
    }
  }
  return labels;
}

struct FusionStats {
  int updated = 0;
  int inserted = 0;
  int penalized = 0;
  int fused_pixels = 0;
};

// Projective association against an index map rendered from all surfels of
// the model (association must see unstable surfels too, or every frame
// re-inserts them).
inline Image<int32_t> render_index_map(const ObjectModel& model, const RigidPose& pose,
                                       const CameraIntrinsics& K) {
  Image<int32_t> index(K.width, K.height, -1);
  DepthMap zbuf(K.width, K.height, 0.0f);
  Image<float> distbuf(K.width, K.height, 0.0f);
  const Eigen::Matrix3f R = pose.R.cast<float>();
  const Eigen::Vector3f tr = pose.t.cast<float>();
  for (size_t i = 0; i < model.surfels.size(); ++i) {
    const Surfel& sf = model.surfels[i];
    const Eigen::Vector3f pc = R * sf.position + tr;
    if ((R * sf.normal).z() > 0.2f) continue;
    detail::splat(pc, sf.radius, K, zbuf, distbuf,
                  [&](int x, int y) { index.at(x, y) = static_cast<int32_t>(i); });
  }
  return index;
}

struct FrameData {
  const VertexMap* vertices = nullptr;
  const NormalMap* normals = nullptr;
  const ColorMap* colors = nullptr;
};

inline FusionStats fuse_frame(ObjectModel& model, const FrameData& frame,
                              const LabelImage& labeling, const RigidPose& pose, int t,
                              const CameraIntrinsics& K, const FusionSettings& s = {}) {
  if (!model.trajectory.count(t))
    throw PoseMissingError("fuse_frame: model has no pose at frame " + std::to_string(t));
  FusionStats stats;
  const Image<int32_t> index = render_index_map(model, pose, K);
  const RigidPose inv = pose.inverse();
  const float cos_gate = static_cast<float>(std::cos(s.angle_gate_deg * M_PI / 180.0));
  const float sigma = static_cast<float>(s.confidence_sigma_frac * std::max(K.width, K.height));
  const float inv2s2 = 1.0f / (2.0f * sigma * sigma);
  const float ccx = K.width * 0.5f, ccy = K.height * 0.5f;

  // Penalty pass: surfels rendered onto pixels claimed by another model.
  // Each surfel is penalized at most once per frame; ignore pixels are neutral.
  {
    std::vector<char> hit(model.surfels.size(), 0);
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        const int32_t i = index.at(x, y);
        if (i < 0 || hit[i]) continue;
        const uint8_t lab = labeling.at(x, y);
        if (lab != kIgnoreLabel && lab != model.label &&
            frame.vertices->at(x, y).z() > 0) {
          hit[i] = 1;
          model.surfels[i].weight *= static_cast<float>(s.penalty_factor);
          ++model.surfels[i].penalties;
          ++stats.penalized;
        }
      }
  }

  // Fusion pass over the stencil. Pixels on a label boundary are skipped:
  // their supersampled color (and, at depth edges, their normal) mixes the
  // neighboring object into this model and the tinted surfels then feed
  // photometric residuals that drag tracking after the neighbor moves on.
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      if (labeling.at(x, y) != model.label) continue;
      bool boundary = false;
      for (int oy = -1; !boundary && oy <= 1; ++oy)
        for (int ox = -1; !boundary && ox <= 1; ++ox) {
          const int nx = x + ox, ny = y + oy;
          if (nx >= 0 && ny >= 0 && nx < K.width && ny < K.height &&
              labeling.at(nx, ny) != model.label)
            boundary = true;
        }
      if (boundary) continue;
      const Eigen::Vector3f& v_obs = frame.vertices->at(x, y);
      const Eigen::Vector3f& n_obs = frame.normals->at(x, y);
      if (v_obs.z() <= 0 || n_obs.squaredNorm() < 0.5f) continue;
      const Eigen::Vector3f p_obs = inv.apply(v_obs);
      const Eigen::Vector3f nm_obs = inv.rotate(n_obs);
      const float dx = x - ccx, dy = y - ccy;
      const float alpha = std::exp(-(dx * dx + dy * dy) * inv2s2);
      const Rgb c_obs = frame.colors ? frame.colors->at(x, y) : Rgb{128, 128, 128};
      const float r_obs =
          v_obs.z() * static_cast<float>(M_SQRT2) /
          (static_cast<float>(K.fx) * std::max(0.15f, std::abs(n_obs.z())));

      const int32_t i = index.at(x, y);
      bool matched = false;
      if (i >= 0) {
        Surfel& sf = model.surfels[i];
        const Eigen::Vector3f d = p_obs - sf.position;
        if (std::abs(d.dot(sf.normal)) <= static_cast<float>(s.dist_gate) &&
            nm_obs.dot(sf.normal) >= cos_gate) {
          const float w = sf.weight;
          sf.position = (w * sf.position + alpha * p_obs) / (w + alpha);
          Eigen::Vector3f n = w * sf.normal + alpha * nm_obs;
          if (n.squaredNorm() > 1e-12f) sf.normal = n.normalized();
          auto blend = [&](uint8_t a, uint8_t b) {
            return static_cast<uint8_t>(std::lround((w * a + alpha * b) / (w + alpha)));
          };
          sf.color = Rgb{blend(sf.color.r, c_obs.r), blend(sf.color.g, c_obs.g),
                         blend(sf.color.b, c_obs.b)};
          sf.weight = w + alpha;
          sf.radius = std::min(sf.radius, r_obs);
          sf.t_last_seen = t;
          matched = true;
          ++stats.updated;
        }
      }
      if (!matched) {
        // Never insert near a depth discontinuity: central-difference normals
        // there are tilted by the far side of the jump, so the gates reject
        // the (correct) existing surfel and a garbage-normal duplicate would
        // pile up at the object rim every frame.
        bool depth_edge = false;
        for (int oy = -2; !depth_edge && oy <= 2; ++oy)
          for (int ox = -2; !depth_edge && ox <= 2; ++ox) {
            const int nx = x + ox, ny = y + oy;
            if (nx < 0 || ny < 0 || nx >= K.width || ny >= K.height) continue;
            const float nz = frame.vertices->at(nx, ny).z();
            if (nz <= 0 || std::abs(nz - v_obs.z()) > static_cast<float>(s.dist_gate))
              depth_edge = true;
          }
        if (depth_edge) continue;
        // Cap the radius at twice the local median of existing neighbours.
        float cap = std::numeric_limits<float>::max();
        std::vector<float> neigh;
        for (int oy = -2; oy <= 2; ++oy)
          for (int ox = -2; ox <= 2; ++ox) {
            if (!index.inside(x + ox, y + oy)) continue;
            const int32_t k = index.at(x + ox, y + oy);
            if (k >= 0) neigh.push_back(model.surfels[k].radius);
          }
        if (!neigh.empty()) {
          std::nth_element(neigh.begin(), neigh.begin() + neigh.size() / 2, neigh.end());
          cap = 2.0f * neigh[neigh.size() / 2];
        }
        Surfel sf;
        sf.position = p_obs;
        sf.normal = nm_obs;
        sf.color = c_obs;
        sf.weight = alpha;
        sf.radius = std::min(r_obs, cap);
        sf.t_created = t;
        sf.t_last_seen = t;
        model.surfels.push_back(sf);
        ++stats.inserted;
        if (std::getenv("MOSLAM_DEBUG_FUSE"))
          std::fprintf(stderr, "ins t=%d lab=%d xy=(%d,%d) z=%.3f idx=%d\n", t, model.label, x, y,
                       v_obs.z(), i);
      }
      ++stats.fused_pixels;
    }
  return stats;
}

inline void cleanup(ObjectModel& model, int t, const FusionSettings& s = {}) {
  const float stable = static_cast<float>(s.stable_weight);
  std::erase_if(model.surfels, [&](const Surfel& sf) {
    if (sf.penalties > 0 && sf.weight < 0.1f * stable) return true;
    return sf.weight < stable && (t - sf.t_created) > s.unstable_ttl;
  });
}

// Per-surfel nearest-surface distance against an analytic ground-truth
// surface (the caller aligns the model first if needed).
template <typename SurfaceDist>
inline std::pair<double, double> reconstruction_error(const ObjectModel& model,
                                                      SurfaceDist&& surface_distance) {
  if (model.surfels.empty()) throw EmptyModelError("reconstruction_error: empty model");
  double sum = 0, sum2 = 0;
  for (const Surfel& sf : model.surfels) {
    const double d = surface_distance(sf.position.cast<double>().eval());
    sum += d;
    sum2 += d * d;
  }
  const double n = static_cast<double>(model.surfels.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sum2 / n - mean * mean);
  return {mean, std::sqrt(var)};
}

// Point-set variant: rigid-aligns the surfels onto the reference cloud first.
inline std::pair<double, double> reconstruction_error_points(const ObjectModel& model,
                                                             const std::vector<Vec3>& reference) {
  if (model.surfels.empty()) throw EmptyModelError("reconstruction_error: empty model");
  if (reference.empty()) throw Error("reconstruction_error: empty reference cloud");
  auto nearest = [&](const Vec3& p) {
    double best = std::numeric_limits<double>::max();
    for (const Vec3& q : reference) best = std::min(best, (p - q).squaredNorm());
    return std::sqrt(best);
  };
  std::vector<Vec3> src, dst;
  for (const Surfel& sf : model.surfels) {
    const Vec3 p = sf.position.cast<double>();
    src.push_back(p);
    double best = std::numeric_limits<double>::max();
    Vec3 bq = reference[0];
    for (const Vec3& q : reference) {
      const double d2 = (p - q).squaredNorm();
      if (d2 < best) {
        best = d2;
        bq = q;
      }
    }
    dst.push_back(bq);
  }
  const RigidPose T = rigid_align(src, dst);
  double sum = 0, sum2 = 0;
  for (const Vec3& p : src) {
    const double d = nearest(T * p);
    sum += d;
    sum2 += d * d;
  }
  const double n = static_cast<double>(src.size());
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sum2 / n - mean * mean))};
}

inline void export_ply(const ObjectModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write PLY: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << model.surfels.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float nx\nproperty float ny\nproperty float nz\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property float weight\nproperty float radius\nend_header\n";
  for (const Surfel& sf : model.surfels) {
    out << sf.position.x() << " " << sf.position.y() << " " << sf.position.z() << " "
        << sf.normal.x() << " " << sf.normal.y() << " " << sf.normal.z() << " " << int(sf.color.r)
        << " " << int(sf.color.g) << " " << int(sf.color.b) << " " << sf.weight << " " << sf.radius
        << "\n";
  }
}

}  // namespace moslam
