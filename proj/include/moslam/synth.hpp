#pragma once

#include <fstream>
#include <random>
#include <sstream>

#include "moslam/dataio.hpp"
#include "moslam/maps.hpp"

namespace moslam {

// Scripted rigid scene: ray-cast primitives with exact ground truth.
// Keyframed poses are interpolated linearly in the Lie algebra.

enum class PrimitiveType { Plane, Box, Sphere, Capsule };

struct Albedo {
  bool checker = false;
  Rgb a{180, 180, 180};
  Rgb b{90, 90, 90};
  double scale = 0.25;  // metres per checker cell
};

struct ScenePrimitive {
  std::string name;
  PrimitiveType type = PrimitiveType::Plane;
  double dims[3] = {0, 0, 0};  // box: extents; sphere: r; capsule: r, half-length
  int class_id = 0;            // 0 = background
  Albedo albedo;
  std::vector<std::pair<int, RigidPose>> keyframes;  // frame -> world pose
  int instance_id = 0;  // assigned in declaration order for class_id > 0
};

struct SceneScript {
  CameraIntrinsics intrinsics{250, 250, 160, 120, 320, 240};
  int frame_count = 1;
  double rate = 30.0;
  double noise_sigma = 0.0;
  uint32_t seed = 1;
  int mask_period = 0;    // 0 = no masks
  int mask_dilation = 0;  // pixels
  double mask_score = 0.95;
  std::vector<ScenePrimitive> primitives;
  std::vector<std::pair<int, RigidPose>> camera_keyframes;
};

inline RigidPose interpolate_keyframes(const std::vector<std::pair<int, RigidPose>>& kfs,
                                       double frame) {
  if (kfs.empty()) return RigidPose::identity();
  if (frame <= kfs.front().first) return kfs.front().second;
  if (frame >= kfs.back().first) return kfs.back().second;
  for (size_t i = 0; i + 1 < kfs.size(); ++i) {
    if (frame > kfs[i + 1].first) continue;
    const auto& [fa, Ta] = kfs[i];
    const auto& [fb, Tb] = kfs[i + 1];
    const double s = (frame - fa) / double(fb - fa);
    const Vec6 xi = se3_log(Ta.inverse() * Tb);
    return Ta * se3_exp((s * xi).eval());
  }
  return kfs.back().second;
}

namespace synth_detail {

struct Hit {
  double t = -1;  // camera-frame depth
  Vec3 normal_local = Vec3::UnitZ();
  Vec3 point_local = Vec3::Zero();
};

// Ray given in the primitive's local frame; dir is scaled so that t equals
// camera z-depth.
inline bool intersect(const ScenePrimitive& p, const Vec3& o, const Vec3& d, Hit& hit) {
  constexpr double tmin = 0.05;
  switch (p.type) {
    case PrimitiveType::Plane: {  // z=0, normal +z, infinite
      if (std::abs(d.z()) < 1e-12) return false;
      const double t = -o.z() / d.z();
      if (t < tmin) return false;
      hit.t = t;
      hit.point_local = o + t * d;
      hit.normal_local = Vec3::UnitZ();
      return true;
    }
    case PrimitiveType::Box: {  // centered, extents dims[0..2]
      const Vec3 half(p.dims[0] / 2, p.dims[1] / 2, p.dims[2] / 2);
      double t0 = tmin, t1 = std::numeric_limits<double>::max();
      int axis = -1;
      for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-12) {
          if (std::abs(o[k]) > half[k]) return false;
          continue;
        }
        double ta = (-half[k] - o[k]) / d[k];
        double tb = (half[k] - o[k]) / d[k];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
          t0 = ta;
          axis = k;
        }
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
      }
      if (axis < 0) return false;  // origin inside the box
      hit.t = t0;
      hit.point_local = o + t0 * d;
      Vec3 n = Vec3::Zero();
      n[axis] = hit.point_local[axis] > 0 ? 1.0 : -1.0;
      hit.normal_local = n;
      return true;
    }
    case PrimitiveType::Sphere: {
      const double r = p.dims[0];
      const double a = d.squaredNorm();
      const double b = 2.0 * o.dot(d);
      const double c = o.squaredNorm() - r * r;
      const double disc = b * b - 4 * a * c;
      if (disc < 0) return false;
      const double t = (-b - std::sqrt(disc)) / (2 * a);
      if (t < tmin) return false;
      hit.t = t;
      hit.point_local = o + t * d;
      hit.normal_local = hit.point_local.normalized();
      return true;
    }
    case PrimitiveType::Capsule: {  // axis = local y, radius dims[0], half-length dims[1]
      const double r = p.dims[0], hl = p.dims[1];
      double best = std::numeric_limits<double>::max();
      // Cylinder part.
      const double a = d.x() * d.x() + d.z() * d.z();
      if (a > 1e-12) {
        const double b = 2.0 * (o.x() * d.x() + o.z() * d.z());
        const double c = o.x() * o.x() + o.z() * o.z() - r * r;
        const double disc = b * b - 4 * a * c;
        if (disc >= 0) {
          const double t = (-b - std::sqrt(disc)) / (2 * a);
          if (t >= tmin) {
            const double ylocal = o.y() + t * d.y();
            if (std::abs(ylocal) <= hl) best = t;
          }
        }
      }
      // End spheres.
      for (double cy : {-hl, hl}) {
        const Vec3 oc = o - Vec3(0, cy, 0);
        const double sa = d.squaredNorm();
        const double sb = 2.0 * oc.dot(d);
        const double sc = oc.squaredNorm() - r * r;
        const double disc = sb * sb - 4 * sa * sc;
        if (disc < 0) continue;
        const double t = (-sb - std::sqrt(disc)) / (2 * sa);
        if (t >= tmin && t < best) best = t;
      }
      if (best == std::numeric_limits<double>::max()) return false;
      hit.t = best;
      hit.point_local = o + best * d;
      Vec3 axis_pt(0, std::clamp(hit.point_local.y(), -hl, hl), 0);
      hit.normal_local = (hit.point_local - axis_pt).normalized();
      return true;
    }
  }
  return false;
}

inline Rgb shade(const ScenePrimitive& p, const Hit& hit, const Vec3& view_dir_local) {
  Rgb base = p.albedo.a;
  if (p.albedo.checker) {
    const double s = p.albedo.scale;
    const int cx = static_cast<int>(std::floor(hit.point_local.x() / s));
    const int cy = static_cast<int>(std::floor(hit.point_local.y() / s));
    const int cz = static_cast<int>(std::floor(hit.point_local.z() / s));
    if ((cx + cy + cz) & 1) base = p.albedo.b;
  }
  const double lambert = 0.4 + 0.6 * std::abs(hit.normal_local.dot(view_dir_local.normalized()));
  auto mul = [&](uint8_t v) { return static_cast<uint8_t>(std::min(255.0, v * lambert)); };
  return Rgb{mul(base.r), mul(base.g), mul(base.b)};
}

}  // namespace synth_detail

struct RenderedFrame {
  DepthMap depth;       // exact, before noise
  ColorMap color;
  Image<uint8_t> gt_labels;  // 0 background, instance ids, 255 ignore classes
};

// Poses at frame f: camera world pose and per-primitive world poses.
inline RenderedFrame raycast_frame(const SceneScript& script, double frame,
                                   const std::set<int>& ignore_classes = {kPersonClassId}) {
  const CameraIntrinsics& K = script.intrinsics;
  RenderedFrame out{DepthMap(K.width, K.height, 0.0f), ColorMap(K.width, K.height),
                    Image<uint8_t>(K.width, K.height, 0)};
  const RigidPose cam = interpolate_keyframes(script.camera_keyframes, frame);  // camera->world
  std::vector<RigidPose> cam_to_local;
  for (const auto& p : script.primitives) {
    const RigidPose T_wo = interpolate_keyframes(p.keyframes, frame);
    cam_to_local.push_back(T_wo.inverse() * cam);
  }
  auto cast = [&](double px, double py, synth_detail::Hit& best_hit, Vec3& dir_best) -> int {
    const Vec3 dir_cam((px - K.cx) / K.fx, (py - K.cy) / K.fy, 1.0);
    double best_t = std::numeric_limits<double>::max();
    int best_i = -1;
    for (size_t i = 0; i < script.primitives.size(); ++i) {
      const Vec3 o = cam_to_local[i] * Vec3::Zero();
      const Vec3 d = cam_to_local[i].R * dir_cam;
      synth_detail::Hit hit;
      if (synth_detail::intersect(script.primitives[i], o, d, hit) && hit.t < best_t) {
        best_t = hit.t;
        best_i = static_cast<int>(i);
        best_hit = hit;
        dir_best = d;
      }
    }
    return best_i;
  };
  // Colour is 2x2 supersampled so intensity edges land at subpixel accuracy
  // (point-sampled edges would alias by half a pixel and poison photometric
  // alignment); depth and labels stay point-sampled to keep geometry crisp.
  constexpr double kOffsets[2] = {-0.25, 0.25};
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      synth_detail::Hit hit;
      Vec3 dir;
      const int ci = cast(x, y, hit, dir);
      if (ci < 0) continue;
      const ScenePrimitive& prim = script.primitives[ci];
      out.depth.at(x, y) = static_cast<float>(hit.t);
      int r = 0, g = 0, b = 0, n = 0;
      for (double oy : kOffsets)
        for (double ox : kOffsets) {
          synth_detail::Hit sh;
          Vec3 sd;
          const int si = cast(x + ox, y + oy, sh, sd);
          if (si < 0) continue;
          const Rgb c = synth_detail::shade(script.primitives[si], sh, sd);
          r += c.r;
          g += c.g;
          b += c.b;
          ++n;
        }
      if (n == 0) {
        out.color.at(x, y) = synth_detail::shade(prim, hit, dir);
      } else {
        out.color.at(x, y) = Rgb{static_cast<uint8_t>((r + n / 2) / n),
                                 static_cast<uint8_t>((g + n / 2) / n),
                                 static_cast<uint8_t>((b + n / 2) / n)};
      }
      if (prim.class_id == 0)
        out.gt_labels.at(x, y) = 0;
      else if (ignore_classes.count(prim.class_id))
        out.gt_labels.at(x, y) = kIgnoreLabel;
      else
        out.gt_labels.at(x, y) = static_cast<uint8_t>(prim.instance_id);
    }
  return out;
}

// --- Scene script file ---------------------------------------------------
//
//   size W H
//   intrinsics FX FY CX CY
//   frames N
//   rate FPS
//   noise SIGMA
//   seed N
//   mask_period K          (every K-th frame gets masks; 0 = none)
//   mask_dilation D
//   mask_score S
//   plane NAME class C
//   box NAME SX SY SZ class C
//   sphere NAME R class C
//   capsule NAME R HALFLEN class C
//   albedo NAME flat R G B
//   albedo NAME checker R1 G1 B1 R2 G2 B2 SCALE
//   keyframe NAME FRAME TX TY TZ RX RY RZ    (world pose, rotation vector)
//
// NAME "camera" in keyframe lines drives the camera.
inline SceneScript parse_scene_script(std::istream& in) {
  SceneScript script;
  std::string line;
  int lineno = 0;
  int next_instance = 1;
  auto find_prim = [&](const std::string& name) -> ScenePrimitive& {
    for (auto& p : script.primitives)
      if (p.name == name) return p;
    throw FormatError("scene script: unknown primitive '" + name + "' at line " +
                      std::to_string(lineno));
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string cmd;
    if (!(ss >> cmd)) continue;
    auto fail = [&](const std::string& why) {
      throw FormatError("scene script line " + std::to_string(lineno) + ": " + why);
    };
    if (cmd == "size") {
      if (!(ss >> script.intrinsics.width >> script.intrinsics.height)) fail("size W H");
    } else if (cmd == "intrinsics") {
      if (!(ss >> script.intrinsics.fx >> script.intrinsics.fy >> script.intrinsics.cx >>
            script.intrinsics.cy))
        fail("intrinsics FX FY CX CY");
    } else if (cmd == "frames") {
      if (!(ss >> script.frame_count) || script.frame_count < 1) fail("frames N (N >= 1)");
    } else if (cmd == "rate") {
      if (!(ss >> script.rate)) fail("rate FPS");
    } else if (cmd == "noise") {
      if (!(ss >> script.noise_sigma)) fail("noise SIGMA");
    } else if (cmd == "seed") {
      if (!(ss >> script.seed)) fail("seed N");
    } else if (cmd == "mask_period") {
      if (!(ss >> script.mask_period)) fail("mask_period K");
    } else if (cmd == "mask_dilation") {
      if (!(ss >> script.mask_dilation)) fail("mask_dilation D");
    } else if (cmd == "mask_score") {
      if (!(ss >> script.mask_score)) fail("mask_score S");
    } else if (cmd == "plane" || cmd == "box" || cmd == "sphere" || cmd == "capsule") {
      ScenePrimitive p;
      if (!(ss >> p.name)) fail(cmd + " NAME ...");
      if (cmd == "plane") {
        p.type = PrimitiveType::Plane;
      } else if (cmd == "box") {
        p.type = PrimitiveType::Box;
        if (!(ss >> p.dims[0] >> p.dims[1] >> p.dims[2])) fail("box NAME SX SY SZ ...");
      } else if (cmd == "sphere") {
        p.type = PrimitiveType::Sphere;
        if (!(ss >> p.dims[0])) fail("sphere NAME R ...");
      } else {
        p.type = PrimitiveType::Capsule;
        if (!(ss >> p.dims[0] >> p.dims[1])) fail("capsule NAME R HALFLEN ...");
      }
      std::string kw;
      if (ss >> kw) {
        if (kw != "class" || !(ss >> p.class_id)) fail("expected: class C");
      }
      if (p.class_id > 0) p.instance_id = next_instance++;
      script.primitives.push_back(std::move(p));
    } else if (cmd == "albedo") {
      std::string name, kind;
      if (!(ss >> name >> kind)) fail("albedo NAME flat|checker ...");
      ScenePrimitive& p = find_prim(name);
      int r, g, b;
      if (kind == "flat") {
        if (!(ss >> r >> g >> b)) fail("albedo NAME flat R G B");
        p.albedo = Albedo{false, Rgb{uint8_t(r), uint8_t(g), uint8_t(b)}, Rgb{}, 0.25};
      } else if (kind == "checker") {
        int r2, g2, b2;
        double scale;
        if (!(ss >> r >> g >> b >> r2 >> g2 >> b2 >> scale))
          fail("albedo NAME checker R1 G1 B1 R2 G2 B2 SCALE");
        p.albedo = Albedo{true, Rgb{uint8_t(r), uint8_t(g), uint8_t(b)},
                          Rgb{uint8_t(r2), uint8_t(g2), uint8_t(b2)}, scale};
      } else {
        fail("albedo kind must be flat or checker");
      }
    } else if (cmd == "keyframe") {
      std::string name;
      int frame;
      double tx, ty, tz, rx, ry, rz;
      if (!(ss >> name >> frame >> tx >> ty >> tz >> rx >> ry >> rz))
        fail("keyframe NAME FRAME TX TY TZ RX RY RZ");
      Vec6 xi;
      xi << rx, ry, rz, 0, 0, 0;
      RigidPose T = se3_exp(xi);
      T.t = Vec3(tx, ty, tz);
      auto& kfs =
          name == "camera" ? script.camera_keyframes : find_prim(name).keyframes;
      kfs.emplace_back(frame, T);
    } else {
      fail("unknown directive '" + cmd + "'");
    }
  }
  if (script.primitives.empty()) throw FormatError("scene script: needs at least one primitive");
  for (auto& p : script.primitives)
    std::sort(p.keyframes.begin(), p.keyframes.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  std::sort(script.camera_keyframes.begin(), script.camera_keyframes.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return script;
}

inline SceneScript load_scene_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene script: " + path);
  return parse_scene_script(in);
}

// Writes a TUM-layout dataset plus masks/ and gt_labels/.
inline void generate_synthetic_sequence(const SceneScript& script, const std::string& out_dir,
                                        const std::set<int>& ignore_classes = {kPersonClassId}) {
  const fs::path root(out_dir);
  fs::create_directories(root / "rgb");
  fs::create_directories(root / "depth");
  fs::create_directories(root / "gt_labels");
  if (script.mask_period > 0) fs::create_directories(root / "masks");

  std::ofstream rgb_txt(root / "rgb.txt");
  std::ofstream depth_txt(root / "depth.txt");
  std::ofstream gt_txt(root / "groundtruth.txt");
  if (!rgb_txt || !depth_txt || !gt_txt) throw IoError("cannot write dataset files in " + out_dir);
  gt_txt << std::setprecision(9) << std::fixed;

  {
    std::ofstream k(root / "intrinsics.txt");
    k << script.intrinsics.fx << " " << script.intrinsics.fy << " " << script.intrinsics.cx << " "
      << script.intrinsics.cy << " " << script.intrinsics.width << " " << script.intrinsics.height
      << " " << script.intrinsics.depth_scale << "\n";
  }

  std::map<int, std::ofstream> obj_txt;
  for (const auto& p : script.primitives)
    if (p.instance_id > 0 && !ignore_classes.count(p.class_id)) {
      obj_txt[p.instance_id].open(root / ("gt_object_" + std::to_string(p.instance_id) + ".txt"));
      obj_txt[p.instance_id] << std::setprecision(9) << std::fixed;
    }

  for (int f = 0; f < script.frame_count; ++f) {
    const double ts = f / script.rate;
    RenderedFrame frame = raycast_frame(script, f, ignore_classes);

    DepthMap noisy = frame.depth;
    if (script.noise_sigma > 0) {
      std::mt19937 rng(script.seed + 7919u * static_cast<uint32_t>(f));
      std::normal_distribution<float> gauss(0.0f, static_cast<float>(script.noise_sigma));
      for (auto& d : noisy)
        if (d > 0) d = std::max(0.01f, d + gauss(rng));
    }

    char name[32];
    std::snprintf(name, sizeof(name), "%d.png", f);
    save_color_png(frame.color, (root / "rgb" / name).string());
    save_depth_png16(noisy, script.intrinsics.depth_scale, (root / "depth" / name).string());
    save_label_png(frame.gt_labels, (root / "gt_labels" / name).string());
    rgb_txt << std::setprecision(6) << std::fixed << ts << " rgb/" << name << "\n";
    depth_txt << std::setprecision(6) << std::fixed << ts << " depth/" << name << "\n";

    const RigidPose cam = interpolate_keyframes(script.camera_keyframes, f);
    const Eigen::Quaterniond q = to_quaternion(cam);
    gt_txt << ts << " " << cam.t.x() << " " << cam.t.y() << " " << cam.t.z() << " " << q.x() << " "
           << q.y() << " " << q.z() << " " << q.w() << "\n";
    for (const auto& p : script.primitives)
      if (auto it = obj_txt.find(p.instance_id); it != obj_txt.end()) {
        const RigidPose T = interpolate_keyframes(p.keyframes, f);
        const Eigen::Quaterniond oq = to_quaternion(T);
        it->second << ts << " " << T.t.x() << " " << T.t.y() << " " << T.t.z() << " " << oq.x()
                   << " " << oq.y() << " " << oq.z() << " " << oq.w() << "\n";
      }

    if (script.mask_period > 0 && f % script.mask_period == 0) {
      Image<uint8_t> mask_png(script.intrinsics.width, script.intrinsics.height, 0);
      nlohmann::json meta = nlohmann::json::array();
      for (const auto& p : script.primitives) {
        if (p.instance_id == 0) continue;
        Image<uint8_t> m(mask_png.width(), mask_png.height(), 0);
        int count = 0;
        const uint8_t want =
            ignore_classes.count(p.class_id) ? kIgnoreLabel : static_cast<uint8_t>(p.instance_id);
        for (int y = 0; y < m.height(); ++y)
          for (int x = 0; x < m.width(); ++x)
            if (frame.gt_labels.at(x, y) == want) {
              m.at(x, y) = 1;
              ++count;
            }
        if (count == 0) continue;
        if (script.mask_dilation > 0) m = dilate_mask(m, script.mask_dilation);
        int x0 = m.width(), y0 = m.height(), x1 = -1, y1 = -1;
        for (int y = 0; y < m.height(); ++y)
          for (int x = 0; x < m.width(); ++x)
            if (m.at(x, y)) {
              mask_png.at(x, y) = static_cast<uint8_t>(p.instance_id);
              x0 = std::min(x0, x);
              y0 = std::min(y0, y);
              x1 = std::max(x1, x);
              y1 = std::max(y1, y);
            }
        meta.push_back({{"id", p.instance_id},
                        {"class_id", p.class_id},
                        {"bbox", {x0, y0, x1 - x0 + 1, y1 - y0 + 1}},
                        {"score", script.mask_score}});
      }
      save_label_png(mask_png, (root / "masks" / (std::to_string(f) + ".png")).string());
      std::ofstream jm(root / "masks" / (std::to_string(f) + ".json"));
      jm << meta.dump(2) << "\n";
    }
  }
}

}  // namespace moslam
