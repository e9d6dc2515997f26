#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "moslam/dataio.hpp"
#include "moslam/geomseg.hpp"
#include "moslam/maskmerge.hpp"
#include "moslam/tracking.hpp"

namespace moslam {

struct Frame {
  int index = 0;
  double timestamp = 0;
  ColorMap color;
  DepthMap depth;
  IntensityMap intensity;
  std::optional<std::vector<SemanticMask>> masks;  // set once by the mask source
};

// Asynchronous provider of semantic masks. `compute` is called from the mask
// worker for one frame at a time; nullopt means this source never answers.
class MaskSource {
 public:
  virtual ~MaskSource() = default;
  virtual std::optional<std::vector<SemanticMask>> compute(const Frame& frame) = 0;
};

class NullMaskSource : public MaskSource {
 public:
  std::optional<std::vector<SemanticMask>> compute(const Frame&) override { return std::nullopt; }
};

// Precomputed masks indexed by frame number (masks/<k>.png + <k>.json).
class DirectoryMaskSource : public MaskSource {
 public:
  explicit DirectoryMaskSource(std::string dir) : dir_(std::move(dir)) {}
  std::optional<std::vector<SemanticMask>> compute(const Frame& frame) override {
    return load_frame_masks(dir_, frame.index);
  }

 private:
  fs::path dir_;
};

struct PipelineConfig {
  int queue_capacity = 12;
  double frame_rate = 30.0;          // nominal input rate, drives sync-mode emulation
  double mask_latency_ms = 200.0;    // emulated mask source latency
  double mask_min_period_ms = 200.0; // 5 Hz budget
  bool synchronous = false;          // deterministic test mode
  double static_residual_gate = 0.02;   // epsilon_d, metres
  double static_dynamic_fraction = 0.15;  // rho
  // Demotion gates for models that were tracked this frame: the tracked
  // increment must agree with camera-only motion this closely to count as a
  // static verdict.
  double dynamic_motion_gate = 0.004;     // metres / frame
  double dynamic_rot_gate_deg = 0.25;     // degrees / frame
  int touch_radius_px = 20;
  int static_hysteresis = 5;  // consecutive static verdicts to demote dynamic -> static
  int dynamic_hysteresis = 2;  // consecutive moving verdicts to promote static -> dynamic
  // Person/ignore mask zones persist this many frames past their mask so the
  // region stays excluded on maskless frames (masks arrive ~1-of-6).
  int ignore_persistence_frames = 12;
  TrackingSettings tracking;
  FusionSettings fusion;
  GeomSegSettings geomseg;
  MergeSettings merge;
};

struct ModelReport {
  uint8_t label = 0;
  int class_id = 0;
  bool is_dynamic = false;
  bool lost = false;
  bool tracked_independently = false;
  RigidPose world_pose;  // model frame -> world
  int surfel_count = 0;
  int fused_pixels = 0;
};

struct ProcessingReport {
  int frame_index = 0;
  double timestamp = 0;
  bool used_mask_path = false;
  int mask_count = 0;
  RigidPose camera_pose;  // camera -> world
  LabelImage labeling;
  std::vector<ModelReport> models;
  int spawned = 0;
};

struct WorldState {
  std::vector<std::unique_ptr<ObjectModel>> models;  // [0] = background
  std::map<uint8_t, int> static_counters;            // consecutive static verdicts
  std::map<uint8_t, int> dynamic_counters;           // consecutive moving verdicts
  std::map<uint8_t, RigidPose> last_increments;      // per-model constant-velocity prior
  // Pose (and frame) at the last dynamic verdict; motion-inconsistency
  // residuals are measured against this anchor composed with camera-only
  // motion, so slow steady motion accumulates instead of resetting per frame.
  std::map<uint8_t, std::pair<int, RigidPose>> static_anchors;
  // Union of ignore-class mask pixels (dilated) from the last masked frame;
  // reapplied on maskless frames while fresh.
  std::optional<Image<uint8_t>> ignore_zone;
  int ignore_zone_frame = -1;
  int last_frame = -1;
  bool initialized = false;

  WorldState() {
    auto bg = std::make_unique<ObjectModel>();
    bg->label = kBackgroundLabel;
    models.push_back(std::move(bg));
  }

  ObjectModel& background() { return *models[0]; }
  ObjectModel* find(uint8_t label) {
    for (auto& m : models)
      if (m->label == label) return m.get();
    return nullptr;
  }
  uint8_t next_label() const {
    uint8_t max = 0;
    for (const auto& m : models) max = std::max(max, m->label);
    if (max >= 254) throw LabelExhaustedError("255 model labels exhausted");
    return static_cast<uint8_t>(max + 1);
  }
};

namespace pipeline_detail {

inline ModelView view_from_pyramid_level(const PyramidLevel& lvl, uint8_t label) {
  ModelView v;
  v.depth = lvl.depth;
  v.intensity = lvl.intensity;
  v.vertices = lvl.vertices;
  v.normals = lvl.normals;
  v.labels = LabelImage(lvl.depth.width(), lvl.depth.height(), label);
  return v;
}

// Renders the model once at full resolution and serves coarse levels from a
// pyramid of the rendered maps.
class PyramidViewRenderer {
 public:
  PyramidViewRenderer(const ObjectModel& model, const RigidPose& pose, const CameraIntrinsics& K,
                      int t, const FusionSettings& fusion, int levels)
      : label_(model.label) {
    const ModelView full = render_model(model, pose, K, t, fusion);
    pyr_ = build_render_pyramid(full.depth, full.intensity, K, levels);
  }

  ModelView operator()(const CameraIntrinsics& K) const {
    for (int i = 0; i < pyr_.count(); ++i)
      if (pyr_[i].intrinsics.width == K.width)
        return view_from_pyramid_level(pyr_[i], label_);
    throw Error("view renderer: no pyramid level of width " + std::to_string(K.width));
  }

 private:
  Pyramid pyr_;
  uint8_t label_;
};

}  // namespace pipeline_detail

// Motion-inconsistency + person-touch static/dynamic decision.
// `inherit_pose` is the pose the model would have if it only moved with the
// camera since its anchor. For models tracked independently this frame,
// `tracked_pose` is set and the verdict compares the tracked increment
// against camera-only motion; otherwise stencil residuals against the model
// rendered at `inherit_pose` are used. Point-to-plane residuals alone are
// blind to surfaces sliding parallel to themselves (a box face translating
// laterally), so depth disagreement over the projected silhouette counts as
// motion evidence too.
inline bool classify_static(const ObjectModel& model, const RigidPose& inherit_pose,
                            const RigidPose* tracked_pose, const VertexMap& frame_vertices,
                            const LabelImage& labeling, const Image<uint8_t>* person_touch_zone,
                            const CameraIntrinsics& K, int t, const PipelineConfig& cfg) {
  const ModelView view =
      render_model(model, tracked_pose ? *tracked_pose : inherit_pose, K, t, cfg.fusion);
  if (person_touch_zone) {
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x)
        if (view.valid(x, y) && person_touch_zone->at(x, y)) return false;  // touched -> dynamic
  }
  if (tracked_pose) {
    const RigidPose drift = tracked_pose->inverse() * inherit_pose;
    const double angle =
        std::acos(std::clamp((drift.R.trace() - 1.0) * 0.5, -1.0, 1.0)) * 180.0 / M_PI;
    return drift.t.norm() <= cfg.dynamic_motion_gate && angle <= cfg.dynamic_rot_gate_deg;
  }
  int total = 0, moved = 0;
  const float gate = static_cast<float>(cfg.static_residual_gate);
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      if (!view.valid(x, y)) continue;
      const Eigen::Vector3f& vf = frame_vertices.at(x, y);
      if (vf.z() <= 0) continue;
      ++total;
      if (labeling.at(x, y) == model.label) {
        const Eigen::Vector3f& n = view.normals.at(x, y);
        if (n.squaredNorm() < 0.5f) continue;
        if (std::abs((view.vertices.at(x, y) - vf).dot(n)) > gate) ++moved;
      } else if (vf.z() > view.depth.at(x, y) + gate) {
        // The model projects here but the frame sees surface well behind it:
        // the object left this pixel (an occluder in front does not count).
        ++moved;
      }
    }
  if (std::getenv("MOSLAM_DEBUG_CLASSIFY"))
    std::fprintf(stderr, "classify t=%d label=%d moved=%d total=%d frac=%.3f\n", t, model.label,
                 moved, total, total ? double(moved) / total : 0.0);
  if (total < 50) return true;  // too little evidence to call it moving
  return double(moved) / double(total) <= cfg.static_dynamic_fraction;
}

inline ProcessingReport process_frame(const Frame& frame, WorldState& world,
                                      const CameraIntrinsics& K, const PipelineConfig& cfg) {
  const int t = frame.index;
  ProcessingReport report;
  report.frame_index = t;
  report.timestamp = frame.timestamp;
  report.used_mask_path = frame.masks.has_value();
  report.mask_count = frame.masks ? static_cast<int>(frame.masks->size()) : 0;

  // (1) Geometry of the live frame.
  const Pyramid pyr = build_pyramid(frame.depth, frame.intensity, K, cfg.tracking.levels);
  const VertexMap& vertices = pyr[0].vertices;
  const NormalMap& normals = pyr[0].normals;

  // (2) Geometric over-segmentation.
  const EdgeMap edges = edginess(vertices, normals, cfg.geomseg);
  const GeometricLabeling geo = connected_components(edges, cfg.geomseg);

  const int prev_t = world.last_frame;
  RigidPose cam_increment;  // frame-t camera -> frame-(t-1) camera

  // (3) Background tracking -> camera pose.
  ObjectModel& bg = world.background();
  if (!world.initialized) {
    bg.trajectory[t] = RigidPose::identity();
    bg.created_frame = t;
  } else {
    const RigidPose prev_pose = bg.pose_at(prev_t);
    if (std::getenv("MOSLAM_DEBUG_TRACK")) std::fprintf(stderr, "track lab=0 t=%d\n", t);
    try {
      pipeline_detail::PyramidViewRenderer renderer(bg, prev_pose, K, t, cfg.fusion,
                                                    cfg.tracking.levels);
      const TrackingResult res = track_model(renderer, pyr, cfg.tracking);
      cam_increment = res.increment;
    } catch (const TrackingLostError& e) {
      throw CameraLostError(std::string("background tracking lost at frame ") +
                            std::to_string(t) + ": " + e.what());
    }
    bg.trajectory[t] = cam_increment.inverse() * prev_pose;
  }
  bg.static_flags[t] = true;
  const RigidPose camera_pose = bg.pose_at(t).inverse();  // camera -> world
  report.camera_pose = camera_pose;

  // (4) Object tracking. Dynamic models move with their own tracked pose;
  // static ones inherit camera motion, but are still tracked on the side:
  // the tracked-vs-inherited drift is the promotion evidence, and it fires
  // long before stencil residuals do (fusion keeps sculpting a static model
  // toward whatever the frame shows, which erases depth disagreement).
  std::map<uint8_t, bool> lost;
  std::map<uint8_t, RigidPose> tracked_static;
  for (auto& mp : world.models) {
    if (std::getenv("MOSLAM_DEBUG_TRACK"))
      std::fprintf(stderr, "obj lab=%d init=%d has_prev=%d\n", mp->label, (int)world.initialized,
                   (int)mp->trajectory.count(prev_t));
    if (mp->label == kBackgroundLabel || !world.initialized) continue;
    ObjectModel& model = *mp;
    if (!model.trajectory.count(prev_t)) continue;  // spawned later
    const RigidPose prev_pose = model.pose_at(prev_t);
    const bool dynamic = !model.is_static_at(prev_t);
    RigidPose init;  // constant-velocity prior: start from last frame's increment
    if (auto li = world.last_increments.find(model.label); li != world.last_increments.end())
      init = li->second;
    if (std::getenv("MOSLAM_DEBUG_TRACK"))
      std::fprintf(stderr, "track lab=%d dyn=%d t=%d\n", model.label, (int)dynamic, t);
    try {
      pipeline_detail::PyramidViewRenderer renderer(model, prev_pose, K, t, cfg.fusion,
                                                    cfg.tracking.levels);
      const TrackingResult res = track_model(renderer, pyr, cfg.tracking, init);
      if (dynamic) {
        model.trajectory[t] = res.increment.inverse() * prev_pose;
        world.last_increments[model.label] = res.increment;
      } else {
        // Side-track increments span all motion accumulated since the last
        // camera-inherited reset, not one frame; they must not become the
        // velocity prior.
        tracked_static[model.label] = res.increment.inverse() * prev_pose;
      }
    } catch (const TrackingLostError&) {
      world.last_increments.erase(model.label);
      if (dynamic) lost[model.label] = true;
    }
    if (!dynamic)
      model.trajectory[t] = cam_increment.inverse() * prev_pose;
    else if (lost.count(model.label))
      model.trajectory[t] = prev_pose;  // freeze
  }

  // (5) Projected model labels at updated poses.
  std::vector<const ObjectModel*> model_ptrs;
  std::vector<RigidPose> model_poses;
  for (auto& mp : world.models)
    if (mp->trajectory.count(t)) {
      model_ptrs.push_back(mp.get());
      model_poses.push_back(mp->pose_at(t));
    }
  const LabelImage projected = render_projected_labels(model_ptrs, model_poses, K, t, cfg.fusion);

  // (6) Merged segmentation.
  static const std::vector<SemanticMask> kNoMasks;
  const std::vector<SemanticMask>& masks = frame.masks ? *frame.masks : kNoMasks;
  std::vector<int> comp_to_mask(geo.count + 1, -1);
  std::map<int, uint8_t> mask_to_model;
  if (!masks.empty()) {
    comp_to_mask = map_components_to_masks(geo, masks, cfg.merge, &frame.depth);
    mask_to_model =
        map_masks_to_models(geo, comp_to_mask, masks, projected, model_ptrs, cfg.merge,
                            &frame.depth);
  }
  const std::vector<int> comp_to_model =
      map_components_to_models(geo, comp_to_mask, projected, cfg.merge, &frame.depth);
  MergedLabeling merged = compose_final_labeling(geo, comp_to_mask, mask_to_model, comp_to_model,
                                                 masks, cfg.merge, &frame.depth);

  // Keep ignore-class zones alive between mask frames: masks arrive on a
  // fraction of frames, but a person keeps moving on the frames in between
  // and must not be fused into the background there.
  if (frame.masks) {
    Image<uint8_t> zone(K.width, K.height, 0);
    bool any = false;
    for (const SemanticMask& m : masks)
      if (cfg.merge.ignore_classes.count(m.class_id)) {
        any = true;
        for (int y = 0; y < K.height; ++y)
          for (int x = 0; x < K.width; ++x)
            if (m.mask.at(x, y)) zone.at(x, y) = 1;
      }
    if (any) {
      world.ignore_zone = dilate_mask(zone, cfg.touch_radius_px);
      world.ignore_zone_frame = t;
    } else {
      world.ignore_zone.reset();
    }
  } else if (world.ignore_zone && t - world.ignore_zone_frame <= cfg.ignore_persistence_frames) {
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x)
        if (world.ignore_zone->at(x, y) && merged.labels.at(x, y) == kBackgroundLabel)
          merged.labels.at(x, y) = kIgnoreLabel;
  }

  // (7) Spawn models for unmatched masks. The object's surface has been
  // fused into the background on every frame before its first mask arrived;
  // those surfels must be evicted or they keep pulling camera tracking along
  // once the object moves.
  Image<uint8_t> evict_zone(K.width, K.height, 0);
  bool any_spawn = false;
  for (const SpawnRequest& req : merged.spawns) {
    if (cfg.merge.ignore_classes.count(req.class_id)) continue;
    auto model = std::make_unique<ObjectModel>();
    model->label = world.next_label();
    model->class_id = req.class_id;
    model->created_frame = t;
    model->trajectory[t] = RigidPose::identity();  // anchored at the camera frame of birth
    model->static_flags[t] = true;
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x)
        if (req.stencil.at(x, y) && merged.labels.at(x, y) == kBackgroundLabel) {
          merged.labels.at(x, y) = model->label;
          evict_zone.at(x, y) = 1;
          any_spawn = true;
        }
    world.models.push_back(std::move(model));
    ++report.spawned;
  }
  if (any_spawn && !bg.surfels.empty()) {
    const RigidPose bg_pose = bg.pose_at(t);
    const double gate = 3.0 * cfg.fusion.dist_gate;
    size_t w = 0;
    for (size_t i = 0; i < bg.surfels.size(); ++i) {
      const Vec3 pc = bg_pose * bg.surfels[i].position.cast<double>();
      bool keep = true;
      if (pc.z() > 0) {
        const int px = static_cast<int>(std::lround(K.fx * pc.x() / pc.z() + K.cx));
        const int py = static_cast<int>(std::lround(K.fy * pc.y() / pc.z() + K.cy));
        if (px >= 0 && px < K.width && py >= 0 && py < K.height && evict_zone.at(px, py)) {
          const float d = frame.depth.at(px, py);
          if (valid_depth(d) && std::abs(pc.z() - d) < gate) keep = false;
        }
      }
      if (keep) bg.surfels[w++] = bg.surfels[i];
    }
    bg.surfels.resize(w);
  }

  // (8) Fusion over each model's stencil. Dynamic models are frozen: fusing
  // through an imperfect tracked pose shifts the surfel texture along the
  // motion and the pose estimate then chases its own smear. Their render
  // stays the geometry captured while they were static, which a rigid
  // tracker follows indefinitely.
  FrameData fdata{&vertices, &normals, &frame.color};
  std::set<uint8_t> fused;
  for (auto& mp : world.models) {
    if (!mp->trajectory.count(t) || lost.count(mp->label)) continue;
    ModelReport mr;
    mr.label = mp->label;
    mr.class_id = mp->class_id;
    if (mp->label == kBackgroundLabel || mp->created_frame == t ||
        mp->is_static_at(prev_t >= 0 ? prev_t : t)) {
      const FusionStats st =
          fuse_frame(*mp, fdata, merged.labels, mp->pose_at(t), t, K, cfg.fusion);
      mr.fused_pixels = st.fused_pixels;
      fused.insert(mp->label);
    }
    report.models.push_back(mr);
  }

  // (9) Cleanup. Unfused (frozen) models keep their surfels: nothing feeds
  // them weight, so the unstable-TTL would wipe them out wholesale.
  for (auto& mp : world.models)
    if (fused.count(mp->label)) cleanup(*mp, t, cfg.fusion);

  // (10) Static/dynamic reclassification.
  const Image<uint8_t>* touch_zone =
      world.ignore_zone && t - world.ignore_zone_frame <= cfg.ignore_persistence_frames
          ? &*world.ignore_zone
          : nullptr;
  for (auto& mp : world.models) {
    if (mp->label == kBackgroundLabel || !mp->trajectory.count(t)) continue;
    ObjectModel& model = *mp;
    const bool was_dynamic = !model.is_static_at(prev_t >= 0 ? prev_t : t);
    const bool tracked = was_dynamic && world.initialized && model.trajectory.count(prev_t) &&
                         !lost.count(model.label);
    auto anchor = world.static_anchors.find(model.label);
    if (anchor == world.static_anchors.end())
      anchor = world.static_anchors.emplace(model.label, std::make_pair(t, model.pose_at(t))).first;
    const auto side = tracked_static.find(model.label);
    bool verdict_static;
    if (tracked) {
      // Compare the tracked increment with camera-only motion since the
      // previous frame.
      const RigidPose inherit = cam_increment.inverse() * model.pose_at(prev_t);
      const RigidPose tracked_pose = model.pose_at(t);
      verdict_static = classify_static(model, inherit, &tracked_pose, vertices, merged.labels,
                                       touch_zone, K, t, cfg);
      // The anchor follows the tracked pose so a later demotion measures
      // residuals from where tracking left the model.
      anchor->second = {t, tracked_pose};
    } else if (side != tracked_static.end()) {
      // Static model with a usable side-tracked pose: same drift test as for
      // dynamic models. pose_at(t) is the camera-inherited pose.
      verdict_static = classify_static(model, model.pose_at(t), &side->second, vertices,
                                       merged.labels, touch_zone, K, t, cfg);
    } else {
      const auto& [anchor_t, anchor_pose] = anchor->second;
      // Where the model would be if it had only moved with the camera since
      // the anchor. For a genuinely static model this equals pose_at(t)
      // exactly, so only real object motion accumulates residuals.
      const RigidPose inherit = bg.pose_at(t) * bg.pose_at(anchor_t).inverse() * anchor_pose;
      verdict_static = classify_static(model, inherit, nullptr, vertices, merged.labels,
                                       touch_zone, K, t, cfg);
    }
    int& counter = world.static_counters[model.label];
    int& dyn_counter = world.dynamic_counters[model.label];
    if (verdict_static) {
      ++counter;
      dyn_counter = 0;
      model.static_flags[t] = !was_dynamic || counter >= cfg.static_hysteresis;
    } else {
      counter = 0;
      ++dyn_counter;
      const bool promote = was_dynamic || dyn_counter >= cfg.dynamic_hysteresis;
      model.static_flags[t] = !promote;
      if (promote && !was_dynamic) {
        // Start independent tracking from where the object actually is, not
        // from the camera-inherited pose it was wrongly held at.
        if (side != tracked_static.end()) model.trajectory[t] = side->second;
        anchor->second = {t, model.pose_at(t)};
      } else if (!tracked && promote) {
        anchor->second = {t, model.pose_at(t)};
      }
    }
  }

  // Finalize per-model reports.
  for (ModelReport& mr : report.models) {
    const ObjectModel* m = world.find(mr.label);
    if (!m) continue;
    mr.is_dynamic = !m->is_static_at(t);
    mr.lost = lost.count(mr.label) > 0;
    mr.surfel_count = static_cast<int>(m->surfels.size());
    mr.world_pose = camera_pose * m->pose_at(t);
    mr.tracked_independently = mr.label != kBackgroundLabel && world.initialized &&
                               !m->is_static_at(prev_t >= 0 ? prev_t : t);
  }

  report.labeling = std::move(merged.labels);
  world.last_frame = t;
  world.initialized = true;
  return report;
}

// Frame queue with asynchronous masking at the back and SLAM at the head.
class Pipeline {
 public:
  Pipeline(const CameraIntrinsics& K, const PipelineConfig& cfg,
           std::shared_ptr<MaskSource> mask_source)
      : K_(K), cfg_(cfg), mask_source_(std::move(mask_source)) {
    if (cfg_.queue_capacity < 1) throw Error("queue capacity must be >= 1");
    if (!cfg_.synchronous) {
      consumer_ = std::thread([this] { consume_loop(); });
      mask_worker_ = std::thread([this] { mask_loop(); });
    }
  }

  ~Pipeline() {
    try {
      shutdown();
    } catch (...) {
      // a failed drain must not escape the destructor
    }
  }

  // Producer side. Frames must arrive in increasing index order. In
  // synchronous mode processing happens inline once the queue is full.
  void submit_frame(Frame frame) {
    if (cfg_.synchronous) {
      if (closed_) throw QueueClosedError("pipeline is shut down");
      queue_.push_back(std::make_shared<Frame>(std::move(frame)));
      ++submit_count_;
      sync_mask_step();
      while (queue_.size() >= static_cast<size_t>(cfg_.queue_capacity)) process_head();
      return;
    }
    std::unique_lock lock(mu_);
    if (closed_) throw QueueClosedError("pipeline is shut down");
    space_cv_.wait(lock, [this] {
      return closed_ || queue_.size() < static_cast<size_t>(cfg_.queue_capacity);
    });
    if (closed_) throw QueueClosedError("pipeline is shut down");
    queue_.push_back(std::make_shared<Frame>(std::move(frame)));
    ++submit_count_;
    data_cv_.notify_all();
  }

  // Drains the queue (sync mode) or waits for it to drain (async mode), then
  // stops the workers. Safe to call more than once.
  void shutdown() {
    if (cfg_.synchronous) {
      while (!queue_.empty()) process_head();
      closed_ = true;
      return;
    }
    {
      std::unique_lock lock(mu_);
      if (closed_) return;
      drain_ = true;
      data_cv_.notify_all();
      done_cv_.wait(lock, [this] { return queue_.empty() && !processing_; });
      closed_ = true;
      data_cv_.notify_all();
      space_cv_.notify_all();
    }
    if (consumer_.joinable()) consumer_.join();
    if (mask_worker_.joinable()) mask_worker_.join();
  }

  std::optional<ProcessingReport> next_processed() {
    if (cfg_.synchronous) {
      if (reports_.empty()) return std::nullopt;
      ProcessingReport r = std::move(reports_.front());
      reports_.pop_front();
      return r;
    }
    std::unique_lock lock(mu_);
    if (reports_.empty()) return std::nullopt;
    ProcessingReport r = std::move(reports_.front());
    reports_.pop_front();
    return r;
  }

  std::optional<ProcessingReport> wait_processed() {
    std::unique_lock lock(mu_);
    report_cv_.wait(lock, [this] { return !reports_.empty() || (closed_ && queue_.empty()); });
    if (reports_.empty()) return std::nullopt;
    ProcessingReport r = std::move(reports_.front());
    reports_.pop_front();
    return r;
  }

  WorldState& world() { return world_; }
  const CameraIntrinsics& intrinsics() const { return K_; }
  std::exception_ptr error() const { return error_; }

 private:
  void attach_masks(Frame& frame) {
    if (!mask_source_) return;
    auto res = mask_source_->compute(frame);
    if (res) frame.masks = std::move(*res);
  }

  // Sync mode: latency and the 5 Hz budget are emulated in frame counts so
  // two runs are bit-identical.
  void sync_mask_step() {
    const int latency_frames =
        std::max(1, static_cast<int>(std::lround(cfg_.mask_latency_ms / 1000.0 * cfg_.frame_rate)));
    const int period_frames = std::max(
        1, static_cast<int>(std::lround(cfg_.mask_min_period_ms / 1000.0 * cfg_.frame_rate)));
    if (pending_frame_) {
      if (submit_count_ >= pending_done_at_) {
        // Attach only if the frame is still queued.
        for (auto& f : queue_)
          if (f.get() == pending_frame_.get()) {
            attach_masks(*f);
            break;
          }
        pending_frame_.reset();
      }
    }
    if (!pending_frame_ && submit_count_ >= next_request_at_ && !queue_.empty()) {
      pending_frame_ = queue_.back();  // newest unmasked frame
      pending_done_at_ = submit_count_ + latency_frames;
      next_request_at_ = submit_count_ + period_frames;
    }
  }

  void process_head() {
    auto frame = queue_.front();
    queue_.pop_front();
    if (pending_frame_.get() == frame.get()) pending_frame_.reset();  // too late to attach
    reports_.push_back(process_frame(*frame, world_, K_, cfg_));
  }

  void consume_loop() {
    while (true) {
      std::shared_ptr<Frame> frame;
      {
        std::unique_lock lock(mu_);
        data_cv_.wait(lock, [this] {
          return closed_ || (drain_ && !queue_.empty()) ||
                 queue_.size() >= static_cast<size_t>(cfg_.queue_capacity);
        });
        if (queue_.empty()) {
          done_cv_.notify_all();
          if (closed_) return;
          continue;
        }
        frame = queue_.front();
        queue_.pop_front();
        processing_ = true;
        space_cv_.notify_all();
      }
      try {
        ProcessingReport report = process_frame(*frame, world_, K_, cfg_);
        std::unique_lock lock(mu_);
        reports_.push_back(std::move(report));
        processing_ = false;
        report_cv_.notify_all();
        if (queue_.empty()) done_cv_.notify_all();
      } catch (...) {
        std::unique_lock lock(mu_);
        error_ = std::current_exception();
        processing_ = false;
        report_cv_.notify_all();
        done_cv_.notify_all();
      }
    }
  }

  void mask_loop() {
    const auto latency = std::chrono::duration<double, std::milli>(cfg_.mask_latency_ms);
    const auto period = std::chrono::duration<double, std::milli>(cfg_.mask_min_period_ms);
    auto last_request = std::chrono::steady_clock::now() - period;
    while (true) {
      std::shared_ptr<Frame> frame;
      {
        std::unique_lock lock(mu_);
        data_cv_.wait_for(lock, std::chrono::milliseconds(5),
                          [this] { return closed_ || !queue_.empty(); });
        if (closed_) return;
        // Newest frame that has no masks and was not requested yet.
        for (auto it = queue_.rbegin(); it != queue_.rend(); ++it)
          if (!(*it)->masks && requested_.insert((*it)->index).second) {
            frame = *it;
            break;
          }
      }
      if (!frame) {
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        continue;
      }
      const auto now = std::chrono::steady_clock::now();
      const auto earliest = last_request + std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
      if (now < earliest) std::this_thread::sleep_until(earliest);
      last_request = std::chrono::steady_clock::now();
      std::optional<std::vector<SemanticMask>> result;
      if (mask_source_) result = mask_source_->compute(*frame);
      std::this_thread::sleep_for(latency);
      {
        std::unique_lock lock(mu_);
        // Attach only while the frame is still queued.
        for (auto& f : queue_)
          if (f.get() == frame.get()) {
            if (result) f->masks = std::move(*result);
            break;
          }
      }
    }
  }

  CameraIntrinsics K_;
  PipelineConfig cfg_;
  std::shared_ptr<MaskSource> mask_source_;
  WorldState world_;

  std::deque<std::shared_ptr<Frame>> queue_;
  std::deque<ProcessingReport> reports_;
  bool closed_ = false;
  bool drain_ = false;
  bool processing_ = false;
  long submit_count_ = 0;

  // Sync-mode mask emulation.
  std::shared_ptr<Frame> pending_frame_;
  long pending_done_at_ = 0;
  long next_request_at_ = 0;

  // Async mode.
  std::mutex mu_;
  std::condition_variable data_cv_, space_cv_, done_cv_, report_cv_;
  std::set<int> requested_;
  std::exception_ptr error_;
  std::thread consumer_, mask_worker_;
};

}  // namespace moslam
