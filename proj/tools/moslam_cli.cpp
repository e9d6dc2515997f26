// Command-line driver: run the SLAM pipeline, generate synthetic datasets,
// evaluate trajectories, and debug single-frame segmentation.

#include <CLI11.hpp>
#include <iostream>

#include "moslam/runner.hpp"

using namespace moslam;

namespace {

void apply_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  in >> j;
  cfg.queue_capacity = j.value("queue_capacity", cfg.queue_capacity);
  cfg.frame_rate = j.value("frame_rate", cfg.frame_rate);
  cfg.mask_latency_ms = j.value("mask_latency_ms", cfg.mask_latency_ms);
  cfg.mask_min_period_ms = j.value("mask_min_period_ms", cfg.mask_min_period_ms);
  cfg.synchronous = j.value("synchronous", cfg.synchronous);
  cfg.static_residual_gate = j.value("static_residual_gate", cfg.static_residual_gate);
  cfg.static_dynamic_fraction = j.value("static_dynamic_fraction", cfg.static_dynamic_fraction);
  cfg.touch_radius_px = j.value("touch_radius_px", cfg.touch_radius_px);
  if (j.contains("tracking")) {
    const auto& t = j["tracking"];
    cfg.tracking.lambda = t.value("lambda", cfg.tracking.lambda);
    cfg.tracking.levels = t.value("levels", cfg.tracking.levels);
    cfg.tracking.icp_dist_gate = t.value("icp_dist_gate", cfg.tracking.icp_dist_gate);
    cfg.tracking.icp_angle_gate_deg = t.value("icp_angle_gate_deg", cfg.tracking.icp_angle_gate_deg);
    cfg.tracking.min_valid_residuals = t.value("min_valid_residuals", cfg.tracking.min_valid_residuals);
  }
  if (j.contains("fusion")) {
    const auto& f = j["fusion"];
    cfg.fusion.dist_gate = f.value("dist_gate", cfg.fusion.dist_gate);
    cfg.fusion.angle_gate_deg = f.value("angle_gate_deg", cfg.fusion.angle_gate_deg);
    cfg.fusion.stable_weight = f.value("stable_weight", cfg.fusion.stable_weight);
    cfg.fusion.unstable_ttl = f.value("unstable_ttl", cfg.fusion.unstable_ttl);
  }
  if (j.contains("geomseg")) {
    const auto& g = j["geomseg"];
    cfg.geomseg.tau = g.value("tau", cfg.geomseg.tau);
    cfg.geomseg.lambda_hat = g.value("lambda_hat", cfg.geomseg.lambda_hat);
    cfg.geomseg.min_component_size = g.value("min_component_size", cfg.geomseg.min_component_size);
  }
  if (j.contains("merge")) {
    const auto& m = j["merge"];
    cfg.merge.component_to_mask_overlap =
        m.value("component_to_mask_overlap", cfg.merge.component_to_mask_overlap);
    cfg.merge.mask_to_model_overlap =
        m.value("mask_to_model_overlap", cfg.merge.mask_to_model_overlap);
    cfg.merge.component_to_model_overlap =
        m.value("component_to_model_overlap", cfg.merge.component_to_model_overlap);
    cfg.merge.new_model_min_pixels = m.value("new_model_min_pixels", cfg.merge.new_model_min_pixels);
    cfg.merge.new_model_min_score = m.value("new_model_min_score", cfg.merge.new_model_min_score);
  }
}

int cmd_run(const std::string& dataset, const std::string& masks, const std::string& outdir,
            const std::string& config_path, bool sync, int queue, double mask_rate_hz,
            bool no_photometric, double fx, double fy, double cx, double cy, int width,
            int height) {
  RunOptions opt;
  opt.dataset = dataset;
  opt.masks = masks;
  opt.out = outdir;
  if (!config_path.empty()) apply_config_file(opt.config, config_path);
  opt.config.synchronous = sync || opt.config.synchronous;
  if (queue > 0) opt.config.queue_capacity = queue;
  if (mask_rate_hz > 0) {
    opt.config.mask_min_period_ms = 1000.0 / mask_rate_hz;
    opt.config.mask_latency_ms = 1000.0 / mask_rate_hz;
  }
  if (no_photometric) opt.config.tracking.lambda = 0.0;
  CameraIntrinsics K(fx, fy, cx, cy, width, height);
  const DatasetSequence seq = load_tum_sequence(dataset, K);
  const RunResult result = run_pipeline(seq, opt);
  std::cout << "processed " << result.frames << " frames at " << result.fps << " fps, "
            << result.objects.size() + 1 << " models\n";
  return 0;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, double rpe_delta,
             const std::string& est_labels, const std::string& gt_labels, int object_label,
             int frames) {
  if (!est_path.empty() && !gt_path.empty()) {
    const Trajectory est = load_trajectory(est_path);
    const Trajectory gt = load_trajectory(gt_path);
    const double ate = ate_rmse(est, gt);
    std::cout << "ate_rmse " << ate << " m\n";
    try {
      const RpeResult rpe = rpe_rmse(est, gt, rpe_delta);
      std::cout << "rpe_trans_rmse " << rpe.translational << " m/s\n";
      std::cout << "rpe_rot_rmse " << rpe.rotational << " deg/s\n";
    } catch (const NoOverlapError&) {
      std::cout << "rpe_trans_rmse nan m/s (trajectory shorter than delta)\n";
    }
  }
  if (!est_labels.empty() && !gt_labels.empty()) {
    double sum = 0;
    int count = 0;
    for (int k = 0; k < frames; ++k) {
      const fs::path e = fs::path(est_labels) / (std::to_string(k) + ".png");
      const fs::path g = fs::path(gt_labels) / (std::to_string(k) + ".png");
      if (!fs::exists(e) || !fs::exists(g)) continue;
      const double iou = label_iou(load_label_png(e.string()), load_label_png(g.string()),
                                   static_cast<uint8_t>(object_label));
      std::cout << "iou[" << k << "] " << iou << "\n";
      sum += iou;
      ++count;
    }
    if (count > 0) std::cout << "iou_mean " << sum / count << " ratio\n";
  }
  return 0;
}

int cmd_segment(const std::string& dataset, int frame_index, const std::string& outdir,
                double fx, double fy, double cx, double cy, int width, int height) {
  CameraIntrinsics K(fx, fy, cx, cy, width, height);
  const DatasetSequence seq = load_tum_sequence(dataset, K);
  if (frame_index < 0 || frame_index >= static_cast<int>(seq.frames.size()))
    throw Error("frame index out of range");
  const DepthMap depth = seq.load_depth(frame_index);
  auto [vm, nm] = compute_normals(depth, seq.intrinsics);
  const GeomSegSettings gs;
  const EdgeMap em = edginess(vm, nm, gs);
  const GeometricLabeling geo = connected_components(em, gs);
  fs::create_directories(outdir);
  Image<uint8_t> edges(em.is_edge.width(), em.is_edge.height(), 0);
  for (int y = 0; y < edges.height(); ++y)
    for (int x = 0; x < edges.width(); ++x) edges.at(x, y) = em.is_edge.at(x, y) ? 255 : 0;
  save_label_png(edges, (fs::path(outdir) / "edges.png").string());
  Image<uint8_t> labels(geo.labels.width(), geo.labels.height(), 0);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x)
      labels.at(x, y) = static_cast<uint8_t>(std::min<int32_t>(geo.labels.at(x, y), 254));
  save_label_png(labels, (fs::path(outdir) / "components.png").string());
  std::cout << "components " << geo.count << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-object dense RGBD SLAM"};
  app.require_subcommand(1);

  // run
  std::string dataset, masks, outdir, config_path;
  bool sync = false, no_photometric = false;
  int queue = 0;
  double mask_rate_hz = 0;
  double fx = 525, fy = 525, cx = 319.5, cy = 239.5;
  int width = 640, height = 480;
  auto* run = app.add_subcommand("run", "Run the SLAM pipeline on a dataset");
  run->add_option("--dataset", dataset, "TUM-layout dataset directory")->required();
  run->add_option("--masks", masks, "Directory with per-frame semantic masks");
  run->add_option("--out", outdir, "Output directory")->required();
  run->add_option("--config", config_path, "Pipeline settings file (JSON)");
  run->add_flag("--sync", sync, "Deterministic synchronous mode");
  run->add_option("--queue", queue, "Frame queue capacity");
  run->add_option("--mask-rate-hz", mask_rate_hz, "Emulated mask source rate");
  run->add_flag("--no-photometric", no_photometric, "Disable the photometric term (lambda = 0)");
  run->add_option("--fx", fx);
  run->add_option("--fy", fy);
  run->add_option("--cx", cx);
  run->add_option("--cy", cy);
  run->add_option("--width", width);
  run->add_option("--height", height);

  // synth
  std::string script_path, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset from a scene script");
  synth->add_option("--script", script_path, "Scene script file")->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // eval
  std::string est_path, gt_path, est_labels, gt_labels;
  double rpe_delta = 1.0;
  int object_label = 1, eval_frames = 100000;
  auto* eval = app.add_subcommand("eval", "Trajectory and labeling metrics");
  eval->add_option("--est", est_path, "Estimated trajectory (TUM format)");
  eval->add_option("--gt", gt_path, "Ground-truth trajectory (TUM format)");
  eval->add_option("--rpe-delta", rpe_delta, "RPE interval in seconds");
  eval->add_option("--est-labels", est_labels, "Directory of estimated label PNGs");
  eval->add_option("--gt-labels", gt_labels, "Directory of ground-truth label PNGs");
  eval->add_option("--object-label", object_label, "Object label for IoU");
  eval->add_option("--frames", eval_frames, "Number of label frames to scan");

  // segment
  std::string seg_dataset, seg_out;
  int seg_frame = 0;
  auto* segment = app.add_subcommand("segment", "Geometric segmentation of one frame");
  segment->add_option("--dataset", seg_dataset)->required();
  segment->add_option("--frame", seg_frame);
  segment->add_option("--out", seg_out)->required();
  segment->add_option("--fx", fx);
  segment->add_option("--fy", fy);
  segment->add_option("--cx", cx);
  segment->add_option("--cy", cy);
  segment->add_option("--width", width);
  segment->add_option("--height", height);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(dataset, masks, outdir, config_path, sync, queue, mask_rate_hz,
                     no_photometric, fx, fy, cx, cy, width, height);
    if (synth->parsed()) {
      generate_synthetic_sequence(load_scene_script(script_path), synth_out);
      std::cout << "wrote " << synth_out << "\n";
      return 0;
    }
    if (eval->parsed())
      return cmd_eval(est_path, gt_path, rpe_delta, est_labels, gt_labels, object_label,
                      eval_frames);
    if (segment->parsed())
      return cmd_segment(seg_dataset, seg_frame, seg_out, fx, fy, cx, cy, width, height);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
