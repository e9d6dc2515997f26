#pragma once

#include <chrono>

#include "moslam/metrics.hpp"
#include "moslam/pipeline.hpp"
#include "moslam/synth.hpp"

namespace moslam {

struct RunOptions {
  std::string dataset;
  std::string masks;   // empty = null mask source
  std::string out;     // empty = keep results in memory only
  PipelineConfig config;
  bool save_labels = true;
  bool save_models = true;
  int max_frames = -1;
};

struct RunResult {
  Trajectory camera;                       // camera -> world per frame
  std::map<uint8_t, Trajectory> objects;   // model label -> world pose
  std::vector<ProcessingReport> reports;
  double fps = 0;
  int frames = 0;
};

inline Frame make_frame(const DatasetSequence& seq, int i) {
  Frame f;
  f.index = seq.frames[i].index;
  f.timestamp = seq.frames[i].timestamp;
  f.color = seq.load_color(i);
  f.depth = seq.load_depth(i);
  f.intensity = intensity_from_color(f.color);
  return f;
}

inline RunResult run_pipeline(const DatasetSequence& seq, const RunOptions& opt) {
  std::shared_ptr<MaskSource> source;
  if (!opt.masks.empty())
    source = std::make_shared<DirectoryMaskSource>(opt.masks);
  else
    source = std::make_shared<NullMaskSource>();

  Pipeline pipeline(seq.intrinsics, opt.config, source);
  RunResult result;
  const int n = opt.max_frames > 0
                    ? std::min<int>(opt.max_frames, static_cast<int>(seq.frames.size()))
                    : static_cast<int>(seq.frames.size());

  const fs::path out(opt.out);
  if (!opt.out.empty()) {
    fs::create_directories(out);
    if (opt.save_labels) fs::create_directories(out / "labels");
    if (opt.save_models) fs::create_directories(out / "models");
  }

  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) pipeline.submit_frame(make_frame(seq, i));
  pipeline.shutdown();
  const auto t1 = std::chrono::steady_clock::now();
  if (pipeline.error()) std::rethrow_exception(pipeline.error());

  while (auto rep = pipeline.next_processed()) {
    result.camera.add(rep->timestamp, rep->camera_pose);
    for (const ModelReport& mr : rep->models)
      if (mr.label != kBackgroundLabel) {
        Trajectory& tr = result.objects[mr.label];
        if (tr.empty() || rep->timestamp > tr.entries.back().timestamp)
          tr.add(rep->timestamp, mr.world_pose);
      }
    if (!opt.out.empty() && opt.save_labels)
      save_label_png(rep->labeling,
                     (out / "labels" / (std::to_string(rep->frame_index) + ".png")).string());
    result.reports.push_back(std::move(*rep));
  }
  result.frames = static_cast<int>(result.reports.size());
  const double secs = std::chrono::duration<double>(t1 - t0).count();
  result.fps = secs > 0 ? result.frames / secs : 0;

  if (!opt.out.empty()) {
    save_trajectory(result.camera, (out / "camera.txt").string());
    for (const auto& [label, traj] : result.objects)
      save_trajectory(traj, (out / ("object_" + std::to_string(label) + ".txt")).string());
    if (opt.save_models) {
      WorldState& world = pipeline.world();
      for (const auto& m : world.models)
        export_ply(*m, (out / "models" / ("model_" + std::to_string(m->label) + ".ply")).string());
    }
    nlohmann::json report;
    report["frames"] = result.frames;
    report["fps"] = result.fps;
    report["models"] = result.objects.size() + 1;
    nlohmann::json per_model = nlohmann::json::array();
    for (const auto& m : pipeline.world().models)
      per_model.push_back({{"label", m->label},
                           {"class_id", m->class_id},
                           {"surfels", m->surfels.size()}});
    report["model_details"] = per_model;
    std::ofstream rf(out / "report.json");
    rf << report.dump(2) << "\n";
    std::ofstream tf(out / "report.txt");
    tf << "frames " << result.frames << " count\n";
    tf << "fps " << result.fps << " hz\n";
    tf << "models " << result.objects.size() + 1 << " count\n";
  }
  return result;
}

}  // namespace moslam
