#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moslam/maskmerge.hpp"
#include "moslam/png_io.hpp"
#include "moslam/trajectory.hpp"

namespace moslam {

namespace fs = std::filesystem;

struct FrameRecord {
  int index = 0;
  double timestamp = 0;
  std::string color_path;
  std::string depth_path;
};

struct DatasetSequence {
  fs::path root;
  CameraIntrinsics intrinsics;
  std::vector<FrameRecord> frames;
  std::optional<Trajectory> groundtruth;                 // camera
  std::map<int, Trajectory> object_groundtruth;          // by object label
  bool has_gt_labels = false;

  ColorMap load_color(int i) const { return load_color_png((root / frames[i].color_path).string()); }
  DepthMap load_depth(int i) const {
    return load_depth_png16((root / frames[i].depth_path).string(), intrinsics.depth_scale);
  }
  Image<uint8_t> load_gt_labels(int i) const {
    return load_label_png((root / "gt_labels" / (std::to_string(frames[i].index) + ".png")).string());
  }
};

namespace dataio_detail {

// "timestamp path" listing with '#' comments.
inline std::vector<std::pair<double, std::string>> read_listing(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing file: " + path.string());
  std::vector<std::pair<double, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double ts;
    std::string p;
    if (!(ss >> ts >> p))
      throw FormatError(path.string() + ": malformed line " + std::to_string(lineno));
    out.emplace_back(ts, p);
  }
  return out;
}

}  // namespace dataio_detail

// TUM layout: rgb/, depth/ (16-bit PNG, metres = raw / depth_scale), rgb.txt,
// depth.txt, optionally groundtruth.txt. Colour and depth are associated by
// nearest timestamp; pairs further than 20 ms apart are dropped.
inline DatasetSequence load_tum_sequence(const std::string& path,
                                         const CameraIntrinsics& intrinsics) {
  DatasetSequence seq;
  seq.root = path;
  seq.intrinsics = intrinsics;
  const auto rgb = dataio_detail::read_listing(seq.root / "rgb.txt");
  const auto depth = dataio_detail::read_listing(seq.root / "depth.txt");
  size_t j = 0;
  int idx = 0;
  for (const auto& [ts, cpath] : rgb) {
    while (j + 1 < depth.size() &&
           std::abs(depth[j + 1].first - ts) <= std::abs(depth[j].first - ts))
      ++j;
    if (j >= depth.size() || std::abs(depth[j].first - ts) > 0.020) continue;
    seq.frames.push_back({idx++, ts, cpath, depth[j].second});
  }
  if (seq.frames.empty()) throw NoOverlapError("no associated colour/depth pairs in " + path);
  if (fs::exists(seq.root / "groundtruth.txt")) {
    Trajectory gt = load_trajectory((seq.root / "groundtruth.txt").string());
    if (!gt.empty()) seq.groundtruth = std::move(gt);
  }
  for (int label = 1; label < 255; ++label) {
    const fs::path p = seq.root / ("gt_object_" + std::to_string(label) + ".txt");
    if (!fs::exists(p)) break;
    seq.object_groundtruth[label] = load_trajectory(p.string());
  }
  seq.has_gt_labels = fs::exists(seq.root / "gt_labels");
  // Intrinsics sidecar written by the synthetic generator, if present.
  if (fs::exists(seq.root / "intrinsics.txt")) {
    std::ifstream in(seq.root / "intrinsics.txt");
    double fx, fy, cx, cy, scale;
    int w, h;
    if (in >> fx >> fy >> cx >> cy >> w >> h >> scale)
      seq.intrinsics = CameraIntrinsics(fx, fy, cx, cy, w, h, scale);
  }
  return seq;
}

// masks/<k>.png (8-bit indexed, 0 = none, j = instance j) plus
// masks/<k>.json with [{id, class_id, bbox:[x,y,w,h], score}].
inline std::vector<SemanticMask> load_frame_masks(const fs::path& mask_dir, int frame_index) {
  const fs::path png = mask_dir / (std::to_string(frame_index) + ".png");
  const fs::path json = mask_dir / (std::to_string(frame_index) + ".json");
  if (!fs::exists(png) || !fs::exists(json)) return {};
  const Image<uint8_t> indexed = load_label_png(png.string());
  std::ifstream in(json);
  nlohmann::json meta;
  in >> meta;
  std::vector<SemanticMask> masks;
  for (const auto& entry : meta) {
    SemanticMask m;
    m.id = entry.at("id").get<int>();
    m.class_id = entry.at("class_id").get<int>();
    if (m.class_id < 0 || m.class_id > 80)
      throw FormatError("mask class_id out of range [0,80]: " + std::to_string(m.class_id) +
                        " in " + json.string());
    const auto& b = entry.at("bbox");
    m.bbox_x = b.at(0).get<int>();
    m.bbox_y = b.at(1).get<int>();
    m.bbox_w = b.at(2).get<int>();
    m.bbox_h = b.at(3).get<int>();
    m.score = entry.value("score", 1.0);
    m.mask = Image<uint8_t>(indexed.width(), indexed.height(), 0);
    int count = 0;
    for (int y = 0; y < indexed.height(); ++y)
      for (int x = 0; x < indexed.width(); ++x)
        if (indexed.at(x, y) == m.id) {
          if (x < m.bbox_x || x >= m.bbox_x + m.bbox_w || y < m.bbox_y || y >= m.bbox_y + m.bbox_h)
            throw FormatError("mask id " + std::to_string(m.id) +
                              " has pixels outside its bbox in " + png.string());
          m.mask.at(x, y) = 1;
          ++count;
        }
    if (count == 0)
      throw FormatError("mask id " + std::to_string(m.id) + " from " + json.string() +
                        " has no pixels in " + png.string());
    masks.push_back(std::move(m));
  }
  // Every non-zero PNG index must be described in the JSON.
  for (int y = 0; y < indexed.height(); ++y)
    for (int x = 0; x < indexed.width(); ++x) {
      const uint8_t v = indexed.at(x, y);
      if (v == 0) continue;
      bool found = false;
      for (const auto& m : masks) found = found || m.id == v;
      if (!found)
        throw FormatError("PNG index " + std::to_string(v) + " has no JSON entry in " +
                          json.string());
    }
  return masks;
}

inline std::map<int, std::vector<SemanticMask>> load_mask_directory(const std::string& path,
                                                                    const DatasetSequence& seq) {
  std::map<int, std::vector<SemanticMask>> out;
  for (const FrameRecord& f : seq.frames) {
    auto masks = load_frame_masks(path, f.index);
    if (!masks.empty()) out[f.index] = std::move(masks);
  }
  return out;
}

}  // namespace moslam
