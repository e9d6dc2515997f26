#pragma once

#include <map>
#include <set>
#include <vector>

#include "moslam/geomseg.hpp"
#include "moslam/surfel_map.hpp"

namespace moslam {

constexpr int kPersonClassId = 1;

struct SemanticMask {
  int id = 0;  // instance id, 1..N
  Image<uint8_t> mask;  // 0/1
  int bbox_x = 0, bbox_y = 0, bbox_w = 0, bbox_h = 0;
  int class_id = 0;  // 1..80
  double score = 1.0;
};

struct MergeSettings {
  double component_to_mask_overlap = 0.65;
  double mask_to_model_overlap = 0.05;
  double component_to_model_overlap = 0.65;
  std::set<int> ignore_classes = {kPersonClassId};
  int new_model_min_pixels = 3000;
  double new_model_min_score = 0.75;
  bool unassigned_to_background = true;
};

// Request to create a model for a mask that matched no existing model.
struct SpawnRequest {
  int class_id = 0;
  double score = 0;
  Image<uint8_t> stencil;  // 1 = fuse into the new model
  int pixels = 0;
};

struct MergedLabeling {
  LabelImage labels;  // model labels, 255 = ignore
  std::vector<SpawnRequest> spawns;
};

// 4-connected morphological dilation, `iterations` pixels.
inline Image<uint8_t> dilate_mask(const Image<uint8_t>& m, int iterations) {
  Image<uint8_t> cur = m;
  for (int it = 0; it < iterations; ++it) {
    Image<uint8_t> next = cur;
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x) {
        if (cur.at(x, y)) continue;
        for (auto [dx, dy] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}})
          if (cur.inside(x + dx, y + dy) && cur.at(x + dx, y + dy)) {
            next.at(x, y) = 1;
            break;
          }
      }
    cur = std::move(next);
  }
  return cur;
}

namespace merge_detail {

// Pixel counts of each geometric component, restricted to valid depth.
inline std::vector<int> component_sizes(const GeometricLabeling& geo, const DepthMap* depth) {
  std::vector<int> sizes(geo.count + 1, 0);
  for (int y = 0; y < geo.labels.height(); ++y)
    for (int x = 0; x < geo.labels.width(); ++x) {
      if (depth && !valid_depth(depth->at(x, y))) continue;
      ++sizes[geo.labels.at(x, y)];
    }
  return sizes;
}

}  // namespace merge_detail

// Component -> mask: maximal overlap, assigned only above the 65% threshold.
// Ties break toward the lower mask id. Index 0 of the result is unused;
// entry i is the mask id assigned to component i, or -1.
inline std::vector<int> map_components_to_masks(const GeometricLabeling& geo,
                                                const std::vector<SemanticMask>& masks,
                                                const MergeSettings& s = {},
                                                const DepthMap* depth = nullptr) {
  const auto sizes = merge_detail::component_sizes(geo, depth);
  // overlap[i][m] = |C_i  mask_m|
  std::vector<std::map<int, int>> overlap(geo.count + 1);
  for (const SemanticMask& m : masks)
    for (int y = 0; y < geo.labels.height(); ++y)
      for (int x = 0; x < geo.labels.width(); ++x) {
        if (!m.mask.at(x, y)) continue;
        if (depth && !valid_depth(depth->at(x, y))) continue;
        const int32_t c = geo.labels.at(x, y);
        if (c > 0) ++overlap[c][m.id];
      }
  std::vector<int> assigned(geo.count + 1, -1);
  for (int c = 1; c <= geo.count; ++c) {
    int best = -1, best_n = 0;
    for (const auto& [mid, n] : overlap[c])
      if (n > best_n || (n == best_n && best >= 0 && mid < best)) {
        best = mid;
        best_n = n;
      }
    if (best >= 0 && best_n > s.component_to_mask_overlap * sizes[c]) assigned[c] = best;
  }
  return assigned;
}

// Mask -> model: overlap between the mask's grouped components and each
// model's projected labels; requires > 5% overlap AND a class match.
inline std::map<int, uint8_t> map_masks_to_models(
    const GeometricLabeling& geo, const std::vector<int>& comp_to_mask,
    const std::vector<SemanticMask>& masks, const LabelImage& projected,
    const std::vector<const ObjectModel*>& models, const MergeSettings& s = {},
    const DepthMap* depth = nullptr) {
  std::map<int, int> mask_class;
  for (const SemanticMask& m : masks) mask_class[m.id] = m.class_id;
  // Grouped region per mask: union of components assigned to it.
  std::map<int, int> region_size;
  std::map<int, std::map<uint8_t, int>> overlap;  // mask id -> model label -> count
  for (int y = 0; y < geo.labels.height(); ++y)
    for (int x = 0; x < geo.labels.width(); ++x) {
      const int32_t c = geo.labels.at(x, y);
      if (c <= 0 || comp_to_mask[c] < 0) continue;
      if (depth && !valid_depth(depth->at(x, y))) continue;
      const int mid = comp_to_mask[c];
      ++region_size[mid];
      const uint8_t lab = projected.at(x, y);
      if (lab != kIgnoreLabel) ++overlap[mid][lab];
    }
  std::map<int, uint8_t> result;
  for (const auto& [mid, size] : region_size) {
    int best = -1, best_n = 0;
    for (const auto& [lab, n] : overlap[mid]) {
      const ObjectModel* model = nullptr;
      for (const ObjectModel* mp : models)
        if (mp->label == lab) model = mp;
      if (!model || model->class_id != mask_class[mid]) continue;
      if (n > best_n || (n == best_n && best >= 0 && lab < best)) {
        best = lab;
        best_n = n;
      }
    }
    if (best >= 0 && best_n > s.mask_to_model_overlap * size)
      result[mid] = static_cast<uint8_t>(best);
  }
  return result;
}

// Direct component -> model mapping for components without a mask (and the
// only path on maskless frames). 65% threshold on the maximal overlap.
inline std::vector<int> map_components_to_models(const GeometricLabeling& geo,
                                                 const std::vector<int>& comp_to_mask,
                                                 const LabelImage& projected,
                                                 const MergeSettings& s = {},
                                                 const DepthMap* depth = nullptr) {
  const auto sizes = merge_detail::component_sizes(geo, depth);
  std::vector<std::map<uint8_t, int>> overlap(geo.count + 1);
  for (int y = 0; y < geo.labels.height(); ++y)
    for (int x = 0; x < geo.labels.width(); ++x) {
      const int32_t c = geo.labels.at(x, y);
      if (c <= 0 || comp_to_mask[c] >= 0) continue;
      if (depth && !valid_depth(depth->at(x, y))) continue;
      const uint8_t lab = projected.at(x, y);
      if (lab != kIgnoreLabel) ++overlap[c][lab];
    }
  std::vector<int> assigned(geo.count + 1, -1);
  for (int c = 1; c <= geo.count; ++c) {
    if (comp_to_mask[c] >= 0) continue;
    int best = -1, best_n = 0;
    for (const auto& [lab, n] : overlap[c])
      if (n > best_n || (n == best_n && best >= 0 && lab < best)) {
        best = lab;
        best_n = n;
      }
    if (best >= 0 && best_n > s.component_to_model_overlap * sizes[c]) assigned[c] = best;
  }
  return assigned;
}

// Final per-pixel labeling plus spawn requests for unmatched masks.
inline MergedLabeling compose_final_labeling(const GeometricLabeling& geo,
                                             const std::vector<int>& comp_to_mask,
                                             const std::map<int, uint8_t>& mask_to_model,
                                             const std::vector<int>& comp_to_model,
                                             const std::vector<SemanticMask>& masks,
                                             const MergeSettings& s = {},
                                             const DepthMap* depth = nullptr) {
  const int w = geo.labels.width(), h = geo.labels.height();
  MergedLabeling out;
  out.labels = LabelImage(w, h, kBackgroundLabel);

  std::map<int, const SemanticMask*> mask_by_id;
  for (const SemanticMask& m : masks) mask_by_id[m.id] = &m;

  // Masks with no model: candidates for spawning (unless ignored).
  std::map<int, Image<uint8_t>> spawn_stencils;
  std::map<int, int> spawn_sizes;
  for (const SemanticMask& m : masks) {
    if (s.ignore_classes.count(m.class_id) || mask_to_model.count(m.id)) continue;
    if (m.score < s.new_model_min_score) continue;
    spawn_stencils.emplace(m.id, Image<uint8_t>(w, h, 0));
    spawn_sizes[m.id] = 0;
  }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int32_t c = geo.labels.at(x, y);
      const int mid = c > 0 ? comp_to_mask[c] : -1;
      const SemanticMask* m = mid >= 0 ? mask_by_id[mid] : nullptr;
      // Ignore classes win over everything else on their mask pixels.
      bool ignored = false;
      for (const SemanticMask& im : masks)
        if (s.ignore_classes.count(im.class_id) && im.mask.at(x, y)) {
          out.labels.at(x, y) = kIgnoreLabel;
          ignored = true;
          break;
        }
      if (ignored) continue;
      if (m) {
        if (s.ignore_classes.count(m->class_id)) {
          out.labels.at(x, y) = kIgnoreLabel;
        } else if (auto it = mask_to_model.find(mid); it != mask_to_model.end()) {
          out.labels.at(x, y) = it->second;
        } else if (auto st = spawn_stencils.find(mid); st != spawn_stencils.end()) {
          st->second.at(x, y) = 1;
          ++spawn_sizes[mid];
        }
        continue;
      }
      if (c > 0 && comp_to_model[c] >= 0) {
        out.labels.at(x, y) = static_cast<uint8_t>(comp_to_model[c]);
        continue;
      }
      // Unassigned component or edge/too-small pixel: background by default.
      if (c > 0 && !s.unassigned_to_background && depth && valid_depth(depth->at(x, y)))
        out.labels.at(x, y) = kIgnoreLabel;
    }

  for (auto& [mid, stencil] : spawn_stencils) {
    if (spawn_sizes[mid] < s.new_model_min_pixels) continue;
    SpawnRequest req;
    req.class_id = mask_by_id[mid]->class_id;
    req.score = mask_by_id[mid]->score;
    req.stencil = std::move(stencil);
    req.pixels = spawn_sizes[mid];
    out.spawns.push_back(std::move(req));
  }
  return out;
}

}  // namespace moslam
