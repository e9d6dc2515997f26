#include <catch2/catch_amalgamated.hpp>

#include "moslam/maskmerge.hpp"

using namespace moslam;

namespace {

constexpr int W = 80, H = 60;

GeometricLabeling make_geo(std::initializer_list<std::tuple<int, int, int, int, int>> rects,
                           int count) {
  GeometricLabeling g{Image<int32_t>(W, H, 0), count};
  for (auto [label, x0, y0, w, h] : rects)
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) g.labels.at(x, y) = label;
  return g;
}

SemanticMask make_mask(int id, int class_id, int x0, int y0, int w, int h, double score = 1.0) {
  SemanticMask m;
  m.id = id;
  m.class_id = class_id;
  m.score = score;
  m.mask = Image<uint8_t>(W, H, 0);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) m.mask.at(x, y) = 1;
  m.bbox_x = x0;
  m.bbox_y = y0;
  m.bbox_w = w;
  m.bbox_h = h;
  return m;
}

LabelImage projected_rect(uint8_t label, int x0, int y0, int w, int h,
                          uint8_t fill = kIgnoreLabel) {
  LabelImage p(W, H, fill);
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) p.at(x, y) = label;
  return p;
}

}  // namespace

TEST_CASE("map_components_to_masks") {
  MergeSettings s;

  SECTION("component inside a mask is assigned") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);
    const auto a = map_components_to_masks(geo, {make_mask(1, 5, 8, 8, 20, 20)}, s);
    CHECK(a[1] == 1);
  }

  SECTION("50% overlap stays unassigned at the 65% threshold") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);  // 100 px
    const auto a = map_components_to_masks(geo, {make_mask(1, 5, 15, 10, 5, 10)}, s);  // 50 px
    CHECK(a[1] == -1);
  }

  SECTION("maximal overlap wins among masks") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);
    const auto masks = std::vector<SemanticMask>{
        make_mask(1, 5, 10, 10, 7, 10),   // 70 px of the component
        make_mask(2, 5, 17, 10, 2, 10)};  // 20 px
    const auto a = map_components_to_masks(geo, masks, s);
    CHECK(a[1] == 1);
  }

  SECTION("equal overlaps tie-break to the lowest mask id") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);
    const auto masks = std::vector<SemanticMask>{make_mask(4, 5, 10, 10, 10, 10),
                                                 make_mask(2, 5, 10, 10, 10, 10)};
    const auto a = map_components_to_masks(geo, masks, s);
    CHECK(a[1] == 2);
  }

  SECTION("raising the threshold never assigns more components") {
    const auto geo = make_geo({{1, 0, 0, 10, 10}, {2, 20, 0, 10, 10}, {3, 40, 0, 10, 10}}, 3);
    const auto masks = std::vector<SemanticMask>{make_mask(1, 5, 0, 0, 30, 8),
                                                 make_mask(2, 5, 40, 0, 10, 7)};
    int prev = 4;
    for (double f : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      MergeSettings sf = s;
      sf.component_to_mask_overlap = f;
      const auto a = map_components_to_masks(geo, masks, sf);
      const int n = static_cast<int>(std::count_if(a.begin(), a.end(), [](int v) { return v >= 0; }));
      CHECK(n <= prev);
      prev = n;
    }
  }
}

TEST_CASE("map_masks_to_models") {
  MergeSettings s;
  ObjectModel bg, obj;
  bg.label = 0;
  bg.class_id = 0;
  obj.label = 2;
  obj.class_id = 41;  // "cup"
  const std::vector<const ObjectModel*> models{&bg, &obj};

  const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);  // 100 px
  const std::vector<int> comp_to_mask{-1, 7};           // component 1 -> mask 7

  SECTION("strong overlap with the right class associates") {
    auto masks = std::vector<SemanticMask>{make_mask(7, 41, 10, 10, 10, 10)};
    const auto proj = projected_rect(2, 10, 10, 8, 10);  // 80 of 100 px
    const auto mm = map_masks_to_models(geo, comp_to_mask, masks, proj, models, s);
    REQUIRE(mm.count(7) == 1);
    CHECK(mm.at(7) == 2);
  }

  SECTION("class mismatch blocks the association") {
    auto masks = std::vector<SemanticMask>{make_mask(7, 47, 10, 10, 10, 10)};
    const auto proj = projected_rect(2, 10, 10, 5, 10);  // 50%
    CHECK(map_masks_to_models(geo, comp_to_mask, masks, proj, models, s).empty());
  }

  SECTION("overlap at or below 5% is rejected") {
    auto masks = std::vector<SemanticMask>{make_mask(7, 41, 10, 10, 10, 10)};
    const auto p4 = projected_rect(2, 10, 10, 4, 1);  // 4 px of 100
    CHECK(map_masks_to_models(geo, comp_to_mask, masks, p4, models, s).empty());
    const auto p6 = projected_rect(2, 10, 10, 6, 1);  // 6 px > 5%
    CHECK(map_masks_to_models(geo, comp_to_mask, masks, p6, models, s).count(7) == 1);
  }
}

TEST_CASE("map_components_to_models") {
  MergeSettings s;

  SECTION("maskless component over the background projection") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);
    const std::vector<int> no_masks{-1, -1};
    const auto proj = projected_rect(0, 10, 10, 9, 10);  // 90%
    const auto a = map_components_to_models(geo, no_masks, proj, s);
    CHECK(a[1] == 0);
  }

  SECTION("60% maximal overlap stays unassigned") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);
    const auto proj = projected_rect(0, 10, 10, 6, 10);
    CHECK(map_components_to_models(geo, {-1, -1}, proj, s)[1] == -1);
  }

  SECTION("straddling two models at 50/45 stays unassigned") {
    const auto geo = make_geo({{1, 10, 10, 20, 5}}, 1);  // 100 px
    LabelImage proj(W, H, kIgnoreLabel);
    for (int y = 10; y < 15; ++y) {
      for (int x = 10; x < 20; ++x) proj.at(x, y) = 0;   // 50 px
      for (int x = 20; x < 29; ++x) proj.at(x, y) = 3;   // 45 px
    }
    CHECK(map_components_to_models(geo, {-1, -1}, proj, s)[1] == -1);
  }

  SECTION("components already mapped to a mask are skipped") {
    const auto geo = make_geo({{1, 10, 10, 10, 10}}, 1);
    const auto proj = projected_rect(0, 0, 0, W, H);
    CHECK(map_components_to_models(geo, {-1, 5}, proj, s)[1] == -1);
  }
}

TEST_CASE("compose_final_labeling") {
  MergeSettings s;

  SECTION("no masks, no models: everything is background") {
    const auto geo = make_geo({{1, 0, 0, W, H}}, 1);
    const auto out =
        compose_final_labeling(geo, {-1, -1}, {}, {-1, 0}, {}, s);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) CHECK(out.labels.at(x, y) == 0);
    CHECK(out.spawns.empty());
  }

  SECTION("person-class mask pixels become 255 and never spawn") {
    const auto geo = make_geo({{1, 0, 0, W, H}}, 1);
    auto person = make_mask(1, kPersonClassId, 20, 20, 30, 20, 0.99);
    const auto out = compose_final_labeling(geo, {-1, -1}, {}, {-1, 0}, {person}, s);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (person.mask.at(x, y))
          CHECK(out.labels.at(x, y) == kIgnoreLabel);
        else
          CHECK(out.labels.at(x, y) == 0);
      }
    CHECK(out.spawns.empty());
  }

  SECTION("unmatched large confident mask requests a spawn") {
    // Component under the mask occupies most of the frame (> 3000 px).
    const auto geo = make_geo({{1, 0, 0, 70, 55}}, 1);  // 3850 px
    auto mask = make_mask(3, 77, 0, 0, 70, 55, 0.9);    // "teddy bear"
    const std::vector<int> comp_to_mask{-1, 3};
    const auto out = compose_final_labeling(geo, comp_to_mask, {}, {-1, -1}, {mask}, s);
    REQUIRE(out.spawns.size() == 1);
    CHECK(out.spawns[0].class_id == 77);
    CHECK(out.spawns[0].score == 0.9);
    CHECK(out.spawns[0].pixels == 3850);
    int stencil_px = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (out.spawns[0].stencil.at(x, y)) {
          ++stencil_px;
          CHECK(mask.mask.at(x, y) == 1);
          CHECK(geo.labels.at(x, y) == 1);
        }
    CHECK(stencil_px == 3850);
  }

  SECTION("low score or too few pixels blocks spawning") {
    const auto geo = make_geo({{1, 0, 0, 70, 55}}, 1);
    auto weak = make_mask(3, 77, 0, 0, 70, 55, 0.5);
    CHECK(compose_final_labeling(geo, {-1, 3}, {}, {-1, -1}, {weak}, s).spawns.empty());
    const auto small_geo = make_geo({{1, 0, 0, 40, 40}}, 1);  // 1600 px
    auto small_mask = make_mask(3, 77, 0, 0, 40, 40, 0.9);
    CHECK(compose_final_labeling(small_geo, {-1, 3}, {}, {-1, -1}, {small_mask}, s)
              .spawns.empty());
  }

  SECTION("component atomicity and label domain") {
    const auto geo = make_geo({{1, 0, 0, 40, H}, {2, 45, 0, 30, H}}, 2);
    auto mask = make_mask(1, 41, 0, 0, 40, H);
    const std::vector<int> comp_to_mask{-1, 1, -1};
    const std::map<int, uint8_t> mask_to_model{{1, 2}};
    const std::vector<int> comp_to_model{-1, -1, 0};
    const auto out =
        compose_final_labeling(geo, comp_to_mask, mask_to_model, comp_to_model, {mask}, s);
    std::map<int32_t, std::set<uint8_t>> by_comp;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        CHECK((out.labels.at(x, y) == 0 || out.labels.at(x, y) == 2 ||
               out.labels.at(x, y) == kIgnoreLabel));
        if (geo.labels.at(x, y) > 0) by_comp[geo.labels.at(x, y)].insert(out.labels.at(x, y));
      }
    for (const auto& [c, labels] : by_comp) CHECK(labels.size() == 1);
    CHECK(by_comp[1] == std::set<uint8_t>{2});
    CHECK(by_comp[2] == std::set<uint8_t>{0});
  }
}

TEST_CASE("dilate_mask") {
  Image<uint8_t> m(11, 11, 0);
  m.at(5, 5) = 1;
  const auto d1 = dilate_mask(m, 1);
  CHECK(d1.at(5, 5) == 1);
  CHECK(d1.at(4, 5) == 1);
  CHECK(d1.at(5, 4) == 1);
  CHECK(d1.at(4, 4) == 0);  // 4-connectivity: no diagonal growth
  const auto d2 = dilate_mask(m, 2);
  CHECK(d2.at(3, 5) == 1);
  CHECK(d2.at(4, 4) == 1);
  int count = 0;
  for (auto v : d2) count += v;
  CHECK(count == 13);  // L1 ball of radius 2
}
