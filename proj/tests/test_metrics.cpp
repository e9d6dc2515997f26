#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "moslam/metrics.hpp"
#include "test_scenes.hpp"

using namespace moslam;

namespace {

Trajectory wiggly_trajectory(int n, double dt = 1.0 / 30.0, unsigned seed = 11) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    RigidPose p;
    p.R = se3_exp((Vec6() << 0.02 * u(rng), 0.02 * u(rng), 0.02 * u(rng), 0, 0, 0).finished()).R;
    p.t = Vec3(0.3 * std::sin(0.1 * i), 0.2 * std::cos(0.07 * i), 0.01 * i) +
          0.01 * Vec3(u(rng), u(rng), u(rng));
    t.add(i * dt, p);
  }
  return t;
}

Trajectory transformed(const Trajectory& in, const RigidPose& g) {
  Trajectory out;
  for (const auto& e : in.entries) out.add(e.timestamp, g * e.pose);
  return out;
}

RigidPose some_transform() {
  RigidPose g = se3_exp((Vec6() << 0.4, -0.2, 0.7, 0, 0, 0).finished());
  g.t = Vec3(1.3, -0.5, 2.0);
  return g;
}

}  // namespace

TEST_CASE("ate_rmse examples") {
  const Trajectory t = wiggly_trajectory(200);

  CHECK(ate_rmse(t, t) == Catch::Approx(0.0).margin(1e-9));

  SECTION("constant translation offset vanishes after alignment") {
    Trajectory shifted;
    for (const auto& e : t.entries)
      shifted.add(e.timestamp, RigidPose{e.pose.R, e.pose.t + Vec3(0.7, -0.2, 1.1)});
    CHECK(ate_rmse(shifted, t) == Catch::Approx(0.0).margin(1e-9));
  }

  SECTION("global rigid pre-transform vanishes after alignment") {
    CHECK(ate_rmse(transformed(t, some_transform()), t) == Catch::Approx(0.0).margin(1e-9));
  }

  SECTION("fixed-magnitude radial noise gives RMSE = d") {
    const double d = 0.02;
    const Trajectory big = wiggly_trajectory(1000);
    std::mt19937 rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Trajectory noisy;
    for (const auto& e : big.entries) {
      Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
      noisy.add(e.timestamp, RigidPose{e.pose.R, e.pose.t + d * dir.normalized()});
    }
    CHECK(ate_rmse(noisy, big) == Catch::Approx(d).epsilon(0.02));
  }

  SECTION("no temporal overlap throws") {
    Trajectory late;
    for (const auto& e : t.entries) late.add(e.timestamp + 100.0, e.pose);
    CHECK_THROWS_AS(ate_rmse(late, t), NoOverlapError);
  }
}

TEST_CASE("rpe_rmse examples") {
  const Trajectory t = wiggly_trajectory(120);

  SECTION("identical trajectories") {
    const RpeResult r = rpe_rmse(t, t, 1.0);
    CHECK(r.translational == Catch::Approx(0.0).margin(1e-9));
    CHECK(r.rotational == Catch::Approx(0.0).margin(1e-5));
  }

  SECTION("global rigid transform of either trajectory cancels") {
    const RigidPose g = some_transform();
    for (const RpeResult& r : {rpe_rmse(transformed(t, g), t, 1.0),
                               rpe_rmse(t, transformed(t, g), 1.0)}) {
      CHECK(r.translational == Catch::Approx(0.0).margin(1e-9));
      CHECK(r.rotational == Catch::Approx(0.0).margin(1e-5));
    }
  }

  SECTION("constant drift of 1 cm per second") {
    Trajectory truth, est;
    for (int i = 0; i < 60; ++i) {
      truth.add(i * 0.1, RigidPose{});
      est.add(i * 0.1, RigidPose{Mat3::Identity(), Vec3(0.01 * (i * 0.1), 0, 0)});
    }
    const RpeResult r = rpe_rmse(est, truth, 1.0);
    CHECK(r.translational == Catch::Approx(0.01).epsilon(1e-6));
    CHECK(r.rotational == Catch::Approx(0.0).margin(1e-5));
  }

  SECTION("no pair at the requested delta throws") {
    Trajectory two;
    two.add(0.0, RigidPose{});
    two.add(0.1, RigidPose{});
    CHECK_THROWS_AS(rpe_rmse(two, two, 5.0), NoOverlapError);
  }
}

TEST_CASE("trajectory association window") {
  Trajectory est, truth;
  est.add(0.000, RigidPose{});
  est.add(1.000, RigidPose{});
  est.add(2.000, RigidPose{});
  truth.add(0.015, RigidPose{});   // within 20 ms
  truth.add(1.025, RigidPose{});   // outside
  truth.add(2.019, RigidPose{});   // just inside the window
  const auto m = match_trajectories(est, truth);
  REQUIRE(m.size() == 2);
  CHECK(m[0].first->timestamp == 0.0);
  CHECK(m[1].first->timestamp == 2.0);
}

TEST_CASE("label IoU") {
  const int w = 24, h = 16;
  Image<uint8_t> gt(w, h, 0);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) gt.at(x, y) = 7;

  CHECK(label_iou(gt, gt, 7) == 1.0);

  SECTION("disjoint non-empty masks") {
    Image<uint8_t> est(w, h, 0);
    for (int y = 0; y < 3; ++y)
      for (int x = 14; x < 20; ++x) est.at(x, y) = 7;
    CHECK(label_iou(est, gt, 7) == 0.0);
  }

  SECTION("superset with 1.5x the area gives 2/3") {
    Image<uint8_t> est = gt;
    int extra = 0;
    for (int y = 4; extra < 32 && y < 12; ++y)
      for (int x = 12; extra < 32 && x < 16; ++x, ++extra) est.at(x, y) = 7;
    REQUIRE(extra == 32);  // |est| = 96 = 1.5 * 64
    CHECK(label_iou(est, gt, 7) == Catch::Approx(2.0 / 3.0).margin(1e-12));
  }

  SECTION("both empty counts as 1; symmetry; relabel invariance") {
    Image<uint8_t> est(w, h, 0);
    CHECK(label_iou(est, est, 7) == 1.0);
    for (int x = 0; x < 10; ++x) est.at(x, 8) = 7;
    CHECK(label_iou(est, gt, 7) == label_iou(gt, est, 7));
    Image<uint8_t> relabeled = est;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (relabeled.at(x, y) == 0) relabeled.at(x, y) = 99;
    CHECK(label_iou(relabeled, gt, 7) == label_iou(est, gt, 7));
  }

  SECTION("iou_series runs per frame") {
    const auto series = iou_series({gt, Image<uint8_t>(w, h, 0)},
                                   {gt, Image<uint8_t>(w, h, 0)}, 7);
    REQUIRE(series.size() == 2);
    CHECK(series[0] == 1.0);
    CHECK(series[1] == 1.0);
  }
}

TEST_CASE("trajectory file round trip") {
  const Trajectory t = wiggly_trajectory(50);
  const std::string path = "/tmp/moslam_test_traj.txt";
  save_trajectory(t, path);
  const Trajectory back = load_trajectory(path);
  REQUIRE(back.size() == t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    CHECK(back.entries[i].timestamp == Catch::Approx(t.entries[i].timestamp).margin(1e-8));
    CHECK((back.entries[i].pose.t - t.entries[i].pose.t).norm() < 1e-7);
    CHECK((back.entries[i].pose.R - t.entries[i].pose.R).norm() < 1e-6);
  }
  CHECK(ate_rmse(back, t) < 1e-7);
}
