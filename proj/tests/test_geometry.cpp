#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "moslam/maps.hpp"
#include "moslam/pyramid.hpp"
#include "test_scenes.hpp"

using namespace moslam;
using moslam::testing::test_intrinsics;

TEST_CASE("intensity conversion") {
  ColorMap c(3, 1);
  c.at(0, 0) = Rgb{255, 255, 255};
  c.at(1, 0) = Rgb{0, 0, 0};
  c.at(2, 0) = Rgb{100, 50, 200};
  const IntensityMap im = intensity_from_color(c);
  CHECK(im.at(0, 0) == 255.0f);
  CHECK(im.at(1, 0) == 0.0f);
  CHECK(im.at(2, 0) == 82.0f);  // 29.9 + 29.35 + 22.8 = 82.05
}

TEST_CASE("backproject and project") {
  const CameraIntrinsics K = test_intrinsics();
  const Vec3 p0 = backproject(Vec2(K.cx, K.cy), 1.0, K);
  CHECK(p0.isApprox(Vec3(0, 0, 1), 1e-12));
  const Vec3 p1 = backproject(Vec2(K.cx + K.fx, K.cy), 2.0, K);
  CHECK(p1.isApprox(Vec3(2, 0, 2), 1e-12));
  CHECK_THROWS_AS(backproject(Vec2(10, 10), 0.0, K), InvalidDepthError);

  CHECK(project(Vec3(0, 0, 1), K).isApprox(Vec2(K.cx, K.cy), 1e-12));
  CHECK_THROWS_AS(project(Vec3(0, 0, -1), K), BehindCameraError);

  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ux(0, K.width - 1), uy(0, K.height - 1), ud(0.3, 5.0);
  for (int i = 0; i < 100; ++i) {
    const Vec2 u(ux(rng), uy(rng));
    const double d = ud(rng);
    const Vec2 back = project(backproject(u, d, K), K);
    CHECK((back - u).norm() < 1e-6);
  }
}

TEST_CASE("se3 exponential map") {
  CHECK(se3_exp(Vec6::Zero()).R.isApprox(Mat3::Identity(), 1e-15));
  CHECK(se3_exp(Vec6::Zero()).t.norm() == 0.0);

  Vec6 xi;
  xi << 0, 0, M_PI / 2, 0, 0, 0;
  const Vec3 rotated = se3_exp(xi) * Vec3(1, 0, 0);
  CHECK((rotated - Vec3(0, 1, 0)).norm() < 1e-9);

  std::mt19937 rng(11);
  for (int i = 0; i < 100; ++i) {
    const Vec6 xi_r = moslam::testing::random_twist(rng, 1.0, 1.0);
    const RigidPose T = se3_exp(xi_r) * se3_exp((-xi_r).eval());
    CHECK((T.R - Mat3::Identity()).norm() < 1e-9);
    CHECK(T.t.norm() < 1e-9);
    // Output is always a proper rotation.
    const RigidPose E = se3_exp(xi_r);
    CHECK((E.R.transpose() * E.R - Mat3::Identity()).norm() < 1e-9);
    CHECK(E.R.determinant() == Catch::Approx(1.0).margin(1e-9));
    // log is the inverse of exp.
    CHECK((se3_log(E) - xi_r).norm() < 1e-8);
  }
}

TEST_CASE("normal estimation") {
  const CameraIntrinsics K = test_intrinsics();

  SECTION("fronto-parallel plane") {
    auto [vm, nm] = compute_normals(moslam::testing::constant_depth(K.width, K.height, 2.0f), K);
    for (int y = 1; y < K.height - 1; ++y)
      for (int x = 1; x < K.width - 1; ++x) {
        CHECK((nm.at(x, y) - Eigen::Vector3f(0, 0, -1)).norm() < 1e-6f);
        CHECK(std::abs(nm.at(x, y).norm() - 1.0f) < 1e-6f);
      }
  }

  SECTION("slanted plane") {
    // Plane z = z0 + s*X (X in metres): normal proportional to (-s, 0, 1),
    // camera-facing (s chosen so the slope is 45 degrees in space).
    DepthMap d(K.width, K.height);
    const double z0 = 2.0;
    for (int y = 0; y < K.height; ++y)
      for (int x = 0; x < K.width; ++x) {
        // Solve z = z0 + (x - cx) z / fx  =>  z (1 - (x-cx)/fx) = z0
        const double k = (x - K.cx) / K.fx;
        d.at(x, y) = static_cast<float>(z0 / (1.0 - k));
      }
    auto [vm, nm] = compute_normals(d, K);
    const Eigen::Vector3f expected = Eigen::Vector3f(-1, 0, 1).normalized() * -1.0f;
    const int x = K.width / 2, y = K.height / 2;
    CHECK((nm.at(x, y) - expected).norm() < 1e-3f);
  }

  SECTION("isolated valid pixel is invalid") {
    DepthMap d(9, 9, 0.0f);
    d.at(4, 4) = 1.0f;
    auto [vm, nm] = compute_normals(d, K);
    CHECK(nm.at(4, 4).norm() == 0.0f);
  }
}

TEST_CASE("pyramid construction") {
  const CameraIntrinsics K = test_intrinsics(640, 480);
  const DepthMap d = moslam::testing::ramp_depth(640, 480, 1.0f, 0.001f);
  IntensityMap im(640, 480, 100.0f);

  SECTION("levels=1 equals input") {
    const Pyramid p = build_pyramid(d, im, K, 1);
    REQUIRE(p.count() == 1);
    CHECK(p[0].depth == d);
    CHECK(p[0].intensity == im);
  }

  SECTION("four levels halve") {
    const Pyramid p = build_pyramid(d, im, K, 4);
    REQUIRE(p.count() == 4);
    const int ws[] = {640, 320, 160, 80}, hs[] = {480, 240, 120, 60};
    for (int k = 0; k < 4; ++k) {
      CHECK(p[k].depth.width() == ws[k]);
      CHECK(p[k].depth.height() == hs[k]);
    }
  }

  SECTION("depth block rule") {
    DepthMap d2(2, 2, 0.0f);
    d2.at(0, 0) = 1.0f;
    d2.at(1, 0) = 1.0f;
    d2.at(1, 1) = 5.0f;
    const DepthMap coarse = downsample_depth(d2);
    CHECK(coarse.at(0, 0) == 1.0f);
  }

  SECTION("size not divisible") {
    CHECK_THROWS_AS(build_pyramid(DepthMap(100, 90, 1.0f), IntensityMap(100, 90, 0.0f),
                                  test_intrinsics(100, 90), 4),
                    Error);
  }

  SECTION("scaled intrinsics reproject consistently") {
    const Pyramid p = build_pyramid(d, im, K, 4);
    const Vec3 pt(0.3, -0.2, 1.7);
    const Vec2 u0 = project(pt, p[0].intrinsics);
    for (int k = 1; k < 4; ++k) {
      const Vec2 uk = project(pt, p[k].intrinsics);
      CHECK((uk - u0 / double(1 << k)).norm() < 1e-6);
    }
  }
}
