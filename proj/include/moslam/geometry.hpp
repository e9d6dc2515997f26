#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <vector>

#include "moslam/errors.hpp"
#include "moslam/image.hpp"

namespace moslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

using DepthMap = Image<float>;      // metres, 0 = invalid
using IntensityMap = Image<float>;  // grey values in [0, 255]
using VertexMap = Image<Eigen::Vector3f>;  // camera-frame points, z <= 0 = invalid
using NormalMap = Image<Eigen::Vector3f>;  // unit normals, zero vector = invalid

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
  double depth_scale = 5000.0;  // raw units per metre

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int w, int h,
                   double scale = 5000.0)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h), depth_scale(scale) {}

  CameraIntrinsics halved() const {
    return CameraIntrinsics(fx * 0.5, fy * 0.5, cx * 0.5, cy * 0.5, width / 2, height / 2,
                            depth_scale);
  }
};

inline Vec3 backproject(const Vec2& u, double d, const CameraIntrinsics& K) {
  if (!(d > 0.0) || !std::isfinite(d)) throw InvalidDepthError("backproject: invalid depth");
  return Vec3((u.x() - K.cx) * d / K.fx, (u.y() - K.cy) * d / K.fy, d);
}

inline Vec2 project(const Vec3& p, const CameraIntrinsics& K) {
  if (!(p.z() > 0.0)) throw BehindCameraError("project: point behind camera");
  return Vec2(K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy);
}

// Rigid body transform: x_out = R * x + t.
struct RigidPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  RigidPose() = default;
  RigidPose(const Mat3& R_, const Vec3& t_) : R(R_), t(t_) {}

  static RigidPose identity() { return RigidPose(); }

  Vec3 operator*(const Vec3& p) const { return R * p + t; }
  RigidPose operator*(const RigidPose& o) const { return RigidPose(R * o.R, R * o.t + t); }
  RigidPose inverse() const { return RigidPose(R.transpose(), -(R.transpose() * t)); }

  Eigen::Vector3f apply(const Eigen::Vector3f& p) const {
    return (R * p.cast<double>() + t).cast<float>();
  }
  Eigen::Vector3f rotate(const Eigen::Vector3f& n) const {
    return (R * n.cast<double>()).cast<float>();
  }
};

inline Mat3 skew(const Vec3& w) {
  Mat3 S;
  S << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return S;
}

// Twist layout: [omega; v] (rotation first, translation second).
inline RigidPose se3_exp(const Vec6& xi) {
  const Vec3 w = xi.head<3>();
  const Vec3 v = xi.tail<3>();
  const double theta = w.norm();
  Mat3 R, V;
  if (theta < 1e-8) {
    const Mat3 W = skew(w);
    R = Mat3::Identity() + W + 0.5 * W * W;
    V = Mat3::Identity() + 0.5 * W + W * W / 6.0;
  } else {
    const Mat3 W = skew(w);
    const double t2 = theta * theta;
    R = Mat3::Identity() + std::sin(theta) / theta * W + (1 - std::cos(theta)) / t2 * W * W;
    V = Mat3::Identity() + (1 - std::cos(theta)) / t2 * W +
        (theta - std::sin(theta)) / (t2 * theta) * W * W;
  }
  return RigidPose(R, V * v);
}

inline Vec6 se3_log(const RigidPose& T) {
  const double tr = T.R.trace();
  const double c = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  Vec3 w;
  if (theta < 1e-8) {
    w = 0.5 * Vec3(T.R(2, 1) - T.R(1, 2), T.R(0, 2) - T.R(2, 0), T.R(1, 0) - T.R(0, 1));
  } else if (theta > M_PI - 1e-6) {
    // Near pi: extract axis from R + I.
    Mat3 A = T.R + Mat3::Identity();
    int k;
    A.colwise().norm().maxCoeff(&k);
    Vec3 axis = A.col(k).normalized();
    w = theta * axis;
    // Fix sign against the off-diagonal part.
    Vec3 w_small(T.R(2, 1) - T.R(1, 2), T.R(0, 2) - T.R(2, 0), T.R(1, 0) - T.R(0, 1));
    if (w.dot(w_small) < 0) w = -w;
  } else {
    w = theta / (2 * std::sin(theta)) *
        Vec3(T.R(2, 1) - T.R(1, 2), T.R(0, 2) - T.R(2, 0), T.R(1, 0) - T.R(0, 1));
  }
  Mat3 Vinv;
  const double t2 = theta * theta;
  const Mat3 W = skew(w);
  if (theta < 1e-8) {
    Vinv = Mat3::Identity() - 0.5 * W + W * W / 12.0;
  } else {
    const double half = 0.5 * theta;
    const double cot = half / std::tan(half);
    Vinv = Mat3::Identity() - 0.5 * W + (1 - cot) / t2 * W * W;
  }
  Vec6 xi;
  xi.head<3>() = w;
  xi.tail<3>() = Vinv * T.t;
  return xi;
}

inline Eigen::Quaterniond to_quaternion(const RigidPose& T) { return Eigen::Quaterniond(T.R); }

// Closed-form rigid alignment (Horn) of source points onto target points.
inline RigidPose rigid_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  const size_t n = src.size();
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= double(n);
  mu_d /= double(n);
  Mat3 W = Mat3::Zero();
  for (size_t i = 0; i < n; ++i) W += (dst[i] - mu_d) * (src[i] - mu_s).transpose();
  Eigen::JacobiSVD<Mat3> svd(W, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1;
  const Mat3 R = svd.matrixU() * S * svd.matrixV().transpose();
  return RigidPose(R, mu_d - R * mu_s);
}

inline RigidPose pose_from_quaternion(const Vec3& t, const Eigen::Quaterniond& q) {
  return RigidPose(q.normalized().toRotationMatrix(), t);
}

}  // namespace moslam
