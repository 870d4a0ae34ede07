// Copyright 2026 The KVAF Toolkit Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kvaf/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace kvaf {

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return s;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const Mat3 k = skew(axis);
  return Mat3::Identity() + s * k + (1.0 - c) * (k * k);
}

Mat3 exp_so3(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    return Mat3::Identity() + skew(omega);
  }
  return axis_angle(omega / theta, theta);
}

namespace {

Mat3 rot_x(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

}  // namespace

Mat3 urdf_rpy(const Vec3& rpy) { return rot_z(rpy.z()) * rot_y(rpy.y()) * rot_x(rpy.x()); }

Mat3 rotation_from_rpy(const Vec3& rpy) {
  return rot_x(rpy.x()) * rot_y(rpy.y()) * rot_z(rpy.z());
}

Vec3 rpy_from_rotation(const Mat3& r) {
  const double cos_pitch = std::hypot(r(0, 0), r(0, 1));
  const double pitch = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  if (cos_pitch < 1e-9) {
    // Gimbal lock: roll and yaw act about the same axis.
    return {0.0, pitch, std::atan2(r(1, 0), r(1, 1))};
  }
  return {std::atan2(-r(1, 2), r(2, 2)), pitch, std::atan2(-r(0, 1), r(0, 0))};
}

double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool is_rotation(const Mat3& r, double tol) {
  return r.allFinite() && orthonormality_error(r) < tol && std::abs(r.determinant() - 1.0) < tol;
}

Mat3 project_to_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace kvaf
