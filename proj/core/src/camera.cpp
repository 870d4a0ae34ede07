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

#include "kvaf/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kvaf/error.hpp"

namespace kvaf {

void CameraModel::validate() const {
  if (!K.allFinite() || !E.allFinite()) throw ValidationError("camera matrices must be finite");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw ValidationError("intrinsic matrix must be upper triangular");
  }
  if (K(2, 2) != 1.0) throw ValidationError("intrinsic matrix must have K[2][2] = 1");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0)) throw ValidationError("focal lengths must be positive");
  if (!is_rotation(E.topLeftCorner<3, 3>(), 1e-9)) {
    throw ValidationError("extrinsic rotation block is not orthonormal with det +1");
  }
  if (E(3, 0) != 0.0 || E(3, 1) != 0.0 || E(3, 2) != 0.0 || E(3, 3) != 1.0) {
    throw ValidationError("extrinsic bottom row must be [0 0 0 1]");
  }
  if (width <= 0 || height <= 0) throw ValidationError("image size must be positive");
}

CameraModel CameraModel::from_json(const nlohmann::json& j) {
  CameraModel cam;
  try {
    const auto& k = j.at("K");
    const auto& e = j.at("E");
    if (k.size() != 9) throw LoadError("camera K needs 9 numbers");
    if (e.size() != 16) throw LoadError("camera E needs 16 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.K(r, c) = k.at(r * 3 + c).get<double>();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) cam.E(r, c) = e.at(r * 4 + c).get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    for (const auto& [key, value] : j.items()) {
      if (key != "K" && key != "E" && key != "width" && key != "height") {
        throw LoadError("unknown camera key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError(std::string("camera json: ") + ex.what());
  }
  cam.validate();
  return cam;
}

nlohmann::json CameraModel::to_json() const {
  nlohmann::json k = nlohmann::json::array();
  nlohmann::json e = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) k.push_back(K(r, c));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) e.push_back(E(r, c));
  return {{"K", k}, {"E", e}, {"width", width}, {"height", height}};
}

CameraModel CameraModel::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                                 int width, int height) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  CameraModel cam;
  cam.K << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  cam.E = RigidTransform{r, -(r * eye)}.matrix();
  cam.width = width;
  cam.height = height;
  return cam;
}

Projection project_point(const Vec3& p_world, const Mat3& K, const Mat4& E) {
  const Vec3 p_cam = E.topLeftCorner<3, 3>() * p_world + E.topRightCorner<3, 1>();
  Projection out;
  out.depth = p_cam.z();
  if (!(p_cam.z() > 0.0)) {
    out.status = Projection::Status::culled;
    return out;
  }
  const Vec3 u_hat = K * p_cam;
  out.pixel = {u_hat.x() / u_hat.z(), u_hat.y() / u_hat.z()};
  out.status = out.pixel.allFinite() ? Projection::Status::visible : Projection::Status::culled;
  return out;
}

Projection project_point(const Vec3& p_world, const CameraModel& cam) {
  return project_point(p_world, cam.K, cam.E);
}

double normalize_depth(double z, const DepthRange& range) {
  return std::clamp((z - range.z_min) / (range.z_max - range.z_min), 0.0, 1.0);
}

DepthRange estimate_depth_range(std::span<const KeypointSet> keypoints, const CameraModel& cam,
                                double margin) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& set : keypoints) {
    for (const Vec3& p : set.all_points()) {
      const Projection proj = project_point(p, cam);
      if (!proj.visible()) continue;
      lo = std::min(lo, proj.depth);
      hi = std::max(hi, proj.depth);
    }
  }
  if (!(lo <= hi)) throw EstimationError("no visible keypoints to estimate the depth range");
  if (hi - lo <= 0.0) {
    const double half = 0.5 * std::max(2.0 * margin * lo, 1e-3);
    return {lo - half, hi + half};
  }
  const double pad = margin * (hi - lo);
  return {lo - pad, hi + pad};
}

RigidTransform camera_to_world(const RigidTransform& pose_cam, const Mat4& E) {
  const RigidTransform e = RigidTransform::from_matrix(E);
  if (std::abs(e.rotation.determinant()) < 1e-12) throw NumericError("extrinsic matrix is not invertible");
  return e.inverse() * pose_cam;
}

namespace {

struct PnpProblem {
  std::span<const Correspondence> pts;
  Mat3 K;

  // Sum of squared reprojection residuals; +inf when a point is behind the camera.
  double cost(const Mat3& r, const Vec3& t) const {
    double c = 0.0;
    for (const auto& pc : pts) {
      const Vec3 p = r * pc.local + t;
      if (!(p.z() > 0.0)) return std::numeric_limits<double>::infinity();
      const Vec3 u = K * p;
      c += (Vec2(u.x() / u.z(), u.y() / u.z()) - pc.pixel).squaredNorm();
    }
    return c;
  }

  // J^T J and J^T r for the left perturbation R <- exp(w) R, t <- t + d.
  void normal_equations(const Mat3& r, const Vec3& t, Eigen::Matrix<double, 6, 6>& jtj,
                        Eigen::Matrix<double, 6, 1>& jtr) const {
    jtj.setZero();
    jtr.setZero();
    for (const auto& pc : pts) {
      const Vec3 rx = r * pc.local;
      const Vec3 p = rx + t;
      const Vec3 u_hat = K * p;
      const Vec2 uv(u_hat.x() / u_hat.z(), u_hat.y() / u_hat.z());
      const Vec2 res = uv - pc.pixel;
      Eigen::Matrix<double, 2, 3> duv_dp = K.topRows<2>();
      duv_dp.col(2) -= uv;
      duv_dp /= p.z();
      Eigen::Matrix<double, 2, 6> j;
      j.leftCols<3>() = -duv_dp * skew(rx);
      j.rightCols<3>() = duv_dp;
      jtj.noalias() += j.transpose() * j;
      jtr.noalias() += j.transpose() * res;
    }
  }
};

PnpSolution refine(const PnpProblem& prob, Mat3 r, Vec3 t, int max_iterations) {
  PnpSolution sol;
  double cost = prob.cost(r, t);
  double damping = 1e-3;
  Eigen::Matrix<double, 6, 6> jtj;
  Eigen::Matrix<double, 6, 1> jtr;
  int it = 0;
  bool stalled = false;
  for (; it < max_iterations && std::isfinite(cost) && !stalled; ++it) {
    prob.normal_equations(r, t, jtj, jtr);
    if (jtr.norm() < 1e-14 || cost < 1e-24) break;
    bool improved = false;
    for (int attempt = 0; attempt < 12 && !improved; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      a.diagonal() += damping * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 6, 1> step = a.ldlt().solve(-jtr);
      const Mat3 r_new = project_to_rotation(exp_so3(step.head<3>()) * r);
      const Vec3 t_new = t + step.tail<3>();
      const double c_new = prob.cost(r_new, t_new);
      if (c_new < cost) {
        const double rel = (cost - c_new) / std::max(cost, 1e-300);
        r = r_new;
        t = t_new;
        cost = c_new;
        damping = std::max(damping / 3.0, 1e-12);
        improved = true;
        stalled = rel < 1e-15;
      } else {
        damping *= 4.0;
      }
    }
    if (!improved) break;
  }
  prob.normal_equations(r, t, jtj, jtr);
  sol.rotation = r;
  sol.translation = t;
  sol.iterations = it;
  sol.reprojection_rmse = std::isfinite(cost) ? std::sqrt(cost / static_cast<double>(prob.pts.size()))
                                              : std::numeric_limits<double>::infinity();
  sol.converged = std::isfinite(cost) && (jtr.norm() < 1e-10 || cost < 1e-8);
  return sol;
}

}  // namespace

PnpSolution solve_pnp(std::span<const Correspondence> correspondences, const Mat3& K,
                      const PnpOptions& options) {
  const size_t n = correspondences.size();
  if (n < 4) throw DegeneracyError("PnP needs at least 4 correspondences, got " + std::to_string(n));

  Vec3 centroid = Vec3::Zero();
  for (const auto& c : correspondences) centroid += c.local;
  centroid /= static_cast<double>(n);
  Eigen::MatrixXd centered(n, 3);
  for (size_t i = 0; i < n; ++i) centered.row(i) = (correspondences[i].local - centroid).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(centered).singularValues();
  if (!(sv(0) > 0.0) || sv(1) < 1e-9 * sv(0)) throw DegeneracyError("PnP local points are collinear");

  const PnpProblem prob{correspondences, K};
  const Mat3 k_inv = K.inverse();

  std::vector<std::pair<Mat3, Vec3>> starts;
  double depth_guess = options.initial_depth.value_or(0.0);

  // Scaled-orthographic start on normalized image coordinates.
  Eigen::MatrixXd a(n, 4);
  Eigen::MatrixXd b(n, 2);
  for (size_t i = 0; i < n; ++i) {
    a.row(i) << correspondences[i].local.transpose(), 1.0;
    const Vec3 xn = k_inv * Vec3(correspondences[i].pixel.x(), correspondences[i].pixel.y(), 1.0);
    b.row(i) << xn.x() / xn.z(), xn.y() / xn.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_a(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto sva = svd_a.singularValues();
  if (sva(3) > 1e-9 * sva(0)) {
    const Eigen::Matrix<double, 4, 2> affine = svd_a.solve(b);
    const Vec3 row0 = affine.block<3, 1>(0, 0);
    const Vec3 row1 = affine.block<3, 1>(0, 1);
    const double scale = 0.5 * (row0.norm() + row1.norm());
    if (scale > 0.0) {
      Mat3 m;
      m.row(0) = row0.normalized().transpose();
      m.row(1) = row1.normalized().transpose();
      m.row(2) = row0.normalized().cross(row1.normalized()).transpose();
      const Mat3 r0 = project_to_rotation(m);
      const double z0 = 1.0 / scale;
      starts.emplace_back(r0, Vec3(affine(3, 0) * z0, affine(3, 1) * z0, z0));
      if (!options.initial_depth) depth_guess = z0;
    }
  }
  if (!(depth_guess > 0.0)) {
    // Ratio of 3D spread to normalized image spread.
    double spread3 = 0.0;
    double spread2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
      spread3 += centered.row(i).norm();
      spread2 += (b.row(i) - b.colwise().mean()).norm();
    }
    depth_guess = spread2 > 0.0 ? spread3 / spread2 : 1.0;
  }
  const Vec3 ray0 = k_inv * Vec3(correspondences[0].pixel.x(), correspondences[0].pixel.y(), 1.0);
  const Vec3 anchor = depth_guess * ray0 / ray0.z();
  for (const Vec3& diag : {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)}) {
    const Mat3 r0 = diag.asDiagonal();
    starts.emplace_back(r0, anchor - r0 * correspondences[0].local);
  }

  PnpSolution best;
  best.reprojection_rmse = std::numeric_limits<double>::infinity();
  for (const auto& [r0, t0] : starts) {
    PnpSolution s = refine(prob, r0, t0, options.max_iterations);
    if (s.reprojection_rmse < best.reprojection_rmse) best = s;
  }
  if (!std::isfinite(best.reprojection_rmse)) {
    best.rotation = starts.front().first;
    best.translation = starts.front().second;
    best.converged = false;
  }
  return best;
}

}  // namespace kvaf
