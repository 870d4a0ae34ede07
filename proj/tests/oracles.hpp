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

// Independent reference implementations used as test oracles. Nothing here
// calls into the library under test.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// Plain 4x4 row-major matrices.
struct M4 {
  double a[4][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
};

inline M4 mul(const M4& x, const M4& y) {
  M4 r;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += x.a[i][k] * y.a[k][j];
      r.a[i][j] = s;
    }
  }
  return r;
}

inline M4 translation(double x, double y, double z) {
  M4 m;
  m.a[0][3] = x;
  m.a[1][3] = y;
  m.a[2][3] = z;
  return m;
}

inline M4 rot_x(double t) {
  M4 m;
  m.a[1][1] = std::cos(t);
  m.a[1][2] = -std::sin(t);
  m.a[2][1] = std::sin(t);
  m.a[2][2] = std::cos(t);
  return m;
}

inline M4 rot_y(double t) {
  M4 m;
  m.a[0][0] = std::cos(t);
  m.a[0][2] = std::sin(t);
  m.a[2][0] = -std::sin(t);
  m.a[2][2] = std::cos(t);
  return m;
}

inline M4 rot_z(double t) {
  M4 m;
  m.a[0][0] = std::cos(t);
  m.a[0][1] = -std::sin(t);
  m.a[1][0] = std::sin(t);
  m.a[1][1] = std::cos(t);
  return m;
}

// Rotation about a unit axis, written out entry by entry.
inline M4 rot_axis(double x, double y, double z, double t) {
  const double n = std::sqrt(x * x + y * y + z * z);
  x /= n;
  y /= n;
  z /= n;
  const double c = std::cos(t), s = std::sin(t), v = 1.0 - c;
  M4 m;
  m.a[0][0] = x * x * v + c;
  m.a[0][1] = x * y * v - z * s;
  m.a[0][2] = x * z * v + y * s;
  m.a[1][0] = y * x * v + z * s;
  m.a[1][1] = y * y * v + c;
  m.a[1][2] = y * z * v - x * s;
  m.a[2][0] = z * x * v - y * s;
  m.a[2][1] = z * y * v + x * s;
  m.a[2][2] = z * z * v + c;
  return m;
}

// Joint description as written in URDF attributes.
struct RawJoint {
  std::string name;
  std::string type;
  std::string parent, child;
  double xyz[3] = {0, 0, 0};
  double rpy[3] = {0, 0, 0};
  double axis[3] = {1, 0, 0};
  bool has_limits = false;
  double lower = 0, upper = 0;
};

inline M4 origin_matrix(const RawJoint& j) {
  return mul(translation(j.xyz[0], j.xyz[1], j.xyz[2]),
             mul(rot_z(j.rpy[2]), mul(rot_y(j.rpy[1]), rot_x(j.rpy[0]))));
}

inline M4 motion_matrix(const RawJoint& j, double q) {
  if (j.type == "revolute" || j.type == "continuous") return rot_axis(j.axis[0], j.axis[1], j.axis[2], q);
  if (j.type == "prismatic") {
    const double n = std::sqrt(j.axis[0] * j.axis[0] + j.axis[1] * j.axis[1] + j.axis[2] * j.axis[2]);
    return translation(q * j.axis[0] / n, q * j.axis[1] / n, q * j.axis[2] / n);
  }
  return M4{};
}

inline bool movable(const RawJoint& j) { return j.type != "fixed"; }

// Regex walk over URDF text; good enough for the well-formed fixtures.
inline std::vector<RawJoint> scan_joints(const std::string& text) {
  std::vector<RawJoint> out;
  const std::regex block(R"(<joint\s+([^>]*)>([\s\S]*?)</joint>)");
  const std::regex attr(R"re((\w+)\s*=\s*"([^"]*)")re");
  auto attrs = [&](const std::string& s) {
    std::map<std::string, std::string> m;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), attr); it != std::sregex_iterator(); ++it) {
      m[(*it)[1]] = (*it)[2];
    }
    return m;
  };
  auto tag = [&](const std::string& body, const std::string& name) {
    const std::regex re("<" + name + R"(\s+([^>]*?)/?>)");
    std::smatch m;
    if (std::regex_search(body, m, re)) return attrs(m[1]);
    return std::map<std::string, std::string>{};
  };
  auto triple = [](const std::string& s, double* v) {
    std::istringstream is(s);
    is >> v[0] >> v[1] >> v[2];
  };
  for (auto it = std::sregex_iterator(text.begin(), text.end(), block); it != std::sregex_iterator(); ++it) {
    RawJoint j;
    const auto head = attrs((*it)[1]);
    const std::string body = (*it)[2];
    j.name = head.at("name");
    j.type = head.at("type");
    j.parent = tag(body, "parent").at("link");
    j.child = tag(body, "child").at("link");
    const auto origin = tag(body, "origin");
    if (origin.count("xyz")) triple(origin.at("xyz"), j.xyz);
    if (origin.count("rpy")) triple(origin.at("rpy"), j.rpy);
    const auto axis = tag(body, "axis");
    if (axis.count("xyz")) triple(axis.at("xyz"), j.axis);
    const auto limit = tag(body, "limit");
    if (limit.count("lower") && limit.count("upper")) {
      j.has_limits = true;
      j.lower = std::stod(limit.at("lower"));
      j.upper = std::stod(limit.at("upper"));
    }
    out.push_back(j);
  }
  return out;
}

// Joints from the root link down to `tip_link`, root first.
inline std::vector<RawJoint> path_to(const std::vector<RawJoint>& joints, const std::string& tip_link) {
  std::map<std::string, RawJoint> by_child;
  for (const auto& j : joints) by_child[j.child] = j;
  std::vector<RawJoint> path;
  std::string link = tip_link;
  while (by_child.count(link)) {
    path.insert(path.begin(), by_child[link]);
    link = by_child[link].parent;
  }
  return path;
}

// Link poses along a joint path: entry k is the child link of joint k.
inline std::vector<M4> chain_poses(const std::vector<RawJoint>& path, const std::vector<double>& q) {
  std::vector<M4> poses;
  M4 t;
  size_t k = 0;
  for (const auto& j : path) {
    const double v = movable(j) ? q.at(k++) : 0.0;
    t = mul(t, mul(origin_matrix(j), motion_matrix(j, v)));
    poses.push_back(t);
  }
  return poses;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Random serial chain as URDF text, with its raw description.
struct RandomChain {
  std::string urdf;
  std::vector<RawJoint> joints;
  std::string tip;
};

inline RandomChain random_chain(std::mt19937_64& rng, int n_joints) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> kind(0, 5);
  RandomChain rc;
  std::ostringstream os;
  os << "<?xml version=\"1.0\"?>\n<robot name=\"random\">\n  <link name=\"l0\"/>\n";
  for (int i = 0; i < n_joints; ++i) {
    RawJoint j;
    j.name = "j" + std::to_string(i);
    const int k = kind(rng);
    j.type = k < 3 ? "revolute" : (k < 5 ? "prismatic" : "fixed");
    j.parent = "l" + std::to_string(i);
    j.child = "l" + std::to_string(i + 1);
    for (double& v : j.xyz) v = 0.3 * u(rng);
    for (double& v : j.rpy) v = 3.0 * u(rng);
    double n = 0.0;
    do {
      for (double& v : j.axis) v = u(rng);
      n = std::sqrt(j.axis[0] * j.axis[0] + j.axis[1] * j.axis[1] + j.axis[2] * j.axis[2]);
    } while (n < 0.2);
    // Written unit-norm so the parsed axis needs no renormalization.
    for (double& v : j.axis) v /= n;
    j.has_limits = true;
    j.lower = j.type == "prismatic" ? -0.2 : -3.0;
    j.upper = -j.lower;
    os << "  <link name=\"" << j.child << "\"/>\n";
    os << "  <joint name=\"" << j.name << "\" type=\"" << j.type << "\">\n";
    os << "    <parent link=\"" << j.parent << "\"/>\n    <child link=\"" << j.child << "\"/>\n";
    os << "    <origin xyz=\"" << fmt(j.xyz[0]) << " " << fmt(j.xyz[1]) << " " << fmt(j.xyz[2]) << "\" rpy=\""
       << fmt(j.rpy[0]) << " " << fmt(j.rpy[1]) << " " << fmt(j.rpy[2]) << "\"/>\n";
    if (j.type != "fixed") {
      os << "    <axis xyz=\"" << fmt(j.axis[0]) << " " << fmt(j.axis[1]) << " " << fmt(j.axis[2]) << "\"/>\n";
      os << "    <limit lower=\"" << fmt(j.lower) << "\" upper=\"" << fmt(j.upper) << "\"/>\n";
    }
    os << "  </joint>\n";
    rc.joints.push_back(j);
  }
  os << "</robot>\n";
  rc.urdf = os.str();
  rc.tip = "l" + std::to_string(n_joints);
  return rc;
}

// Integer line from the rounded line equation. Along the major axis every
// step is plotted; the minor coordinate is the exact rational value rounded
// half away from the start point's side.
inline std::set<std::pair<int, int>> reference_line(int x0, int y0, int x1, int y1) {
  std::set<std::pair<int, int>> px;
  const int dx = x1 - x0, dy = y1 - y0;
  const int n = std::max(std::abs(dx), std::abs(dy));
  if (n == 0) {
    px.insert({x0, y0});
    return px;
  }
  auto round_ratio = [](long num, long den) {
    // round(num / den), den > 0, ties toward zero
    const long q = num / den, r = num % den;
    if (2 * std::abs(r) > den) return q + (num < 0 ? -1 : 1);
    return q;
  };
  for (int i = 0; i <= n; ++i) {
    if (std::abs(dx) >= std::abs(dy)) {
      const int x = x0 + (dx > 0 ? i : -i);
      const long minor = round_ratio(static_cast<long>(i) * dy, std::abs(dx));
      px.insert({x, y0 + static_cast<int>(minor)});
    } else {
      const int y = y0 + (dy > 0 ? i : -i);
      const long minor = round_ratio(static_cast<long>(i) * dx, std::abs(dy));
      px.insert({x0 + static_cast<int>(minor), y});
    }
  }
  return px;
}

// Pinhole projection written out from K, E (row-major arrays).
inline bool project(const double K[9], const double E[16], const double p[3], double& u, double& v, double& z) {
  double c[3];
  for (int r = 0; r < 3; ++r) c[r] = E[r * 4] * p[0] + E[r * 4 + 1] * p[1] + E[r * 4 + 2] * p[2] + E[r * 4 + 3];
  z = c[2];
  if (z <= 0.0) return false;
  const double hx = K[0] * c[0] + K[1] * c[1] + K[2] * c[2];
  const double hy = K[3] * c[0] + K[4] * c[1] + K[5] * c[2];
  const double hz = K[6] * c[0] + K[7] * c[1] + K[8] * c[2];
  u = hx / hz;
  v = hy / hz;
  return true;
}

}  // namespace oracle
