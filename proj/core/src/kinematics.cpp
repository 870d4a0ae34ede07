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

#include "kvaf/kinematics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "kvaf/error.hpp"
#include "kvaf/xml.hpp"

namespace kvaf {

const char* joint_kind_name(JointKind kind) {
  switch (kind) {
    case JointKind::revolute: return "revolute";
    case JointKind::prismatic: return "prismatic";
    case JointKind::fixed: return "fixed";
  }
  return "fixed";
}

RigidTransform JointSpec::transform(double q) const {
  switch (kind) {
    case JointKind::revolute: return origin * RigidTransform{axis_angle(axis, q), Vec3::Zero()};
    case JointKind::prismatic: return origin * RigidTransform::from_translation(axis * q);
    case JointKind::fixed: return origin;
  }
  return origin;
}

size_t ArmChain::dof() const {
  return static_cast<size_t>(std::count_if(joints.begin(), joints.end(),
                                           [](const JointSpec& j) { return j.movable(); }));
}

namespace {

std::vector<double> parse_numbers(const std::string& text, size_t expected, const std::string& what,
                                  int line) {
  std::vector<double> out;
  const char* p = text.data();
  const char* end = text.data() + text.size();
  while (p < end) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p >= end) break;
    double v = 0.0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) throw ParseError("invalid number in " + what + ": '" + text + "'", line);
    out.push_back(v);
    p = next;
  }
  if (out.size() != expected) {
    throw ParseError(what + " expects " + std::to_string(expected) + " numbers, got '" + text + "'",
                     line);
  }
  return out;
}

Vec3 parse_vec3(const std::string& text, const std::string& what, int line) {
  const auto v = parse_numbers(text, 3, what, line);
  return {v[0], v[1], v[2]};
}

JointSpec parse_joint(const xml::Element& el) {
  JointSpec j;
  const auto name = el.attribute("name");
  if (!name || name->empty()) throw ParseError("<joint> without a name", el.line);
  j.name = *name;
  const std::string where = "joint '" + j.name + "'";

  const auto type = el.attribute("type");
  if (!type) throw ParseError(where + " has no type", el.line);
  if (*type == "revolute" || *type == "continuous") {
    j.kind = JointKind::revolute;
  } else if (*type == "prismatic") {
    j.kind = JointKind::prismatic;
  } else if (*type == "fixed") {
    j.kind = JointKind::fixed;
  } else {
    throw ValidationError(where + " has unsupported type '" + *type + "'");
  }

  const auto* parent = el.first_child("parent");
  const auto* child = el.first_child("child");
  if (!parent || !parent->attribute("link")) throw ParseError(where + " has no parent link", el.line);
  if (!child || !child->attribute("link")) throw ParseError(where + " has no child link", el.line);
  j.parent_link = *parent->attribute("link");
  j.child_link = *child->attribute("link");

  if (const auto* origin = el.first_child("origin")) {
    const Vec3 xyz = parse_vec3(origin->attribute("xyz").value_or("0 0 0"), where + " origin xyz",
                                origin->line);
    const Vec3 rpy = parse_vec3(origin->attribute("rpy").value_or("0 0 0"), where + " origin rpy",
                                origin->line);
    j.origin = {urdf_rpy(rpy), xyz};
  }

  const auto* axis = el.first_child("axis");
  if (j.movable()) {
    if (!axis || !axis->attribute("xyz")) throw ValidationError(where + " is movable but has no axis");
    const Vec3 a = parse_vec3(*axis->attribute("xyz"), where + " axis", axis->line);
    const double n = a.norm();
    if (!(n > 1e-12) || !a.allFinite()) throw ValidationError(where + " has a zero-length axis");
    j.axis = a / n;
  } else {
    j.axis = Vec3::UnitX();
  }

  if (const auto* limit = el.first_child("limit"); limit && *type != "continuous" && j.movable()) {
    const auto lo = limit->attribute("lower");
    const auto hi = limit->attribute("upper");
    if (lo || hi) {
      JointLimits lim;
      lim.lower = lo ? parse_numbers(*lo, 1, where + " lower limit", limit->line)[0] : 0.0;
      lim.upper = hi ? parse_numbers(*hi, 1, where + " upper limit", limit->line)[0] : 0.0;
      if (lim.lower > lim.upper) throw ValidationError(where + " has lower limit above upper limit");
      j.limits = lim;
    }
  }
  return j;
}

std::regex icase(const std::string& pattern) {
  return std::regex(pattern, std::regex::ECMAScript | std::regex::icase);
}

}  // namespace

KinematicChain parse_urdf(std::string_view xml_text, const UrdfOptions& options) {
  const xml::Element root = xml::parse(xml_text);
  if (root.name != "robot") throw ParseError("root element is <" + root.name + ">, expected <robot>", root.line);

  KinematicChain chain;
  chain.name = root.attribute("name").value_or("");

  std::vector<JointSpec> joints;
  for (const auto* el : root.children_named("joint")) joints.push_back(parse_joint(*el));
  if (joints.empty()) throw ValidationError("robot '" + chain.name + "' has no joints");

  const std::regex gripper_re = icase(options.gripper_pattern);
  auto is_gripper = [&](const JointSpec& j) {
    return j.movable() && std::regex_search(j.name, gripper_re);
  };

  std::map<std::string, size_t> parent_of;  // child link -> joint index
  std::map<std::string, std::vector<size_t>> children_of;
  std::set<std::string> joint_names;
  for (size_t i = 0; i < joints.size(); ++i) {
    const auto& j = joints[i];
    if (!joint_names.insert(j.name).second) throw StructureError("duplicate joint name '" + j.name + "'");
    if (j.parent_link == j.child_link) throw StructureError("joint '" + j.name + "' connects link '" + j.parent_link + "' to itself");
    if (!parent_of.emplace(j.child_link, i).second) {
      throw StructureError("link '" + j.child_link + "' is the child of more than one joint");
    }
    children_of[j.parent_link].push_back(i);
  }

  std::vector<std::string> roots;
  for (const auto& [link, kids] : children_of) {
    if (!parent_of.count(link)) roots.push_back(link);
  }
  if (roots.empty()) throw StructureError("kinematic graph has a cycle (no root link)");
  if (roots.size() > 1) throw StructureError("kinematic graph has several root links ('" + roots[0] + "', '" + roots[1] + "')");

  // Every joint must be reachable from the root; unreachable joints sit on a cycle.
  {
    std::vector<std::string> stack{roots[0]};
    size_t seen = 0;
    while (!stack.empty()) {
      const std::string link = stack.back();
      stack.pop_back();
      auto it = children_of.find(link);
      if (it == children_of.end()) continue;
      for (size_t idx : it->second) {
        ++seen;
        stack.push_back(joints[idx].child_link);
      }
    }
    if (seen != joints.size()) throw StructureError("kinematic graph has a cycle");
  }

  auto chain_children = [&](const std::string& link) {
    std::vector<size_t> out;
    auto it = children_of.find(link);
    if (it == children_of.end()) return out;
    for (size_t idx : it->second) {
      if (!is_gripper(joints[idx])) out.push_back(idx);
    }
    return out;
  };

  // Follow single-child links from `link`; stops at a leaf or a split.
  auto follow = [&](std::string link, std::vector<size_t>& path) {
    for (;;) {
      const auto kids = chain_children(link);
      if (kids.size() != 1) return std::pair{link, kids};
      path.push_back(kids[0]);
      link = joints[kids[0]].child_link;
    }
  };

  std::vector<size_t> trunk;
  auto [split_link, split_kids] = follow(roots[0], trunk);

  std::vector<std::vector<size_t>> arm_paths;
  RigidTransform base;
  if (split_kids.empty()) {
    arm_paths.push_back(trunk);
  } else {
    if (split_kids.size() > 2) {
      throw StructureError("link '" + split_link + "' splits into " + std::to_string(split_kids.size()) + " branches; at most two arms are supported");
    }
    for (size_t idx : trunk) {
      if (joints[idx].movable()) {
        throw StructureError("movable joint '" + joints[idx].name + "' precedes the arm split at '" + split_link + "'");
      }
      base = base * joints[idx].origin;
    }
    for (size_t first : split_kids) {
      std::vector<size_t> path{first};
      auto [end_link, end_kids] = follow(joints[first].child_link, path);
      if (!end_kids.empty()) {
        throw StructureError("arm starting at joint '" + joints[first].name + "' branches at link '" + end_link + "'");
      }
      arm_paths.push_back(std::move(path));
    }
  }

  std::vector<ArmChain> arms;
  std::set<size_t> claimed_grippers;
  for (const auto& path : arm_paths) {
    ArmChain arm;
    arm.base = base;
    arm.approach_axis = options.approach_axis;
    for (size_t idx : path) arm.joints.push_back(joints[idx]);
    const std::string tip = path.empty() ? roots[0] : joints[path.back()].child_link;
    if (auto it = children_of.find(tip); it != children_of.end()) {
      for (size_t idx : it->second) {
        if (!is_gripper(joints[idx])) continue;
        GripperJoint g;
        g.joint = joints[idx];
        g.d_max = (g.joint.limits && g.joint.limits->upper > 0.0) ? g.joint.limits->upper : options.default_d_max;
        g.finger_length = options.finger_length;
        arm.gripper.push_back(std::move(g));
        claimed_grippers.insert(idx);
      }
    }
    arms.push_back(std::move(arm));
  }
  for (size_t i = 0; i < joints.size(); ++i) {
    if (!is_gripper(joints[i]) || claimed_grippers.count(i)) continue;
    // Gripper joints nested under another finger belong to that finger's branch.
    bool under_finger = false;
    for (auto it = parent_of.find(joints[i].parent_link); it != parent_of.end();
         it = parent_of.find(joints[it->second].parent_link)) {
      if (claimed_grippers.count(it->second)) {
        under_finger = true;
        break;
      }
    }
    if (!under_finger) {
      throw StructureError("gripper joint '" + joints[i].name + "' is not attached to an arm tip");
    }
  }

  if (arms.size() == 1) {
    chain.arms[0] = std::move(arms[0]);
    return chain;
  }

  auto matches = [&](const ArmChain& arm, const std::regex& re) {
    const auto& first = arm.joints.front();
    return std::regex_search(first.name, re) || std::regex_search(first.child_link, re);
  };
  const std::regex left_re = icase(options.left_pattern);
  const std::regex right_re = icase(options.right_pattern);
  bool swap = false;
  if (matches(arms[0], left_re) != matches(arms[1], left_re)) {
    swap = matches(arms[1], left_re);
  } else if (matches(arms[0], right_re) != matches(arms[1], right_re)) {
    swap = matches(arms[0], right_re);
  }
  chain.arms[0] = std::move(arms[swap ? 1 : 0]);
  chain.arms[1] = std::move(arms[swap ? 0 : 1]);
  return chain;
}

namespace {

using nlohmann::json;

json transform_json(const RigidTransform& t) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(t.rotation(r, c));
  return json{{"rotation", rot}, {"translation", {t.translation.x(), t.translation.y(), t.translation.z()}}};
}

RigidTransform transform_from(const json& j) {
  RigidTransform t;
  const auto& rot = j.at("rotation");
  const auto& tr = j.at("translation");
  if (rot.size() != 9 || tr.size() != 3) throw LoadError("transform needs 9 rotation and 3 translation values");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = rot.at(r * 3 + c).get<double>();
  t.translation = {tr[0].get<double>(), tr[1].get<double>(), tr[2].get<double>()};
  return t;
}

json joint_json(const JointSpec& j) {
  json out{{"name", j.name},
           {"kind", joint_kind_name(j.kind)},
           {"origin", transform_json(j.origin)},
           {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
           {"parent", j.parent_link},
           {"child", j.child_link},
           {"limits", nullptr}};
  if (j.limits) out["limits"] = {j.limits->lower, j.limits->upper};
  return out;
}

JointSpec joint_from(const json& j) {
  JointSpec s;
  s.name = j.at("name").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "revolute") s.kind = JointKind::revolute;
  else if (kind == "prismatic") s.kind = JointKind::prismatic;
  else if (kind == "fixed") s.kind = JointKind::fixed;
  else throw LoadError("unknown joint kind '" + kind + "'");
  s.origin = transform_from(j.at("origin"));
  const auto& a = j.at("axis");
  s.axis = {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
  s.parent_link = j.at("parent").get<std::string>();
  s.child_link = j.at("child").get<std::string>();
  if (!j.at("limits").is_null()) {
    s.limits = JointLimits{j["limits"].at(0).get<double>(), j["limits"].at(1).get<double>()};
  }
  return s;
}

}  // namespace

json chain_to_json(const KinematicChain& chain) {
  json arms = json::object();
  for (Arm a : kArms) {
    const ArmChain& arm = chain.arm(a);
    json joints = json::array();
    for (const auto& j : arm.joints) joints.push_back(joint_json(j));
    json gripper = json::array();
    for (const auto& g : arm.gripper) {
      gripper.push_back({{"joint", joint_json(g.joint)}, {"d_max", g.d_max}, {"finger_length", g.finger_length}});
    }
    json mask = json::array();
    for (bool b : arm.skeleton_mask) mask.push_back(b);
    arms[arm_name(a)] = {{"base", transform_json(arm.base)},
                         {"joints", joints},
                         {"gripper", gripper},
                         {"skeleton_mask", mask},
                         {"approach_axis", {arm.approach_axis.x(), arm.approach_axis.y(), arm.approach_axis.z()}}};
  }
  return json{{"format", "kvaf-chain/1"}, {"name", chain.name}, {"arms", arms}};
}

KinematicChain chain_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "kvaf-chain/1") throw LoadError("unsupported chain format");
    KinematicChain chain;
    chain.name = j.at("name").get<std::string>();
    for (Arm a : kArms) {
      const json& src = j.at("arms").at(arm_name(a));
      ArmChain& arm = chain.arm(a);
      arm.base = transform_from(src.at("base"));
      for (const auto& jj : src.at("joints")) arm.joints.push_back(joint_from(jj));
      for (const auto& g : src.at("gripper")) {
        arm.gripper.push_back({joint_from(g.at("joint")), g.at("d_max").get<double>(), g.at("finger_length").get<double>()});
      }
      for (const auto& b : src.at("skeleton_mask")) arm.skeleton_mask.push_back(b.get<bool>());
      const auto& ax = src.at("approach_axis");
      arm.approach_axis = {ax.at(0).get<double>(), ax.at(1).get<double>(), ax.at(2).get<double>()};
    }
    return chain;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("chain json: ") + e.what());
  }
}

LinkPoseSet forward_kinematics(const ArmChain& arm, const Eigen::VectorXd& q) {
  if (static_cast<size_t>(q.size()) != arm.dof()) {
    throw DimensionError("expected " + std::to_string(arm.dof()) + " joint values, got " + std::to_string(q.size()));
  }
  LinkPoseSet out;
  out.poses.reserve(arm.joints.size() + 1);
  out.poses.push_back(arm.base);
  Eigen::Index k = 0;
  for (const auto& joint : arm.joints) {
    double value = 0.0;
    if (joint.movable()) {
      value = q[k++];
      if (joint.limits && (value < joint.limits->lower || value > joint.limits->upper)) {
        std::ostringstream msg;
        msg << "joint '" << joint.name << "' value " << value << " outside [" << joint.limits->lower
            << ", " << joint.limits->upper << "]";
        out.warnings.push_back(msg.str());
      }
    }
    out.poses.push_back(out.poses.back() * joint.transform(value));
  }
  return out;
}

LinkPoseSet forward_kinematics(const KinematicChain& chain, const Eigen::VectorXd& q, Arm arm) {
  return forward_kinematics(chain.arm(arm), q);
}

double gripper_displacement(double g, double d_max) { return std::clamp(g, 0.0, 1.0) * d_max; }

std::vector<Vec3> KeypointSet::all_points() const {
  std::vector<Vec3> pts = arm_points;
  for (const auto& jp : joint_points) pts.push_back(jp.position);
  for (const auto& f : fingers) {
    pts.push_back(f.root);
    pts.push_back(f.base);
    pts.push_back(f.tip);
  }
  if (ee) pts.push_back(ee->translation);
  return pts;
}

KeypointSet extract_keypoints(const LinkPoseSet& poses, const ArmChain& arm, double g) {
  KeypointSet out;
  if (poses.poses.empty()) return out;
  for (size_t i = 0; i < poses.poses.size(); ++i) {
    if (arm.skeleton_mask.empty() || (i < arm.skeleton_mask.size() && arm.skeleton_mask[i])) {
      out.arm_points.push_back(poses.poses[i].translation);
    }
  }
  for (size_t i = 0; i < arm.joints.size() && i + 1 < poses.poses.size(); ++i) {
    if (arm.joints[i].movable()) out.joint_points.push_back({arm.joints[i].name, poses.poses[i + 1].translation});
  }
  const RigidTransform& tip = poses.poses.back();
  out.ee = tip;
  const Vec3 approach = tip.rotation * arm.approach_axis;
  for (const auto& finger : arm.gripper) {
    const RigidTransform frame = tip * finger.joint.origin;
    const double d = gripper_displacement(g, finger.d_max);
    FingerPoints f;
    f.joint = finger.joint.name;
    f.root = frame.translation;
    f.base = f.root + d * (frame.rotation * finger.joint.axis);
    f.tip = f.base + finger.finger_length * approach;
    out.fingers.push_back(std::move(f));
  }
  return out;
}

}  // namespace kvaf
