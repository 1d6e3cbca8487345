#pragma once

// Grasp heuristics (triangle, center-of-three, opposite-faces), the
// force-closure test, random force-closure sampling and IK reachability.
//
// Contacts are expressed in the cube frame: a face id, the contact point on
// the face and the inward unit normal. Heuristic grasps use the four vertical
// faces (+-x, +-y of the cube frame) at mid-height; sampled grasps may also use
// the top face (+z).

#include "trifinger/common.hpp"
#include "trifinger/kinematics.hpp"
#include "trifinger/lp.hpp"

#include <random>
#include <string>
#include <vector>

namespace trifinger {

enum class Face { PosX, NegX, PosY, NegY, PosZ, NegZ };

inline const char* face_name(Face f) {
  switch (f) {
    case Face::PosX: return "+x";
    case Face::NegX: return "-x";
    case Face::PosY: return "+y";
    case Face::NegY: return "-y";
    case Face::PosZ: return "+z";
    case Face::NegZ: return "-z";
  }
  return "?";
}

inline Vec3 face_outward_normal(Face f) {
  switch (f) {
    case Face::PosX: return Vec3::UnitX();
    case Face::NegX: return -Vec3::UnitX();
    case Face::PosY: return Vec3::UnitY();
    case Face::NegY: return -Vec3::UnitY();
    case Face::PosZ: return Vec3::UnitZ();
    case Face::NegZ: return -Vec3::UnitZ();
  }
  return Vec3::Zero();
}

inline Face opposite_face(Face f) {
  switch (f) {
    case Face::PosX: return Face::NegX;
    case Face::NegX: return Face::PosX;
    case Face::PosY: return Face::NegY;
    case Face::NegY: return Face::PosY;
    case Face::PosZ: return Face::NegZ;
    case Face::NegZ: return Face::PosZ;
  }
  return f;
}

inline constexpr std::array<Face, 4> kVerticalFaces{Face::PosX, Face::PosY, Face::NegX, Face::NegY};

struct GraspContact {
  Face face = Face::PosX;
  Vec3 point = Vec3::Zero();   // cube frame, on the face
  Vec3 normal = Vec3::Zero();  // cube frame, unit, pointing into the cube
};

inline GraspContact make_contact(Face face, double half, double u = 0.0, double v = 0.0) {
  // (u, v) are in-face coordinates along the two remaining cube axes in
  // cyclic order.
  GraspContact c;
  c.face = face;
  const Vec3 n_out = face_outward_normal(face);
  int axis = 0;
  for (int k = 0; k < 3; ++k) {
    if (n_out[k] != 0.0) axis = k;
  }
  c.point = half * n_out;
  c.point[(axis + 1) % 3] = u;
  c.point[(axis + 2) % 3] = v;
  c.normal = -n_out;
  return c;
}

struct Grasp {
  std::array<GraspContact, kNumFingers> contacts{};
  // finger i uses contacts[finger_assignment[i]]
  std::array<int, kNumFingers> finger_assignment{0, 1, 2};
  std::string label;

  const GraspContact& for_finger(int finger) const {
    return contacts[static_cast<std::size_t>(finger_assignment[static_cast<std::size_t>(finger)])];
  }
};

struct GraspOptions {
  double cube_side = 0.065;
  double tip_radius = 0.0075;
  double mu = 0.5;
  int friction_edges = 8;
  double tilt_tolerance_deg = 15.0;
  int max_sampling_attempts = 1000;
  double sample_face_inset = 0.8;  // sampled points stay within this fraction of the half side
  double ik_tolerance = 2e-3;

  double half() const { return 0.5 * cube_side; }
};

struct GraspFeasibility {
  bool reachable = false;
  bool in_force_closure = false;
  std::array<Vec3, kNumFingers> ik_solutions{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double margin = -std::numeric_limits<double>::infinity();  // summed joint-limit clearance

  Vec9 joint_positions() const {
    Vec9 q;
    for (int i = 0; i < kNumFingers; ++i) set_finger_block(q, i, ik_solutions[i]);
    return q;
  }
};

// ---------------------------------------------------------------------------
// Geometry helpers

/// Tilt of the cube's z axis away from the world vertical (rad).
inline double cube_tilt(const Quat& orientation) {
  const Vec3 z = orientation * Vec3::UnitZ();
  return std::acos(std::clamp(z.z(), -1.0, 1.0));
}

inline void require_upright(const Pose& cube, const GraspOptions& opt) {
  if (cube_tilt(cube.orientation) > opt.tilt_tolerance_deg * kPi / 180.0) {
    throw CubeTilted("cube tilt exceeds the grasp tolerance");
  }
}

/// Horizontal cube-to-goal direction expressed in the cube frame (zero when
/// the goal is straight above/below the cube).
inline Vec3 goal_direction_in_cube(const Pose& cube, const Pose& goal) {
  Vec3 d = goal.position - cube.position;
  d.z() = 0.0;
  Vec3 local = cube.orientation.conjugate() * d;
  local.z() = 0.0;
  const double n = local.norm();
  return n > 1e-9 ? Vec3(local / n) : Vec3::Zero();
}

/// The vertical face whose outward normal best aligns with the goal direction.
/// Defaults to +x when the direction vanishes.
inline Face face_toward(const Vec3& dir_local) {
  Face best = Face::PosX;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (Face f : kVerticalFaces) {
    const double d = face_outward_normal(f).dot(dir_local);
    if (d > best_dot + 1e-12) {
      best_dot = d;
      best = f;
    }
  }
  return best;
}

/// World-frame tip-center target for a contact: the contact point pushed out
/// along the outward normal by the tip radius (plus an optional standoff).
inline Vec3 contact_tip_target(const Pose& cube, const GraspContact& c, double tip_radius,
                               double standoff = 0.0) {
  return cube.transform(c.point - (tip_radius + standoff) * c.normal);
}

/// Assigns fingers to contacts (exhaustive over the 6 permutations). Finger
/// bases sit close to the arena center, so each finger works on the far side
/// of the cube: its "home" azimuth around the cube is its base heading + pi.
/// The cost is the summed angular distance between contact azimuths and home
/// azimuths.
inline std::array<int, kNumFingers> assign_fingers(const std::array<GraspContact, 3>& contacts,
                                                   const Pose& cube, const FingerSet& fingers) {
  std::array<int, kNumFingers> perm{0, 1, 2};
  std::array<int, kNumFingers> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (int i = 0; i < kNumFingers; ++i) {
      const Vec3 p = cube.transform(
          contacts[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].point);
      const double az = std::atan2(p.y() - cube.position.y(), p.x() - cube.position.x());
      const double d = std::remainder(az - (fingers[i].base_yaw + kPi), 2.0 * kPi);
      cost += std::abs(d);
    }
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// ---------------------------------------------------------------------------
// Force closure

/// Primitive wrenches of the discretized friction cones: one column per
/// (contact, edge), force on top and torque / half-side below.
inline Eigen::MatrixXd primitive_wrenches(const std::vector<GraspContact>& contacts, double mu,
                                          int edges, double half) {
  const int m = mu > 0.0 ? edges : 1;
  Eigen::MatrixXd w(6, static_cast<Eigen::Index>(contacts.size()) * m);
  Eigen::Index col = 0;
  for (const GraspContact& c : contacts) {
    const Vec3 n = c.normal.normalized();
    const Vec3 t1 = n.unitOrthogonal();
    const Vec3 t2 = n.cross(t1);
    for (int k = 0; k < m; ++k) {
      const double a = 2.0 * kPi * k / m;
      const Vec3 f = mu > 0.0 ? Vec3(n + mu * (std::cos(a) * t1 + std::sin(a) * t2)) : n;
      w.block<3, 1>(0, col) = f;
      w.block<3, 1>(3, col) = c.point.cross(f) / half;
      ++col;
    }
  }
  return w;
}

inline void check_not_degenerate(const std::vector<GraspContact>& contacts) {
  if (contacts.size() < 2) return;
  bool same_normal = true;
  for (const auto& c : contacts) {
    same_normal = same_normal && (c.normal - contacts[0].normal).norm() < 1e-12;
  }
  if (!same_normal) return;
  const Vec3 dir = contacts[1].point - contacts[0].point;
  for (std::size_t k = 2; k < contacts.size(); ++k) {
    if (dir.cross(contacts[k].point - contacts[0].point).norm() > 1e-12) return;
  }
  throw DegenerateGrasp("contacts are collinear with identical normals");
}

/// Origin strictly inside the convex hull of the primitive wrenches, tested as
/// rank(W) = 6 plus feasibility of {lambda >= 1 : W lambda = 0}.
inline bool is_force_closure(const std::vector<GraspContact>& contacts, double mu, int edges,
                             double half) {
  if (mu < 0.0) throw std::invalid_argument("is_force_closure: mu must be >= 0");
  check_not_degenerate(contacts);
  const Eigen::MatrixXd w = primitive_wrenches(contacts, mu, edges, half);
  if (w.cols() < 7) return false;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
  const auto& sv = svd.singularValues();
  if (sv(5) <= 1e-9 * sv(0)) return false;
  // lambda = 1 + x with x >= 0:  W x = -W 1
  const Eigen::VectorXd b = -w * Eigen::VectorXd::Ones(w.cols());
  return lp_feasible(w, b);
}

inline bool is_force_closure(const Grasp& grasp, double mu, const GraspOptions& opt = {}) {
  std::vector<GraspContact> cs(grasp.contacts.begin(), grasp.contacts.end());
  return is_force_closure(cs, mu, opt.friction_edges, opt.half());
}

// ---------------------------------------------------------------------------
// Reachability

inline GraspFeasibility check_reachability(const Grasp& grasp, const Pose& cube,
                                           const FingerSet& fingers, const GraspOptions& opt = {},
                                           const Vec9* warm_start = nullptr) {
  GraspFeasibility out;
  out.in_force_closure = is_force_closure(grasp, opt.mu, opt);
  IkOptions ik;
  ik.tolerance = opt.ik_tolerance;
  bool ok = true;
  double margin = 0.0;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 target = contact_tip_target(cube, grasp.for_finger(i), opt.tip_radius);
    Vec3 warm;
    const Vec3* warm_ptr = nullptr;
    if (warm_start != nullptr) {
      warm = finger_block(*warm_start, i);
      warm_ptr = &warm;
    }
    const IkResult r = solve_ik(fingers[i], target, warm_ptr, ik);
    out.ik_solutions[i] = r.q;
    const Vec3 tip = forward_kinematics(fingers[i], r.q);
    ok = ok && r.converged && within_limits(fingers[i], r.q) && tip.z() >= opt.tip_radius - 1e-9;
    margin += limit_clearance(fingers[i], r.q);
  }
  out.reachable = ok;
  if (ok) out.margin = margin;
  return out;
}

// ---------------------------------------------------------------------------
// Heuristic grasps

inline Grasp finalize_grasp(std::array<GraspContact, 3> contacts, const Pose& cube,
                            const FingerSet& fingers, std::string label) {
  Grasp g;
  g.contacts = contacts;
  g.finger_assignment = assign_fingers(contacts, cube, fingers);
  g.label = std::move(label);
  return g;
}

/// Triangle grasp: one contact centered on the face opposite the goal-facing
/// face, two on the adjacent pair at the offset that makes the horizontal
/// projections equilateral.
inline Grasp triangle_grasp(const Pose& cube, const Pose& goal, const FingerSet& fingers,
                            const GraspOptions& opt = {}) {
  require_upright(cube, opt);
  const double h = opt.half();
  const Face unassigned = face_toward(goal_direction_in_cube(cube, goal));
  const Face center_face = opposite_face(unassigned);
  const Vec3 back = face_outward_normal(center_face);  // centered contact sits at h * back
  // The pair contacts sit at coordinate s along `back`; |center - pair| = 2h
  // (the pair spacing) requires (h - s)^2 + h^2 = 4h^2, i.e. s = h (1 - sqrt3).
  const double s = h * (1.0 - std::sqrt(3.0));
  const Vec3 side = Vec3::UnitZ().cross(back);
  std::array<GraspContact, 3> cs;
  cs[0] = make_contact(center_face, h);
  for (int k = 0; k < 2; ++k) {
    const Vec3 n_out = (k == 0 ? 1.0 : -1.0) * side;
    GraspContact c;
    c.point = h * n_out + s * back;
    c.normal = -n_out;
    c.face = n_out.x() > 0.5 ? Face::PosX
             : n_out.x() < -0.5 ? Face::NegX
             : n_out.y() > 0.5 ? Face::PosY
                                : Face::NegY;
    cs[static_cast<std::size_t>(k + 1)] = c;
  }
  return finalize_grasp(cs, cube, fingers, "TG");
}

/// Center-of-three grasp.
///  level 3: the face closest to the goal direction is left free.
///  level 4: two fingers on the opposite pair whose connecting line is most
///           parallel to the goal rotation axis; the third finger goes on the
///           remaining face where an upward push yields the desired rotation.
///  Ties fall back to the level-3 rule.
inline Grasp center_of_three_grasp(const Pose& cube, const Pose& goal, int task_level,
                                   const FingerSet& fingers, const GraspOptions& opt = {}) {
  require_upright(cube, opt);
  const double h = opt.half();
  const Face toward = face_toward(goal_direction_in_cube(cube, goal));
  Face unassigned = toward;
  if (task_level == 4) {
    auto [axis_world, angle] = rotation_error_axis_angle(cube.orientation, goal.orientation);
    if (angle > 1e-9) {
      const Vec3 r = cube.orientation.conjugate() * axis_world;
      const double cx = std::abs(r.x());
      const double cy = std::abs(r.y());
      if (std::abs(cx - cy) > 1e-9) {
        const bool pair_is_x = cx > cy;
        // Remaining faces lie along the other horizontal axis.
        const Face fa = pair_is_x ? Face::PosY : Face::PosX;
        const Face fb = opposite_face(fa);
        auto score = [&](Face f) {
          const Vec3 p = h * face_outward_normal(f);
          return p.cross(Vec3::UnitZ()).dot(r);
        };
        const double sa = score(fa);
        const double sb = score(fb);
        if (std::abs(sa - sb) > 1e-12) {
          unassigned = sa > sb ? fb : fa;
        } else {
          unassigned = (toward == fa || toward == fb) ? toward : fa;
        }
      }
    }
  }
  std::array<GraspContact, 3> cs;
  std::size_t k = 0;
  for (Face f : kVerticalFaces) {
    if (f != unassigned) cs[k++] = make_contact(f, h);
  }
  return finalize_grasp(cs, cube, fingers, "CG");
}

/// Opposite-faces grasp variant with two contacts on `double_face`, offset by
/// +-s/4 along its horizontal axis, and one centered on the opposite face.
inline Grasp opposite_faces_variant(Face double_face, const Pose& cube, const FingerSet& fingers,
                                    const GraspOptions& opt = {}) {
  const double h = opt.half();
  const double off = 0.25 * opt.cube_side;
  const Vec3 n_out = face_outward_normal(double_face);
  const Vec3 side = Vec3::UnitZ().cross(n_out);
  std::array<GraspContact, 3> cs;
  for (int k = 0; k < 2; ++k) {
    GraspContact c;
    c.face = double_face;
    c.point = h * n_out + (k == 0 ? off : -off) * side;
    c.normal = -n_out;
    cs[static_cast<std::size_t>(k)] = c;
  }
  cs[2] = make_contact(opposite_face(double_face), h);
  return finalize_grasp(cs, cube, fingers, "OG");
}

/// Opposite-faces grasp with the face pair chosen by summed IK joint-limit
/// clearance over the four variants (unreachable variants rank last).
inline Grasp opposite_faces_grasp(const Pose& cube, const FingerSet& fingers,
                                  const GraspOptions& opt = {}) {
  require_upright(cube, opt);
  Grasp best;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (Face f : kVerticalFaces) {
    Grasp g = opposite_faces_variant(f, cube, fingers, opt);
    const GraspFeasibility feas = check_reachability(g, cube, fingers, opt);
    const double score = feas.reachable ? feas.margin : -1e6;
    if (!have || score > best_score + 1e-12) {
      best = g;
      best_score = score;
      have = true;
    }
  }
  return best;
}

/// Rejection-samples uniform face points (vertical faces and top) until the
/// grasp is in force closure and reachable.
inline Grasp sample_force_closure_grasp(const Pose& cube, const FingerSet& fingers,
                                        std::mt19937_64& rng, const GraspOptions& opt = {},
                                        int* attempts_used = nullptr) {
  static constexpr std::array<Face, 5> kFaces{Face::PosX, Face::NegX, Face::PosY, Face::NegY,
                                              Face::PosZ};
  std::uniform_int_distribution<int> face_dist(0, static_cast<int>(kFaces.size()) - 1);
  std::uniform_real_distribution<double> coord(-opt.sample_face_inset * opt.half(),
                                               opt.sample_face_inset * opt.half());
  for (int attempt = 1; attempt <= opt.max_sampling_attempts; ++attempt) {
    std::array<GraspContact, 3> cs;
    for (auto& c : cs) {
      const Face f = kFaces[static_cast<std::size_t>(face_dist(rng))];
      const double u = coord(rng);
      const double v = coord(rng);
      c = make_contact(f, opt.half(), u, v);
    }
    if (attempts_used != nullptr) *attempts_used = attempt;
    bool separated = true;
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        separated = separated && (cs[static_cast<std::size_t>(a)].point -
                                  cs[static_cast<std::size_t>(b)].point)
                                         .norm() > 2.0 * opt.tip_radius;
      }
    }
    if (!separated) continue;
    std::vector<GraspContact> v(cs.begin(), cs.end());
    bool fc = false;
    try {
      fc = is_force_closure(v, opt.mu, opt.friction_edges, opt.half());
    } catch (const DegenerateGrasp&) {
      fc = false;
    }
    if (!fc) continue;
    Grasp g = finalize_grasp(cs, cube, fingers, "sampled");
    if (check_reachability(g, cube, fingers, opt).reachable) return g;
  }
  throw SamplingExhausted("sample_force_closure_grasp: no force-closure grasp found");
}

}  // namespace trifinger
