#pragma once

// Finger kinematics for the tri-finger assembly.
//
// Each finger is a 3-DoF serial chain hanging from a base frame:
//   joint 0  yaw about the vertical axis through the base,
//   link 0   vertical drop of length l0 from the base,
//   joint 1  pitch about the horizontal axis orthogonal to the finger heading,
//   link 1   length l1,
//   joint 2  pitch about an axis parallel to joint 1,
//   link 2   length l2 ending at the fingertip sphere center.
// At zero angles both pitch links point straight down. Positive pitch swings
// a link radially outward along the current heading.

#include "trifinger/common.hpp"

#include <Eigen/SVD>

#include <vector>

namespace trifinger {

struct JointLimit {
  double lower = -kPi;
  double upper = kPi;
};

struct FingerModel {
  Vec3 base_position = Vec3(0.0, 0.0, 0.29);
  double base_yaw = 0.0;  // heading of the finger base about world z
  std::array<double, 3> link_lengths{0.16, 0.16, 0.16};
  std::array<JointLimit, 3> joint_limits{
      JointLimit{-kPi / 2.0, kPi / 2.0}, JointLimit{-kPi, kPi}, JointLimit{-kPi, kPi}};
  std::array<double, 3> link_masses{0.02, 0.05, 0.03};
  Vec3 joint_inertia_diag = Vec3::Constant(0.004);
};

using FingerSet = std::array<FingerModel, kNumFingers>;

struct JointState {
  Vec9 q = Vec9::Zero();
  Vec9 dq = Vec9::Zero();
  Vec9 tau = Vec9::Zero();
};

struct FingertipState {
  std::array<Vec3, kNumFingers> x{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::array<Vec3, kNumFingers> dx{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
};

// Bases on a circle of `radius` at `height`, 120 degrees apart, headings
// pointing radially outward.
inline FingerSet make_default_fingers(double radius = 0.0455, double height = 0.29) {
  FingerSet fingers;
  for (int i = 0; i < kNumFingers; ++i) {
    const double angle = 2.0 * kPi * i / kNumFingers;
    fingers[i].base_yaw = angle;
    fingers[i].base_position = Vec3(radius * std::cos(angle), radius * std::sin(angle), height);
  }
  return fingers;
}

namespace detail {

// Point on the chain parameterized by a fixed vertical drop below the base,
// a distance `a` along link 1 and `b` along link 2.
inline Vec3 chain_point(const FingerModel& m, const Vec3& q, double drop, double a, double b) {
  const double heading = m.base_yaw + q[0];
  const double x_local = a * std::sin(q[1]) + b * std::sin(q[1] + q[2]);
  const double z_local = -drop - a * std::cos(q[1]) - b * std::cos(q[1] + q[2]);
  return m.base_position + Vec3(std::cos(heading) * x_local, std::sin(heading) * x_local, z_local);
}

inline Mat3 chain_point_jacobian(const FingerModel& m, const Vec3& q, double a, double b) {
  const double heading = m.base_yaw + q[0];
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  const double s1 = std::sin(q[1]);
  const double c1 = std::cos(q[1]);
  const double s12 = std::sin(q[1] + q[2]);
  const double c12 = std::cos(q[1] + q[2]);
  const double x_local = a * s1 + b * s12;
  const double dx_dq1 = a * c1 + b * c12;
  const double dz_dq1 = a * s1 + b * s12;
  const double dx_dq2 = b * c12;
  const double dz_dq2 = b * s12;
  Mat3 j;
  j << -s * x_local, c * dx_dq1, c * dx_dq2,
        c * x_local, s * dx_dq1, s * dx_dq2,
        0.0,         dz_dq1,     dz_dq2;
  return j;
}

}  // namespace detail

inline Vec3 forward_kinematics(const FingerModel& model, const Vec3& q3) {
  const auto& l = model.link_lengths;
  return detail::chain_point(model, q3, l[0], l[1], l[2]);
}

inline Mat3 jacobian(const FingerModel& model, const Vec3& q3) {
  const auto& l = model.link_lengths;
  return detail::chain_point_jacobian(model, q3, l[1], l[2]);
}

/// Solves dq = J^T (J J^T + lambda I)^-1 dx.
///
/// With lambda = 0 the system must be well conditioned; a condition number of
/// J J^T above 1e12 raises SingularSystem.
template <int Rows, int Cols>
Eigen::Matrix<double, Cols, 1> damped_pinv_solve(const Eigen::Matrix<double, Rows, Cols>& j,
                                                 const Eigen::Matrix<double, Rows, 1>& dx,
                                                 double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("damped_pinv_solve: lambda must be >= 0");
  using Square = Eigen::Matrix<double, Rows, Rows>;
  Square jjt = j * j.transpose();
  if (lambda == 0.0) {
    Eigen::JacobiSVD<Square> svd(jjt);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    if (!(smin > 0.0) || smax / smin > 1e12) {
      throw SingularSystem("damped_pinv_solve: J J^T is numerically singular");
    }
  } else {
    jjt.diagonal().array() += lambda;
  }
  const Eigen::Matrix<double, Rows, 1> y = jjt.ldlt().solve(dx);
  return j.transpose() * y;
}

/// Condition number of a square or wide matrix (ratio of extreme singular values).
template <typename Derived>
double condition_number(const Eigen::MatrixBase<Derived>& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m.eval());
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

// Point masses sit at the link midpoints.
inline double potential_energy(const FingerModel& model, const Vec3& q3,
                               const Vec3& gravity = Vec3(0.0, 0.0, -kStandardGravity)) {
  const auto& l = model.link_lengths;
  const auto& m = model.link_masses;
  const Vec3 p0 = detail::chain_point(model, q3, 0.5 * l[0], 0.0, 0.0);
  const Vec3 p1 = detail::chain_point(model, q3, l[0], 0.5 * l[1], 0.0);
  const Vec3 p2 = detail::chain_point(model, q3, l[0], l[1], 0.5 * l[2]);
  return -(m[0] * gravity.dot(p0) + m[1] * gravity.dot(p1) + m[2] * gravity.dot(p2));
}

/// Joint torques that cancel the gravity load of the links, i.e. dV/dq.
inline Vec3 gravity_compensation(const FingerModel& model, const Vec3& q3,
                                 const Vec3& gravity = Vec3(0.0, 0.0, -kStandardGravity)) {
  const auto& l = model.link_lengths;
  const auto& m = model.link_masses;
  // Link 0 lies on the yaw axis and its midpoint does not move.
  const Mat3 j1 = detail::chain_point_jacobian(model, q3, 0.5 * l[1], 0.0);
  const Mat3 j2 = detail::chain_point_jacobian(model, q3, l[1], 0.5 * l[2]);
  return -(m[1] * j1.transpose() * gravity + m[2] * j2.transpose() * gravity);
}

inline Vec3 clamp_to_limits(const FingerModel& model, const Vec3& q3) {
  Vec3 out;
  for (int k = 0; k < 3; ++k) {
    out[k] = std::clamp(q3[k], model.joint_limits[k].lower, model.joint_limits[k].upper);
  }
  return out;
}

inline bool within_limits(const FingerModel& model, const Vec3& q3, double tol = 1e-12) {
  for (int k = 0; k < 3; ++k) {
    if (q3[k] < model.joint_limits[k].lower - tol || q3[k] > model.joint_limits[k].upper + tol) {
      return false;
    }
  }
  return true;
}

// Smallest distance of any joint to its nearest limit.
inline double limit_clearance(const FingerModel& model, const Vec3& q3) {
  double clearance = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    clearance = std::min({clearance, q3[k] - model.joint_limits[k].lower,
                          model.joint_limits[k].upper - q3[k]});
  }
  return clearance;
}

inline FingertipState fingertip_state(const FingerSet& fingers, const Vec9& q, const Vec9& dq) {
  FingertipState out;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 qi = finger_block(q, i);
    out.x[i] = forward_kinematics(fingers[i], qi);
    out.dx[i] = jacobian(fingers[i], qi) * finger_block(dq, i);
  }
  return out;
}

inline Vec9 gravity_compensation(const FingerSet& fingers, const Vec9& q,
                                 const Vec3& gravity = Vec3(0.0, 0.0, -kStandardGravity)) {
  Vec9 tau;
  for (int i = 0; i < kNumFingers; ++i) {
    set_finger_block(tau, i, gravity_compensation(fingers[i], finger_block(q, i), gravity));
  }
  return tau;
}

struct IkOptions {
  double lambda = 1e-4;
  int max_iterations = 100;
  double tolerance = 2e-3;       // accept within this distance (m)
  double stop_tolerance = 1e-6;  // stop iterating below this distance (m)
  double max_step = 0.3;         // rad per iteration
};

struct IkResult {
  Vec3 q = Vec3::Zero();
  double error = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// Canonical restart configurations: elbow outward, elbow outward shallow, elbow inward.
inline std::array<Vec3, 3> ik_restart_seeds() {
  return {Vec3(0.0, 0.9, -2.0), Vec3(0.0, 0.5, -1.2), Vec3(0.0, -0.9, 2.0)};
}

/// Damped least-squares IK for one finger, projected onto the joint limits
/// after every iteration.
inline IkResult solve_ik_from(const FingerModel& model, const Vec3& target, const Vec3& seed,
                              const IkOptions& opt = {}) {
  IkResult res;
  Vec3 q = clamp_to_limits(model, seed);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Vec3 err = target - forward_kinematics(model, q);
    if (err.norm() < opt.stop_tolerance) break;
    Vec3 step = damped_pinv_solve<3, 3>(jacobian(model, q), err, opt.lambda);
    const double n = step.cwiseAbs().maxCoeff();
    if (n > opt.max_step) step *= opt.max_step / n;
    q = clamp_to_limits(model, q + step);
  }
  res.q = q;
  res.error = (target - forward_kinematics(model, q)).norm();
  res.converged = res.error <= opt.tolerance;
  return res;
}

/// Tries the warm start first (when given), then the canonical restarts, and
/// returns the first converged solution or the best attempt.
inline IkResult solve_ik(const FingerModel& model, const Vec3& target,
                         const Vec3* warm_start = nullptr, const IkOptions& opt = {}) {
  IkResult best;
  auto consider = [&](const Vec3& seed) {
    IkResult r = solve_ik_from(model, target, seed, opt);
    if (r.error < best.error) best = r;
    return r.converged;
  };
  if (warm_start != nullptr && consider(*warm_start)) return best;
  for (const Vec3& seed : ik_restart_seeds()) {
    if (consider(seed)) return best;
  }
  return best;
}

/// Rest configuration used at episode start: each fingertip hovers outside
/// the cube footprint on the far side of the arena center from its base
/// (the side it works on), at `tip_radius` from the center.
inline Vec9 default_initial_joint_positions(const FingerSet& fingers, double tip_radius = 0.11,
                                            double tip_height = 0.09) {
  Vec9 q;
  for (int i = 0; i < kNumFingers; ++i) {
    const double a = fingers[i].base_yaw + kPi;
    const Vec3 target(tip_radius * std::cos(a), tip_radius * std::sin(a), tip_height);
    set_finger_block(q, i, solve_ik(fingers[i], target).q);
  }
  return q;
}

}  // namespace trifinger
