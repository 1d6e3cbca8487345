#pragma once

// Cartesian impedance control (CIC). In the Manipulate phase the torque is the
// superposition
//   tau = tau1 (impedance toward the goal-shifted reference x_r)
//       + tau2 (squeeze along the inward face normals)
//       + tau3 (cancels the net force of tau2)
//       + tau4 (moment proportional to the rotation error)
//       + gravity compensation,
// clamped to tau_max. The Reach phase reuses the shared fingertip approach.
//
// tau3 and tau4 are minimum-norm solutions of 3x9 systems built from the
// per-finger J^-T; J^-1 is exact when cond(J) <= 1e8 and the damped
// pseudo-inverse otherwise (flagged).

#include "trifinger/controller.hpp"

#include <Eigen/QR>

namespace trifinger {

struct CicParams {
  Vec3 K = Vec3::Constant(200.0);     // impedance stiffness diagonal (1/s^2 with unit task inertia)
  // Fingertip velocity damping (1/s). The paper zeroes D on hardware, where
  // the drives supply damping; the simulated joints are nearly frictionless,
  // so D = 0 leaves the cube oscillating about the goal (see ledger).
  double D = 30.0;
  Vec3 x_r_offset = Vec3::Zero();     // reference point, cube frame
  Vec3 K1 = Vec3::Constant(1.4);      // reference shift gain diagonal
  double K2 = 0.6;                    // surface-normal force (N)
  double K3 = 15.0;                  // rotation moment gain (N m / rad)
  double lambda = 1e-4;
  double filter_cutoff_hz = 20.0;
  double rate_hz = 100.0;
  // Strict four-term parity: report gravity compensation as part of the tau2 slot.
  bool fold_gravity_into_tau2 = false;
  // Reach-phase fingertip PD.
  double reach_kp = 300.0;
  double reach_kd = 4.0;
  double squeeze_depth = 0.01;
  // Speed (m/s) of the intermediate goal fed to the reference shift: it
  // rises vertically to the goal height, then moves horizontally, with the
  // orientation slerped by path fraction. 0 disables (goal used directly).
  double goal_speed = 0.04;
  double orientation_weight = 0.05;  // m/rad, rotation share of the path length

  void validate(double cube_side) const {
    if ((K.array() < 0.0).any() || (K1.array() < 0.0).any() || K3 < 0.0 || D < 0.0) {
      throw ConfigError("CicParams: K, K1, K3, D must be >= 0");
    }
    if (!(goal_speed >= 0.0)) throw ConfigError("CicParams: goal_speed must be >= 0");
    if (!(x_r_offset.norm() < 0.5 * cube_side)) {
      throw ConfigError("CicParams: |x_r_offset| must be < cube_side / 2");
    }
  }
};

enum class CicPhase { Reach, Manipulate };

struct CicState {
  CicPhase phase = CicPhase::Reach;
  Pose filtered_cube_pose;
  bool filter_ready = false;
  Approach approach;
  bool approach_ready = false;
  bool singular = false;
  Pose manipulate_from;
  double manipulate_start = 0.0;
};

/// Per-finger inverses of J at the observed joint angles.
inline std::array<JacobianInverse, kNumFingers> finger_jacobian_inverses(const ControllerEnv& env,
                                                                        const Vec9& q,
                                                                        double lambda) {
  std::array<JacobianInverse, kNumFingers> out;
  for (int i = 0; i < kNumFingers; ++i) {
    out[i] = invert_jacobian(jacobian(env.fingers[i], finger_block(q, i)), lambda);
  }
  return out;
}

inline bool any_fallback(const std::array<JacobianInverse, kNumFingers>& inv) {
  return inv[0].fallback || inv[1].fallback || inv[2].fallback;
}

/// x_hat_r = x_r + K1 (x_g - x_c).
inline Vec3 shift_reference(const Vec3& x_r, const Vec3& cube_center, const Vec3& goal_pos,
                            const Vec3& K1) {
  return x_r + K1.cwiseProduct(goal_pos - cube_center);
}

/// tau1_i = M J_i^-1 (K x_bar_i - D dx_i), x_bar_i = x_r - x_i (unit task
/// inertia). With D = 0 or zero tip velocities this is the paper's form.
inline Vec9 tau1_impedance(const ControllerEnv& env, const Vec9& q,
                           const std::array<Vec3, kNumFingers>& tips, const Vec3& x_r_world,
                           const CicParams& p, bool* fallback = nullptr,
                           const std::array<Vec3, kNumFingers>* tip_velocities = nullptr) {
  const auto inv = finger_jacobian_inverses(env, q, p.lambda);
  if (fallback != nullptr) *fallback = any_fallback(inv);
  Vec9 tau;
  for (int i = 0; i < kNumFingers; ++i) {
    Vec3 xdd = p.K.cwiseProduct(x_r_world - tips[i]);
    if (tip_velocities != nullptr) xdd -= p.D * (*tip_velocities)[i];
    set_finger_block(tau, i, env.fingers[i].joint_inertia_diag.cwiseProduct(inv[i].inv * xdd));
  }
  return tau;
}

/// Inward face normals d_i in the world frame.
inline std::array<Vec3, kNumFingers> contact_normals_world(const Grasp& grasp,
                                                           const Quat& cube_orientation) {
  std::array<Vec3, kNumFingers> d;
  for (int i = 0; i < kNumFingers; ++i) d[i] = cube_orientation * grasp.for_finger(i).normal;
  return d;
}

/// tau2_i = J_i^T (K2 d_i); also returns the forces F2_i.
inline Vec9 tau2_surface_force(const ControllerEnv& env, const Grasp& grasp, const Vec9& q,
                               const Quat& cube_orientation, double K2,
                               std::array<Vec3, kNumFingers>* forces = nullptr) {
  const auto d = contact_normals_world(grasp, cube_orientation);
  Vec9 tau;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 f = K2 * d[i];
    if (forces != nullptr) (*forces)[i] = f;
    set_finger_block(tau, i, jacobian(env.fingers[i], finger_block(q, i)).transpose() * f);
  }
  return tau;
}

/// Minimum-norm tau3 with [J1^-T J2^-T J3^-T] tau3 = -sum_i F2_i.
inline Vec9 tau3_nullify(const ControllerEnv& env, const Vec9& q,
                         const std::array<Vec3, kNumFingers>& f2, double lambda,
                         bool* fallback = nullptr) {
  const auto inv = finger_jacobian_inverses(env, q, lambda);
  if (fallback != nullptr) *fallback = any_fallback(inv);
  Eigen::Matrix<double, 3, 9> a;
  for (int i = 0; i < kNumFingers; ++i) a.block<3, 3>(0, 3 * i) = inv[i].inv.transpose();
  const Vec3 f_res = f2[0] + f2[1] + f2[2];
  const Eigen::Matrix<double, 9, 1> sol =
      a.completeOrthogonalDecomposition().solve(Vec3(-f_res));
  return sol;
}

/// Minimum-norm tau4 with sum_i S(r_i) J_i^-T tau4_i = K3 phi r_phi, where
/// r_i = -x_bar_i / |x_bar_i|. Zero when phi < 1e-6.
inline Vec9 tau4_rotation(const ControllerEnv& env, const Vec9& q,
                          const std::array<Vec3, kNumFingers>& x_bar, const Quat& cube_orientation,
                          const Quat& goal_orientation, double K3, double lambda,
                          bool* fallback = nullptr) {
  const auto [axis, phi] = rotation_error_axis_angle(cube_orientation, goal_orientation);
  if (phi < 1e-6 || K3 == 0.0) return Vec9::Zero();
  const auto inv = finger_jacobian_inverses(env, q, lambda);
  if (fallback != nullptr) *fallback = any_fallback(inv);
  Eigen::Matrix<double, 3, 9> b;
  for (int i = 0; i < kNumFingers; ++i) {
    const double n = x_bar[i].norm();
    const Vec3 r = n > 0.0 ? Vec3(-x_bar[i] / n) : Vec3::Zero();
    b.block<3, 3>(0, 3 * i) = skew(r) * inv[i].inv.transpose();
  }
  const Vec3 omega = K3 * phi * axis;
  const Eigen::Matrix<double, 9, 1> sol = b.completeOrthogonalDecomposition().solve(omega);
  return sol;
}

/// Reference point x_r in the cube frame: centroid of the fingertip centers
/// at the grasp contacts plus `x_r_offset`. With equal stiffness the
/// impedance springs toward the centroid sum to zero net force on the cube
/// (a face-center reference pushes the cube away from a lone finger).
inline Vec3 cic_reference_point(const Grasp& grasp, double tip_radius, const CicParams& p) {
  Vec3 c = Vec3::Zero();
  for (int i = 0; i < kNumFingers; ++i) {
    const GraspContact& g = grasp.for_finger(i);
    c += g.point - tip_radius * g.normal;
  }
  return c / static_cast<double>(kNumFingers) + p.x_r_offset;
}

/// Terms of one Manipulate-phase evaluation, exposed for inspection.
struct CicTerms {
  Vec9 tau1 = Vec9::Zero();
  Vec9 tau2 = Vec9::Zero();
  Vec9 tau3 = Vec9::Zero();
  Vec9 tau4 = Vec9::Zero();
  Vec9 gravity = Vec9::Zero();
  Vec3 x_ref = Vec3::Zero();
  bool fallback = false;

  Vec9 total() const { return tau1 + tau2 + tau3 + tau4 + gravity; }
};

inline CicTerms cic_terms(const ControllerEnv& env, const Observation& obs, const Grasp& grasp,
                          const Pose& cube, const TaskSpec& task, const CicParams& p) {
  CicTerms t;
  const Vec9& q = obs.joint_state.q;
  const Vec3 x_r = cube.transform(cic_reference_point(grasp, env.tip_radius, p));
  t.x_ref = shift_reference(x_r, cube.position, task.goal.position, p.K1);
  bool fb1 = false, fb3 = false, fb4 = false;
  t.tau1 = tau1_impedance(env, q, obs.fingertips.x, t.x_ref, p, &fb1, &obs.fingertips.dx);
  std::array<Vec3, kNumFingers> f2;
  t.tau2 = tau2_surface_force(env, grasp, q, cube.orientation, p.K2, &f2);
  t.tau3 = tau3_nullify(env, q, f2, p.lambda, &fb3);
  // Lever directions for tau4 are taken about the unshifted reference point:
  // the goal shift can be as long as the lever itself and would otherwise
  // point r_i away from the true contact geometry.
  std::array<Vec3, kNumFingers> x_bar;
  for (int i = 0; i < kNumFingers; ++i) x_bar[i] = x_r - obs.fingertips.x[i];
  const double k3 = task.level == 3 ? 0.0 : p.K3;
  t.tau4 = tau4_rotation(env, q, x_bar, cube.orientation, task.goal.orientation, k3, p.lambda, &fb4);
  t.gravity = gravity_compensation(env.fingers, q, env.gravity);
  if (p.fold_gravity_into_tau2) {
    t.tau2 += t.gravity;
    t.gravity.setZero();
  }
  t.fallback = fb1 || fb3 || fb4;
  return t;
}

/// First-order low-pass on the cube pose (position lerp, orientation slerp).
inline Pose filter_pose(const Pose& filtered, const Pose& measured, double cutoff_hz, double dt) {
  const double alpha = 1.0 - std::exp(-2.0 * kPi * cutoff_hz * dt);
  return interpolate_pose(filtered, measured, alpha);
}

/// Intermediate goal at time `elapsed` after the Manipulate phase started
/// from `from`: lift to the goal height, then translate, at `goal_speed`.
inline Pose cic_intermediate_goal(const Pose& from, const Pose& goal, double elapsed,
                                  const CicParams& p) {
  if (p.goal_speed <= 0.0) return goal;
  const Vec3 mid(from.position.x(), from.position.y(), goal.position.z());
  const double l1 = (mid - from.position).norm();
  const double l2 = (goal.position - mid).norm();
  const double lr = p.orientation_weight * rotation_angle_between(from.orientation, goal.orientation);
  const double total = std::max(l1 + l2, lr);
  if (total <= 1e-12) return goal;
  const double s = std::min(1.0, elapsed * p.goal_speed / total);
  Pose out;
  const double d = s * (l1 + l2);
  if (d <= l1) {
    out.position = l1 > 0.0 ? Vec3(from.position + (d / l1) * (mid - from.position)) : mid;
  } else {
    out.position = l2 > 0.0 ? Vec3(mid + ((d - l1) / l2) * (goal.position - mid)) : goal.position;
  }
  out.orientation = from.orientation.slerp(s, goal.orientation).normalized();
  return out;
}

inline std::pair<Vec9, CicState> cic_tick(const ControllerEnv& env, const Observation& obs,
                                          const Grasp& grasp, const TaskSpec& task,
                                          const CicParams& p, CicState state) {
  if (!obs.joint_state.q.allFinite() || !obs.cube.position.allFinite()) {
    throw std::invalid_argument("cic_tick: non-finite observation");
  }
  const double dt = 1.0 / p.rate_hz;
  if (!state.approach_ready) {
    ApproachParams ap;
    ap.squeeze_depth = p.squeeze_depth;
    state.approach = Approach(env, grasp, ap);
    state.approach_ready = true;
  }
  if (state.phase == CicPhase::Reach) {
    const auto targets = state.approach.targets(obs);
    if (!state.approach.done()) {
      return {cartesian_pd_torque(env, obs, targets, p.reach_kp, p.reach_kd), state};
    }
    state.phase = CicPhase::Manipulate;
    state.manipulate_from = obs.cube.pose();
    state.manipulate_start = obs.time;
  }
  if (!state.filter_ready) {
    state.filtered_cube_pose = obs.cube.pose();
    state.filter_ready = true;
  } else {
    state.filtered_cube_pose = filter_pose(state.filtered_cube_pose, obs.cube.pose(),
                                           p.filter_cutoff_hz, dt);
  }
  TaskSpec staged = task;
  staged.goal = cic_intermediate_goal(state.manipulate_from, task.goal,
                                      obs.time - state.manipulate_start, p);
  const CicTerms t = cic_terms(env, obs, grasp, state.filtered_cube_pose, staged, p);
  state.singular = state.singular || t.fallback;
  return {clamp_torque(t.total(), env.tau_max), state};
}

class CicController final : public Controller {
 public:
  CicController(ControllerEnv env, TaskSpec task, Grasp grasp, CicParams params)
      : env_(std::move(env)), task_(std::move(task)), grasp_(std::move(grasp)), params_(params) {
    params_.validate(env_.cube_side);
  }

  std::string name() const override { return "CIC"; }
  double rate_hz() const override { return params_.rate_hz; }
  const Grasp& grasp() const override { return grasp_; }
  bool singularity_flag() const override { return state_.singular; }
  const CicState& state() const { return state_; }

  Vec9 tick(const Observation& obs) override {
    auto [tau, next] = cic_tick(env_, obs, grasp_, task_, params_, std::move(state_));
    state_ = std::move(next);
    return tau;
  }

 private:
  ControllerEnv env_;
  TaskSpec task_;
  Grasp grasp_;
  CicParams params_;
  CicState state_;
};

}  // namespace trifinger
