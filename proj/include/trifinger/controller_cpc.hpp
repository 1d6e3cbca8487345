#pragma once

// Cartesian position control (CPC): per-fingertip PID on the Cartesian error,
// mapped to joint torques through J^T, plus gravity compensation and an
// exponential gain schedule that grows the PD gains while progress stalls.
//
// Phases: Reach (pre-grasp points), Grasp (close onto the contacts), Move
// (targets rigidly attached to a cube pose interpolated from the grasp pose
// to the goal, with a slow integral correction on the observed cube position
// once the interpolation has finished).

#include "trifinger/controller.hpp"

namespace trifinger {

struct CpcParams {
  double kp = 300.0;               // N/m
  double ki = 5.0;                 // N/(m s)
  double kd = 4.0;                 // N s/m
  double gain_growth_rate = 0.5;   // 1/s
  double gain_clip = 3.0;
  double schedule_interval = 0.5;  // s
  double lambda = 1e-4;
  double approach_speed = 0.05;    // m/s, fingertip and cube-reference target speed
  double squeeze_depth = 0.01;     // m
  double goal_feedback = 1.0;      // 1/s, integral correction on the cube position
  double orientation_weight = 0.05;  // m/rad, converts rotation into path length
  double integral_limit = 0.05;    // m s, anti-windup bound per axis
  double rate_hz = 200.0;

  void validate() const {
    if (!(kp > 0.0)) throw ConfigError("CpcParams: kp must be > 0");
    if (!(gain_clip >= 1.0)) throw ConfigError("CpcParams: gain_clip must be >= 1");
    if (!(gain_growth_rate >= 0.0)) throw ConfigError("CpcParams: gain_growth_rate must be >= 0");
    if (!(approach_speed > 0.0)) throw ConfigError("CpcParams: approach_speed must be > 0");
  }
};

enum class CpcPhase { Reach, Grasp, Move };

struct CpcState {
  Vec9 integral_error = Vec9::Zero();
  CpcPhase phase = CpcPhase::Reach;
  double gain_multiplier = 1.0;
  std::int64_t tick_count = 0;

  // Stagnation detector: error at the start of the current interval.
  double interval_start_time = 0.0;
  double interval_start_error = std::numeric_limits<double>::infinity();
  bool stagnant = false;

  Approach approach;
  bool approach_ready = false;
  double move_start_time = 0.0;
  double move_progress = 0.0;
  Pose move_from;
  Vec3 goal_correction = Vec3::Zero();
  bool singular = false;
};

/// Cartesian PID force: multiplier * (kp e + kd de) + ki * integral.
inline Vec3 cpc_cartesian_force(const Vec3& e, const Vec3& e_dot, const Vec3& integral,
                                const CpcParams& p, double multiplier) {
  return multiplier * (p.kp * e + p.kd * e_dot) + p.ki * integral;
}

/// While stagnant the multiplier grows by exp(rate * dt) up to the clip;
/// otherwise it resets to 1.
inline CpcState update_gain_schedule(CpcState state, const CpcParams& p, bool error_stagnant,
                                     double dt) {
  if (error_stagnant) {
    state.gain_multiplier =
        std::min(state.gain_multiplier * std::exp(p.gain_growth_rate * dt), p.gain_clip);
  } else {
    state.gain_multiplier = 1.0;
  }
  state.gain_multiplier = std::clamp(state.gain_multiplier, 1.0, std::max(1.0, p.gain_clip));
  state.stagnant = error_stagnant;
  return state;
}

/// PID torque toward the given fingertip targets (zero target velocity);
/// updates the integral state.
inline Vec9 cpc_torque(const ControllerEnv& env, const Observation& obs,
                       const std::array<Vec3, kNumFingers>& targets, const CpcParams& p,
                       CpcState& state, double dt) {
  Vec9 tau;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 qi = finger_block(obs.joint_state.q, i);
    const Vec3 e = targets[i] - obs.fingertips.x[i];
    Vec3 integ = finger_block(state.integral_error, i) + dt * e;
    for (int k = 0; k < 3; ++k) integ[k] = clamp_abs(integ[k], p.integral_limit);
    set_finger_block(state.integral_error, i, integ);
    const Vec3 f = cpc_cartesian_force(e, -obs.fingertips.dx[i], integ, p, state.gain_multiplier);
    const Mat3 j = jacobian(env.fingers[i], qi);
    if (condition_number(j) > kSingularCondition) state.singular = true;
    set_finger_block(tau, i,
                     j.transpose() * f + gravity_compensation(env.fingers[i], qi, env.gravity));
  }
  return clamp_torque(tau, env.tau_max);
}

namespace detail {

// Tracking error used by the stagnation detector. Once the fingers press on
// the cube the component along the contact normal is excluded: the squeeze
// target sits inside the face by design and can never be reached.
inline double cpc_tracking_error(const Observation& obs, const std::array<Vec3, 3>& targets,
                                 const Grasp& grasp, const Pose& cube, bool exclude_normal) {
  double worst = 0.0;
  for (int i = 0; i < kNumFingers; ++i) {
    Vec3 e = targets[i] - obs.fingertips.x[i];
    if (exclude_normal) {
      const Vec3 n = cube.rotate(grasp.for_finger(i).normal);
      e -= e.dot(n) * n;
    }
    worst = std::max(worst, e.norm());
  }
  return worst;
}

inline void cpc_enter_phase(CpcState& s, CpcPhase phase, double time) {
  s.phase = phase;
  s.gain_multiplier = 1.0;
  s.integral_error.setZero();
  s.interval_start_time = time;
  s.interval_start_error = std::numeric_limits<double>::infinity();
  s.stagnant = false;
}

}  // namespace detail

/// One CPC control tick.
inline std::pair<Vec9, CpcState> cpc_tick(const ControllerEnv& env, const Observation& obs,
                                          const Grasp& grasp, const TaskSpec& task,
                                          const CpcParams& p, CpcState state) {
  if (!obs.joint_state.q.allFinite() || !obs.cube.position.allFinite()) {
    throw std::invalid_argument("cpc_tick: non-finite observation");
  }
  const double dt = 1.0 / p.rate_hz;
  if (!state.approach_ready) {
    ApproachParams ap;
    ap.squeeze_depth = p.squeeze_depth;
    state.approach = Approach(env, grasp, ap);
    state.approach_ready = true;
    detail::cpc_enter_phase(state, CpcPhase::Reach, obs.time);
  }

  std::array<Vec3, kNumFingers> targets;
  if (state.phase != CpcPhase::Move) {
    targets = state.approach.targets(obs);
    const CpcPhase now = state.approach.stage() == ApproachStage::Reach ? CpcPhase::Reach
                         : state.approach.done()                        ? CpcPhase::Move
                                                                        : CpcPhase::Grasp;
    if (now != state.phase) {
      detail::cpc_enter_phase(state, now, obs.time);
      if (now == CpcPhase::Move) {
        state.move_start_time = obs.time;
        state.move_from = state.approach.cube_at_start();
        state.move_progress = 0.0;
      }
    }
  }
  if (state.phase == CpcPhase::Move) {
    Pose goal = task.goal;
    if (task.level == 3) goal.orientation = state.move_from.orientation;
    const double dist = pose_distance(state.move_from, goal, p.orientation_weight);
    state.move_progress =
        dist > 1e-9 ? std::min(1.0, state.move_progress + dt * p.approach_speed / dist) : 1.0;
    if (state.move_progress >= 1.0) {
      Vec3 err = task.goal.position - obs.cube.position;
      state.goal_correction += dt * p.goal_feedback * err;
      for (int k = 0; k < 3; ++k) state.goal_correction[k] = clamp_abs(state.goal_correction[k], 0.03);
    }
    Pose ref = interpolate_pose(state.move_from, goal, state.move_progress);
    ref.position += state.goal_correction;
    for (int i = 0; i < kNumFingers; ++i) {
      targets[i] = contact_tip_target(ref, grasp.for_finger(i), env.tip_radius, -p.squeeze_depth);
    }
  }

  // Stagnation bookkeeping on interval boundaries.
  const double err = detail::cpc_tracking_error(obs, targets, grasp, obs.cube.pose(),
                                                state.phase != CpcPhase::Reach);
  if (!std::isfinite(state.interval_start_error)) {
    state.interval_start_error = err;
    state.interval_start_time = obs.time;
  }
  bool stagnant = state.stagnant;
  if (obs.time - state.interval_start_time >= p.schedule_interval - 1e-12) {
    stagnant = (state.interval_start_error - err) < 1e-3 && err > 2e-3;
    state.interval_start_error = err;
    state.interval_start_time = obs.time;
  }
  state = update_gain_schedule(state, p, stagnant, dt);

  const Vec9 tau = cpc_torque(env, obs, targets, p, state, dt);
  ++state.tick_count;
  return {tau, state};
}

class CpcController final : public Controller {
 public:
  CpcController(ControllerEnv env, TaskSpec task, Grasp grasp, CpcParams params)
      : env_(std::move(env)), task_(std::move(task)), grasp_(std::move(grasp)), params_(params) {
    params_.validate();
  }

  std::string name() const override { return "CPC"; }
  double rate_hz() const override { return params_.rate_hz; }
  const Grasp& grasp() const override { return grasp_; }
  bool singularity_flag() const override { return state_.singular; }
  const CpcState& state() const { return state_; }

  Vec9 tick(const Observation& obs) override {
    auto [tau, next] = cpc_tick(env_, obs, grasp_, task_, params_, std::move(state_));
    state_ = std::move(next);
    return tau;
  }

 private:
  ControllerEnv env_;
  TaskSpec task_;
  Grasp grasp_;
  CpcParams params_;
  CpcState state_;
};

}  // namespace trifinger
