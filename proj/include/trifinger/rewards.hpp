#pragma once

// Task definitions and the competition rewards for levels 3 and 4.
//
//   r3      = -(0.5 * |e_xy| / d_xy + 0.5 * |e_z| / d_z)
//   err_rot = 2 atan2(|q_xyz|, |q_w|) / pi,  q = q_goal * q_actual^-1
//   r4      = (r3 - err_rot) / 2

#include "trifinger/common.hpp"

#include <random>
#include <vector>

namespace trifinger {

struct TaskSpec {
  int level = 4;
  Pose goal;
  double d_xy = 0.39;
  double d_z = 0.27;
  double episode_duration = 60.0;  // s
  double reward_rate_hz = 10.0;

  void validate() const {
    if (level != 3 && level != 4) throw ConfigError("TaskSpec: level must be 3 or 4");
    if (!(d_xy > 0.0) || !(d_z > 0.0)) throw ConfigError("TaskSpec: d_xy and d_z must be > 0");
    if (!(episode_duration > 0.0)) throw ConfigError("TaskSpec: episode_duration must be > 0");
    if (!(reward_rate_hz > 0.0)) throw ConfigError("TaskSpec: reward_rate_hz must be > 0");
  }
};

struct StepReward {
  double r = 0.0;
  double e_xy_norm = 0.0;  // |e_xy| (m)
  double e_z = 0.0;        // |e_z| (m)
  double err_rot = 0.0;    // normalized, [0, 1]
};

inline double reward_l3(const Vec3& cube_pos, const Vec3& goal_pos, const TaskSpec& spec) {
  const Vec3 e = cube_pos - goal_pos;
  return -(0.5 * std::hypot(e.x(), e.y()) / spec.d_xy + 0.5 * std::abs(e.z()) / spec.d_z);
}

inline double orientation_error(const Quat& q_actual, const Quat& q_goal) {
  const Quat q = q_goal * q_actual.inverse();
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())) / kPi;
}

inline double reward_l4(const Pose& cube, const Pose& goal, const TaskSpec& spec) {
  return 0.5 * (reward_l3(cube.position, goal.position, spec) -
                orientation_error(cube.orientation, goal.orientation));
}

inline StepReward step_reward(const Pose& cube, const TaskSpec& spec) {
  StepReward s;
  const Vec3 e = cube.position - spec.goal.position;
  s.e_xy_norm = std::hypot(e.x(), e.y());
  s.e_z = std::abs(e.z());
  if (spec.level == 3) {
    s.r = reward_l3(cube.position, spec.goal.position, spec);
  } else {
    s.err_rot = orientation_error(cube.orientation, spec.goal.orientation);
    s.r = reward_l4(cube, spec.goal, spec);
  }
  return s;
}

/// Sum of per-tick rewards over cube poses sampled at the reward rate.
inline double episode_return(const std::vector<Pose>& reward_tick_poses, const TaskSpec& spec) {
  double total = 0.0;
  for (const Pose& p : reward_tick_poses) total += step_reward(p, spec).r;
  return total;
}

struct Workspace {
  double arena_radius = 0.195;
  double cube_half = 0.0325;
  double max_height = 0.15;
  double max_tilt_deg = 0.0;  // optional level-4 tilt bound
};

/// Uniform position in the cylinder of radius 0.8 * arena_radius and height
/// [cube_half, max_height]; level 4 adds a uniform yaw and an optional tilt.
inline Pose sample_goal(int level, std::mt19937_64& rng, const Workspace& ws = {}) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double radius = 0.8 * ws.arena_radius;
  Pose goal;
  double x = 0.0;
  double y = 0.0;
  do {
    x = radius * (2.0 * unit(rng) - 1.0);
    y = radius * (2.0 * unit(rng) - 1.0);
  } while (x * x + y * y > radius * radius);
  const double z = ws.cube_half + (ws.max_height - ws.cube_half) * unit(rng);
  goal.position = Vec3(x, y, z);
  if (level == 4) {
    const double yaw = 2.0 * kPi * unit(rng) - kPi;
    Quat q(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
    if (ws.max_tilt_deg > 0.0) {
      const double tilt = ws.max_tilt_deg * kPi / 180.0 * unit(rng);
      const double dir = 2.0 * kPi * unit(rng);
      q = Quat(Eigen::AngleAxisd(tilt, Vec3(std::cos(dir), std::sin(dir), 0.0))) * q;
    }
    goal.orientation = q.normalized();
  }
  return goal;
}

}  // namespace trifinger
