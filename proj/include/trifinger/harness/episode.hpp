#pragma once

// Single-episode protocol: centred cube with a seeded start yaw, a relative
// goal with orientation error exactly delta_theta, the configured
// controller/grasp pairing, and a log sampled at the reward rate.

#include "trifinger/controller_cic.hpp"
#include "trifinger/controller_cpc.hpp"
#include "trifinger/controller_mp.hpp"
#include "trifinger/grasping.hpp"
#include "trifinger/harness/config.hpp"
#include "trifinger/rewards.hpp"
#include "trifinger/sim_world.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace trifinger::harness {

struct EpisodeStart {
  Pose start;
  Pose goal;
};

/// Lowest cube-centre height at which no corner is below the floor.
inline double resting_height(const Quat& orientation, double half) {
  double h = 0.0;
  for (int sx = -1; sx <= 1; sx += 2) {
    for (int sy = -1; sy <= 1; sy += 2) {
      for (int sz = -1; sz <= 1; sz += 2) {
        const Vec3 corner = orientation * Vec3(sx * half, sy * half, sz * half);
        h = std::max(h, -corner.z());
      }
    }
  }
  return h;
}

/// Relative-goal construction (seeded, paired across cells): every random
/// draw is made in a fixed order and does not depend on delta_theta, the
/// controller or the grasp. The rotation axis is tilted beta from vertical
/// with sin(beta) bounded so the goal's z-axis tilts at most
/// `max_axis_tilt_deg`; the rotation angle is exactly delta_theta.
inline EpisodeStart make_episode_start(const ExperimentConfig& c, double delta_theta_deg,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x474f414cULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u_yaw = unit(rng);
  const double u_tilt = unit(rng);
  const double u_tilt_dir = unit(rng);
  const double u_sign = unit(rng);
  const double u_radius = unit(rng);
  const double u_dir = unit(rng);
  const double u_lift = unit(rng);

  const double half = c.world.cube_half();
  const double deg = kPi / 180.0;
  EpisodeStart s;
  const double yaw0 = (2.0 * u_yaw - 1.0) * c.goal.initial_yaw_range_deg * deg;
  s.start.orientation = Quat(Eigen::AngleAxisd(yaw0, Vec3::UnitZ()));
  s.start.position = Vec3(0.0, 0.0, half);

  const double dtheta = delta_theta_deg * deg;
  double sin_beta = 0.0;
  const double one_minus_cos = 1.0 - std::cos(dtheta);
  if (one_minus_cos > 0.0) {
    const double bound = std::sqrt((1.0 - std::cos(c.goal.max_axis_tilt_deg * deg)) / one_minus_cos);
    sin_beta = u_tilt * std::min(1.0, bound);
  }
  const double beta = std::asin(sin_beta);
  const double gamma = 2.0 * kPi * u_tilt_dir;
  const Vec3 axis(std::sin(beta) * std::cos(gamma), std::sin(beta) * std::sin(gamma), std::cos(beta));
  const double angle = u_sign < 0.5 ? -dtheta : dtheta;
  s.goal.orientation = (Quat(Eigen::AngleAxisd(angle, axis)) * s.start.orientation).normalized();

  const double r = c.goal.offset_radius * std::sqrt(u_radius);
  const double phi = 2.0 * kPi * u_dir;
  const double lift = c.goal.lift_min + (c.goal.lift_max - c.goal.lift_min) * u_lift;
  s.goal.position = s.start.position + Vec3(r * std::cos(phi), r * std::sin(phi), lift);
  s.goal.position.z() = std::max(s.goal.position.z(), resting_height(s.goal.orientation, half));
  return s;
}

/// Level-3 goals for tuning/residual protocols: centred start with seeded
/// yaw, goal position drawn by `sample_goal` (orientation unused).
inline EpisodeStart make_level3_start(const ExperimentConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x4c33ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  EpisodeStart s;
  const double yaw0 = (2.0 * unit(rng) - 1.0) * c.goal.initial_yaw_range_deg * kPi / 180.0;
  s.start.orientation = Quat(Eigen::AngleAxisd(yaw0, Vec3::UnitZ()));
  s.start.position = Vec3(0.0, 0.0, c.world.cube_half());
  Workspace ws;
  ws.arena_radius = c.world.arena_radius;
  ws.cube_half = c.world.cube_half();
  s.goal = sample_goal(3, rng, ws);
  s.goal.orientation = s.start.orientation;
  return s;
}

// ---------------------------------------------------------------------------
// Controller factory

struct ControllerBuild {
  std::unique_ptr<Controller> controller;
  std::vector<std::string> notes;
};

/// Builds the controller for one episode. TG/CG/OG grasps are computed from
/// the start and goal poses; PG runs the planner's grasp selection (for CPC
/// and CIC the planned grasp is then used by the reactive controller).
inline ControllerBuild make_controller(const ExperimentConfig& c, const TaskSpec& task,
                                       const Pose& start, std::uint64_t seed) {
  const ControllerEnv env = ControllerEnv::from_world(c.world);
  const GraspOptions go = env.grasp_options();
  ControllerBuild out;
  std::optional<Grasp> grasp;
  switch (c.grasp) {
    case GraspKind::TG: grasp = triangle_grasp(start, task.goal, env.fingers, go); break;
    case GraspKind::CG: grasp = center_of_three_grasp(start, task.goal, task.level, env.fingers, go); break;
    case GraspKind::OG: grasp = opposite_faces_grasp(start, env.fingers, go); break;
    case GraspKind::PG:
      if (c.controller != ControllerKind::MP) {
        std::mt19937_64 rng(mix_seed(seed, 0x5047ULL));
        const MpModels models(env);
        const MotionPlan plan = plan_with_grasps(start, task.goal, models, rng, c.mp);
        grasp = plan.grasp;
        for (const std::string& n : plan.notes) out.notes.push_back("pg: " + n);
      }
      break;
  }
  switch (c.controller) {
    case ControllerKind::CPC:
      out.controller = std::make_unique<CpcController>(env, task, *grasp, c.cpc);
      break;
    case ControllerKind::CIC:
      out.controller = std::make_unique<CicController>(env, task, *grasp, c.cic);
      break;
    case ControllerKind::MP:
      out.controller = std::make_unique<MpController>(env, task, grasp, c.mp, seed);
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episode log

struct EpisodeSample {
  double t = 0.0;
  Vec9 q = Vec9::Zero();
  Vec9 dq = Vec9::Zero();
  Vec9 tau = Vec9::Zero();  // torque applied during the preceding world step
  Pose cube;
  std::array<bool, kNumFingers> in_contact{false, false, false};
  std::array<double, kNumFingers> normal_force{0.0, 0.0, 0.0};
  double reward = 0.0;
};

struct EpisodeTerminal {
  double pos_err_cm = 0.0;
  double ori_err_deg = 0.0;
  bool dropped = false;
  double episode_return = 0.0;
};

struct EpisodeLog {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string controller;
  std::string grasp_kind;
  double delta_theta_deg = 0.0;
  int level = 4;
  double reward_rate_hz = 10.0;
  double d_xy = 0.39;
  double d_z = 0.27;
  Pose start;
  Pose goal;
  Grasp grasp;
  bool singular = false;
  double max_abs_residual = 0.0;
  std::vector<std::string> errors;
  std::vector<std::string> notes;
  std::vector<EpisodeSample> samples;  // t = 1/rate, 2/rate, ..., duration
  EpisodeTerminal terminal;
};

/// Terminal metrics recomputed from the logged series: errors at the last
/// sample, drop via detect_drop on the sampled contacts, return = sum of the
/// per-sample rewards (recomputed from the logged cube poses).
inline EpisodeTerminal compute_terminal(const EpisodeLog& log, const DropCriteria& drop = {}) {
  EpisodeTerminal t;
  if (log.samples.empty()) return t;
  TaskSpec task;
  task.level = log.level;
  task.goal = log.goal;
  task.d_xy = log.d_xy;
  task.d_z = log.d_z;
  const EpisodeSample& last = log.samples.back();
  t.pos_err_cm = 100.0 * (last.cube.position - log.goal.position).norm();
  t.ori_err_deg = rotation_angle_between(last.cube.orientation, log.goal.orientation) * 180.0 / kPi;
  std::vector<DropSample> history;
  history.reserve(log.samples.size());
  double ret = 0.0;
  for (const EpisodeSample& s : log.samples) {
    history.push_back(DropSample{s.t, s.in_contact, s.cube.position, log.goal.position});
    ret += step_reward(s.cube, task).r;
  }
  t.dropped = detect_drop(history, drop);
  t.episode_return = ret;
  return t;
}

/// Optional per-tick action modifier (residual policies): receives the
/// observation, the episode task and the base torque, returns the torque to
/// apply.
using ActionHook = std::function<Vec9(const Observation&, const TaskSpec&, const Vec9&)>;

/// World and controller for one episode, reset to the episode start.
struct PreparedEpisode {
  std::unique_ptr<World> world;
  std::unique_ptr<Controller> controller;  // null if construction failed
  TaskSpec task;
  Observation initial;
  std::vector<std::string> notes;
  std::vector<std::string> errors;
};

inline PreparedEpisode prepare_episode(const ExperimentConfig& c, const EpisodeStart& es, std::uint64_t seed) {
  PreparedEpisode p;
  p.task = c.task;
  p.task.goal = es.goal;
  p.world = std::make_unique<World>(c.world, c.make_observation_model());
  CubeState cube;
  cube.position = es.start.position;
  cube.orientation = es.start.orientation;
  p.initial = p.world->reset(cube, default_initial_joint_positions(c.world.fingers), mix_seed(seed, 0x574fULL));
  try {
    ControllerBuild b = make_controller(c, p.task, es.start, seed);
    p.controller = std::move(b.controller);
    p.notes = std::move(b.notes);
  } catch (const std::exception& e) {
    p.errors.push_back(std::string("controller_init: ") + e.what());
  }
  return p;
}

inline EpisodeLog run_episode_with_start(const ExperimentConfig& c, const EpisodeStart& es,
                                         std::uint64_t seed, double delta_theta_deg,
                                         const ActionHook& hook = nullptr) {
  EpisodeLog log;
  log.config_hash = config_hash(c);
  log.seed = seed;
  log.controller = to_string(c.controller);
  log.grasp_kind = to_string(c.grasp);
  log.delta_theta_deg = delta_theta_deg;
  log.level = c.task.level;
  log.reward_rate_hz = c.task.reward_rate_hz;
  log.d_xy = c.task.d_xy;
  log.d_z = c.task.d_z;
  log.start = es.start;
  log.goal = es.goal;

  PreparedEpisode prepared = prepare_episode(c, es, seed);
  World& world = *prepared.world;
  const TaskSpec& task = prepared.task;
  Observation obs = prepared.initial;
  std::unique_ptr<Controller> ctl = std::move(prepared.controller);
  log.notes = std::move(prepared.notes);
  log.errors = std::move(prepared.errors);

  const double dt = c.world.dt;
  const auto total_steps = static_cast<std::int64_t>(std::llround(task.episode_duration / dt));
  const auto sample_every = std::max<std::int64_t>(1, std::llround(1.0 / (task.reward_rate_hz * dt)));
  const std::int64_t tick_every =
      ctl ? std::max<std::int64_t>(1, std::llround(1.0 / (ctl->rate_hz() * dt))) : 1;
  bool controller_failed = !ctl;
  Vec9 tau = Vec9::Zero();
  log.samples.reserve(static_cast<std::size_t>(total_steps / sample_every) + 1);
  for (std::int64_t k = 0; k < total_steps; ++k) {
    if (!controller_failed && k % tick_every == 0) {
      try {
        tau = ctl->tick(obs);
        if (hook) {
          const Vec9 base = tau;
          tau = hook(obs, task, base);
          log.max_abs_residual = std::max(log.max_abs_residual, (tau - base).cwiseAbs().maxCoeff());
        }
      } catch (const std::exception& e) {
        log.errors.push_back(std::string("controller: ") + e.what());
        controller_failed = true;
        tau = Vec9::Zero();
      }
    }
    try {
      obs = world.step(TorqueCommand{tau});
    } catch (const std::exception& e) {
      log.errors.push_back(std::string("world: ") + e.what());
      break;
    }
    if ((k + 1) % sample_every == 0) {
      EpisodeSample s;
      s.t = static_cast<double>(k + 1) * dt;
      const JointState& js = world.joints();
      s.q = js.q;
      s.dq = js.dq;
      s.tau = tau;
      s.cube = world.cube().pose();
      for (int i = 0; i < kNumFingers; ++i) {
        s.in_contact[i] = obs.contacts[i].in_contact;
        s.normal_force[i] = obs.contacts[i].normal_force;
      }
      s.reward = step_reward(s.cube, task).r;
      log.samples.push_back(s);
    }
  }
  if (log.samples.empty()) {
    EpisodeSample s;
    s.t = world.time();
    s.cube = world.cube().pose();
    s.reward = step_reward(s.cube, task).r;
    log.samples.push_back(s);
  }
  if (ctl) {
    log.grasp = ctl->grasp();
    log.singular = ctl->singularity_flag();
    for (const std::string& n : ctl->notes()) log.notes.push_back(n);
  }
  log.terminal = compute_terminal(log, c.drop);
  return log;
}

/// Runs one episode of `c` (controller, grasp, delta_theta_deg, level) with
/// the goal drawn from `seed`. Level 3 uses the level-3 goal sampler.
inline EpisodeLog run_episode(const ExperimentConfig& c, std::uint64_t seed,
                              const ActionHook& hook = nullptr) {
  c.validate();
  const EpisodeStart es = c.task.level == 3 ? make_level3_start(c, seed)
                                            : make_episode_start(c, c.delta_theta_deg, seed);
  return run_episode_with_start(c, es, seed, c.task.level == 3 ? 0.0 : c.delta_theta_deg, hook);
}

}  // namespace trifinger::harness
