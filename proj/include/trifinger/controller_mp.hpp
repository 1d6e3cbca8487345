#pragma once

// Grasp and motion planning (MP): pick a grasp, plan a cube path in task
// space with an RRT whose every node admits the grasp, then follow the
// waypoints' joint configurations with a joint-space PD controller that never
// looks at the cube pose. After the plan finishes, straight-line waypoints
// toward the goal are appended until the cube is within tolerance.
//
// Task-space parameterization: position + yaw. Any start/goal tilt is
// interpolated by the path-progress fraction f = d(s,n) / (d(s,n) + d(n,g)),
// so each (position, yaw) maps to exactly one orientation.

#include "trifinger/controller.hpp"

#include <random>
#include <sstream>

namespace trifinger {

class PlanningTimeout : public PlanningFailed {
 public:
  using PlanningFailed::PlanningFailed;
};

struct MpParams {
  double waypoint_dwell = 0.2;     // s per waypoint
  double goal_append_step = 0.01;  // m
  double pd_kp = 4.0;              // N m / rad
  double pd_kd = 0.1;              // N m s / rad
  double rrt_step = 0.02;          // m
  double rrt_step_rot = 0.2;       // rad
  double rrt_goal_bias = 0.2;
  int rrt_timeout = 1500;          // iteration budget per grasp (the "time frame")
  int smoothing_attempts = 50;
  double orientation_weight = 0.05;  // m/rad
  double max_joint_jump = 0.5;     // rad, joint continuity bound between neighbouring nodes
  double squeeze_depth = 0.01;     // m, joint targets press this far into the faces
  double refine_tolerance = 0.005; // m
  int refine_budget = 5;           // maximum refinement rounds
  int max_sampled_grasps = 10;     // sampled candidates after the heuristics
  double sample_margin = 0.05;     // m, sampling box margin around start/goal
  double rate_hz = 500.0;

  void validate() const {
    if (!(waypoint_dwell > 0.0) || !(goal_append_step > 0.0) || !(pd_kp > 0.0) ||
        !(pd_kd >= 0.0) || !(rrt_step > 0.0) || !(rrt_step_rot > 0.0) || rrt_timeout <= 0 ||
        !(orientation_weight > 0.0)) {
      throw ConfigError("MpParams: gains, steps and budgets must be positive");
    }
    if (!(rrt_goal_bias >= 0.0 && rrt_goal_bias <= 1.0)) {
      throw ConfigError("MpParams: rrt_goal_bias must lie in [0, 1]");
    }
  }
};

struct TaskSpaceNode {
  Pose cube_pose;
  Vec9 joint_config = Vec9::Zero();
};

struct MotionPlan {
  Grasp grasp;
  std::vector<TaskSpaceNode> waypoints;
  double waypoint_dwell = 0.2;
  std::vector<std::string> notes;
};

/// Context shared by planning and validation.
struct MpModels {
  ControllerEnv env;
  GraspOptions grasp_options;

  explicit MpModels(const ControllerEnv& e) : env(e), grasp_options(e.grasp_options()) {}
};

namespace detail {

inline Quat tilt_part(const Quat& q) {
  return (Quat(Eigen::AngleAxisd(-yaw_of(q), Vec3::UnitZ())) * q).normalized();
}

/// Planning coordinates (position, unwrapped yaw) with the orientation map
/// induced by the start and goal.
struct TaskSpace {
  Vec3 start_pos;
  double start_yaw = 0.0;
  Quat start_tilt = Quat::Identity();
  Vec3 goal_pos;
  double goal_yaw = 0.0;
  Quat goal_tilt = Quat::Identity();
  double w = 0.05;

  TaskSpace(const Pose& start, const Pose& goal, double weight)
      : start_pos(start.position),
        start_yaw(yaw_of(start.orientation)),
        start_tilt(tilt_part(start.orientation)),
        goal_pos(goal.position),
        goal_tilt(tilt_part(goal.orientation)),
        w(weight) {
    goal_yaw = start_yaw + std::remainder(yaw_of(goal.orientation) - start_yaw, 2.0 * kPi);
  }

  double dist(const Vec3& p1, double y1, const Vec3& p2, double y2) const {
    return (p1 - p2).norm() + w * std::abs(y1 - y2);
  }

  Pose pose(const Vec3& p, double yaw) const {
    const double ds = dist(start_pos, start_yaw, p, yaw);
    const double dg = dist(p, yaw, goal_pos, goal_yaw);
    const double f = ds + dg > 0.0 ? ds / (ds + dg) : 0.0;
    Pose out;
    out.position = p;
    out.orientation =
        (Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) * start_tilt.slerp(f, goal_tilt)).normalized();
    return out;
  }
};

struct RrtNode {
  Vec3 pos;
  double yaw = 0.0;
  Vec9 q = Vec9::Zero();
  int parent = -1;
};

}  // namespace detail

/// Validity predicate for one node: every contact reachable by IK (within
/// the grasp IK tolerance, inside joint limits, tips above the floor), all
/// cube corners above the floor, and, when a neighbour configuration is
/// given, no joint moving more than `max_joint_jump`.
inline std::optional<Vec9> node_configuration(const Grasp& grasp, const Pose& cube,
                                              const MpModels& m, const MpParams& p,
                                              const Vec9* neighbour) {
  const double h = 0.5 * m.env.cube_side;
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2)
      for (int sz = -1; sz <= 1; sz += 2)
        if (cube.transform(Vec3(sx * h, sy * h, sz * h)).z() < -1e-6) return std::nullopt;
  IkOptions ik;
  ik.tolerance = m.grasp_options.ik_tolerance;
  Vec9 q;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 target = contact_tip_target(cube, grasp.for_finger(i), m.env.tip_radius);
    Vec3 warm;
    const Vec3* warm_ptr = nullptr;
    if (neighbour != nullptr) {
      warm = finger_block(*neighbour, i);
      warm_ptr = &warm;
    }
    const IkResult r = solve_ik(m.env.fingers[i], target, warm_ptr, ik);
    if (!r.converged || !within_limits(m.env.fingers[i], r.q)) return std::nullopt;
    if (forward_kinematics(m.env.fingers[i], r.q).z() < m.env.tip_radius - 1e-9) return std::nullopt;
    set_finger_block(q, i, r.q);
  }
  if (neighbour != nullptr && (q - *neighbour).cwiseAbs().maxCoeff() > p.max_joint_jump) {
    return std::nullopt;
  }
  return q;
}

/// Re-validates a node as stored in a plan (used by tests and refinement).
inline bool node_is_valid(const Grasp& grasp, const TaskSpaceNode& node, const MpModels& m) {
  const double h = 0.5 * m.env.cube_side;
  for (int sx = -1; sx <= 1; sx += 2)
    for (int sy = -1; sy <= 1; sy += 2)
      for (int sz = -1; sz <= 1; sz += 2)
        if (node.cube_pose.transform(Vec3(sx * h, sy * h, sz * h)).z() < -1e-6) return false;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 qi = finger_block(node.joint_config, i);
    if (!within_limits(m.env.fingers[i], qi)) return false;
    const Vec3 tip = forward_kinematics(m.env.fingers[i], qi);
    if (tip.z() < m.env.tip_radius - 1e-9) return false;
    const Vec3 target = contact_tip_target(node.cube_pose, grasp.for_finger(i), m.env.tip_radius);
    if ((tip - target).norm() > m.grasp_options.ik_tolerance + 1e-12) return false;
  }
  return true;
}

namespace detail {

/// Straight segment a -> b split so that every step respects both step
/// bounds; returns the intermediate and final nodes (excluding a), or
/// nullopt if any of them is invalid.
inline std::optional<std::vector<RrtNode>> connect(const TaskSpace& ts, const RrtNode& a,
                                                   const Vec3& b_pos, double b_yaw,
                                                   const Grasp& grasp, const MpModels& m,
                                                   const MpParams& p) {
  const double dp = (b_pos - a.pos).norm();
  const double dy = std::abs(b_yaw - a.yaw);
  const int n = std::max(1, static_cast<int>(std::ceil(std::max(dp / p.rrt_step,
                                                                dy / p.rrt_step_rot) - 1e-12)));
  std::vector<RrtNode> out;
  out.reserve(static_cast<std::size_t>(n));
  Vec9 prev = a.q;
  for (int k = 1; k <= n; ++k) {
    const double s = static_cast<double>(k) / n;
    RrtNode node;
    node.pos = a.pos + s * (b_pos - a.pos);
    node.yaw = a.yaw + s * (b_yaw - a.yaw);
    const auto q = node_configuration(grasp, ts.pose(node.pos, node.yaw), m, p, &prev);
    if (!q) return std::nullopt;
    node.q = *q;
    prev = node.q;
    out.push_back(node);
  }
  return out;
}

}  // namespace detail

/// RRT over (position, yaw) with goal bias, then greedy shortcut smoothing.
/// Throws PlanningTimeout when the iteration budget runs out and
/// PlanningFailed when the start or goal pose is itself invalid.
inline std::vector<TaskSpaceNode> rrt_plan(const Pose& start, const Pose& goal, const Grasp& grasp,
                                           const MpModels& m, std::mt19937_64& rng,
                                           const MpParams& p,
                                           const Vec9* start_configuration = nullptr) {
  using detail::RrtNode;
  const detail::TaskSpace ts(start, goal, p.orientation_weight);
  RrtNode root;
  root.pos = ts.start_pos;
  root.yaw = ts.start_yaw;
  {
    const auto q = node_configuration(grasp, start, m, p, start_configuration);
    if (!q) throw PlanningFailed("rrt_plan: start pose not valid for the grasp");
    root.q = *q;
  }
  auto to_plan = [&](const std::vector<RrtNode>& path) {
    std::vector<TaskSpaceNode> out;
    out.reserve(path.size());
    for (const RrtNode& n : path) out.push_back({ts.pose(n.pos, n.yaw), n.q});
    return out;
  };
  if (ts.dist(root.pos, root.yaw, ts.goal_pos, ts.goal_yaw) < 1e-12) return to_plan({root});

  std::vector<RrtNode> tree{root};
  int goal_index = -1;
  const Vec3 lo = start.position.cwiseMin(goal.position) - Vec3::Constant(p.sample_margin);
  const Vec3 hi = start.position.cwiseMax(goal.position) + Vec3::Constant(p.sample_margin);
  const double ylo = std::min(ts.start_yaw, ts.goal_yaw) - 0.5;
  const double yhi = std::max(ts.start_yaw, ts.goal_yaw) + 0.5;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int it = 0; it < p.rrt_timeout && goal_index < 0; ++it) {
    Vec3 sp;
    double sy = 0.0;
    if (unit(rng) < p.rrt_goal_bias) {
      sp = ts.goal_pos;
      sy = ts.goal_yaw;
    } else {
      for (int k = 0; k < 3; ++k) sp[k] = lo[k] + (hi[k] - lo[k]) * unit(rng);
      sy = ylo + (yhi - ylo) * unit(rng);
    }
    std::size_t nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < tree.size(); ++k) {
      const double d = ts.dist(tree[k].pos, tree[k].yaw, sp, sy);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    const RrtNode& from = tree[nearest];
    const double dp = (sp - from.pos).norm();
    const double dy = std::abs(sy - from.yaw);
    double frac = 1.0;
    if (dp > p.rrt_step) frac = std::min(frac, p.rrt_step / dp);
    if (dy > p.rrt_step_rot) frac = std::min(frac, p.rrt_step_rot / dy);
    RrtNode node;
    node.pos = from.pos + frac * (sp - from.pos);
    node.yaw = from.yaw + frac * (sy - from.yaw);
    const auto q = node_configuration(grasp, ts.pose(node.pos, node.yaw), m, p, &from.q);
    if (!q) continue;
    node.q = *q;
    node.parent = static_cast<int>(nearest);
    tree.push_back(node);
    const RrtNode& added = tree.back();
    if ((added.pos - ts.goal_pos).norm() <= p.rrt_step &&
        std::abs(added.yaw - ts.goal_yaw) <= p.rrt_step_rot) {
      if ((added.pos - ts.goal_pos).norm() < 1e-12 && std::abs(added.yaw - ts.goal_yaw) < 1e-12) {
        goal_index = static_cast<int>(tree.size()) - 1;
      } else {
        const auto seg = detail::connect(ts, added, ts.goal_pos, ts.goal_yaw, grasp, m, p);
        if (seg) {
          int parent = static_cast<int>(tree.size()) - 1;
          for (RrtNode n : *seg) {
            n.parent = parent;
            tree.push_back(n);
            parent = static_cast<int>(tree.size()) - 1;
          }
          goal_index = parent;
        }
      }
    }
  }
  if (goal_index < 0) throw PlanningTimeout("rrt_plan: iteration budget exhausted");

  std::vector<RrtNode> path;
  for (int k = goal_index; k >= 0; k = tree[static_cast<std::size_t>(k)].parent) {
    path.push_back(tree[static_cast<std::size_t>(k)]);
  }
  std::reverse(path.begin(), path.end());

  // Greedy shortcut smoothing: replace path[i..j] by a straight validated
  // segment when that succeeds.
  for (int attempt = 0; attempt < p.smoothing_attempts && path.size() > 2; ++attempt) {
    std::uniform_int_distribution<std::size_t> pick(0, path.size() - 1);
    std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    if (i > j) std::swap(i, j);
    if (j < i + 2) continue;
    const auto seg = detail::connect(ts, path[i], path[j].pos, path[j].yaw, grasp, m, p);
    if (!seg || seg->size() >= j - i) continue;
    // The segment's joint configurations are continuous from path[i]; the
    // final node must also hand over continuously to path[j + 1].
    if (j + 1 < path.size() &&
        (seg->back().q - path[j + 1].q).cwiseAbs().maxCoeff() > p.max_joint_jump) {
      continue;
    }
    std::vector<RrtNode> next(path.begin(), path.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    next.insert(next.end(), seg->begin(), seg->end());
    next.insert(next.end(), path.begin() + static_cast<std::ptrdiff_t>(j) + 1, path.end());
    path = std::move(next);
  }
  return to_plan(path);
}

/// Candidate grasps in planning order: CG with each vertical face left free,
/// then the four OG variants.
inline std::vector<Grasp> heuristic_grasp_candidates(const Pose& cube, const MpModels& m) {
  std::vector<Grasp> out;
  const double h = m.grasp_options.half();
  for (Face free_face : kVerticalFaces) {
    std::array<GraspContact, 3> cs;
    std::size_t k = 0;
    for (Face f : kVerticalFaces) {
      if (f != free_face) cs[k++] = make_contact(f, h);
    }
    out.push_back(finalize_grasp(cs, cube, m.env.fingers, "CG"));
  }
  for (Face f : kVerticalFaces) {
    out.push_back(opposite_faces_variant(f, cube, m.env.fingers, m.grasp_options));
  }
  return out;
}

/// Tries the heuristic candidates, then sampled force-closure grasps, and
/// returns the first successful plan.
inline MotionPlan plan_with_grasps(const Pose& start, const Pose& goal, const MpModels& m,
                                   std::mt19937_64& rng, const MpParams& p,
                                   const Vec9* start_configuration = nullptr) {
  MotionPlan plan;
  plan.waypoint_dwell = p.waypoint_dwell;
  auto attempt = [&](const Grasp& g) -> bool {
    if (!is_force_closure(g, m.grasp_options.mu, m.grasp_options)) return false;
    try {
      plan.waypoints = rrt_plan(start, goal, g, m, rng, p, start_configuration);
      plan.grasp = g;
      return true;
    } catch (const PlanningFailed&) {
      return false;
    }
  };
  // The goal-aware centre-of-three grasp is tried first; the remaining
  // face permutations and opposite-face variants follow in fixed order.
  std::vector<Grasp> candidates;
  try {
    candidates.push_back(center_of_three_grasp(start, goal, 4, m.env.fingers, m.grasp_options));
  } catch (const Error&) {
  }
  auto faces_of = [](const Grasp& g) {
    std::array<int, kNumFingers> f{};
    for (int i = 0; i < kNumFingers; ++i) f[i] = static_cast<int>(g.contacts[i].face);
    std::sort(f.begin(), f.end());
    return f;
  };
  for (const Grasp& g : heuristic_grasp_candidates(start, m)) {
    if (!candidates.empty() && g.label == "CG" && faces_of(g) == faces_of(candidates.front())) continue;
    candidates.push_back(g);
  }
  for (const Grasp& g : candidates) {
    if (attempt(g)) return plan;
  }
  for (int k = 0; k < p.max_sampled_grasps; ++k) {
    Grasp g;
    try {
      g = sample_force_closure_grasp(start, m.env.fingers, rng, m.grasp_options);
    } catch (const SamplingExhausted&) {
      break;
    }
    if (attempt(g)) return plan;
  }
  throw PlanningFailed("plan_with_grasps: no grasp admitted a plan");
}

// ---------------------------------------------------------------------------
// Execution

struct MpExecState {
  bool started = false;
  double start_time = 0.0;
};

/// Joint targets for waypoint k: the stored IK configuration plus a squeeze
/// offset dq = J^-1 (depth * inward normal) computed from the plan alone.
inline Vec9 waypoint_target(const MotionPlan& plan, std::size_t k, const ControllerEnv& env,
                            double squeeze_depth) {
  const TaskSpaceNode& node = plan.waypoints[k];
  Vec9 q = node.joint_config;
  if (squeeze_depth <= 0.0) return q;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 qi = finger_block(node.joint_config, i);
    const Vec3 dx = squeeze_depth * node.cube_pose.rotate(plan.grasp.for_finger(i).normal);
    const JacobianInverse inv = invert_jacobian(jacobian(env.fingers[i], qi), 1e-4);
    set_finger_block(q, i, qi + inv.inv * dx);
  }
  return q;
}

/// Index of the current waypoint and the blend toward the next one.
inline std::pair<std::size_t, double> waypoint_schedule(const MotionPlan& plan, double elapsed) {
  const std::size_t n = plan.waypoints.size();
  const double slot = std::max(0.0, elapsed) / plan.waypoint_dwell;
  const auto k = static_cast<std::size_t>(std::floor(slot));
  if (k + 1 >= n) return {n - 1, 0.0};
  return {k, slot - static_cast<double>(k)};
}

/// Time at which the schedule reaches the last waypoint.
inline double plan_duration(const MotionPlan& plan) {
  return plan.waypoint_dwell * static_cast<double>(plan.waypoints.empty() ? 0 : plan.waypoints.size() - 1);
}

/// Open-loop joint PD along the plan: reads only the joint state and time.
inline std::pair<Vec9, MpExecState> execute_plan(const ControllerEnv& env, const MotionPlan& plan,
                                                 const Observation& obs, const MpParams& p,
                                                 MpExecState state) {
  if (plan.waypoints.empty()) throw std::invalid_argument("execute_plan: empty plan");
  if (!state.started) {
    state.started = true;
    state.start_time = obs.time;
  }
  const auto [k, blend] = waypoint_schedule(plan, obs.time - state.start_time);
  Vec9 target = waypoint_target(plan, k, env, p.squeeze_depth);
  if (blend > 0.0) {
    target += blend * (waypoint_target(plan, k + 1, env, p.squeeze_depth) - target);
  }
  const Vec9& q = obs.joint_state.q;
  const Vec9 tau = p.pd_kp * (target - q) - p.pd_kd * obs.joint_state.dq +
                   gravity_compensation(env.fingers, q, env.gravity);
  return {clamp_torque(tau, env.tau_max), state};
}

/// Appends straight-line waypoints that shift the plan's final cube pose by
/// the observed position error. Returns the number appended; stops early
/// (keeping what was appended) when a waypoint fails IK.
inline int refine_to_goal(MotionPlan& plan, const CubeState& observed_cube, const Pose& goal,
                          const MpModels& m, const MpParams& p) {
  if (plan.waypoints.empty()) throw std::invalid_argument("refine_to_goal: empty plan");
  const Vec3 err = goal.position - observed_cube.position;
  const double dist = err.norm();
  if (dist < p.refine_tolerance) return 0;
  const int n = static_cast<int>(std::ceil(dist / p.goal_append_step - 1e-9));
  const TaskSpaceNode last = plan.waypoints.back();
  Vec9 prev = last.joint_config;
  int appended = 0;
  for (int k = 1; k <= n; ++k) {
    TaskSpaceNode node;
    node.cube_pose = last.cube_pose;
    node.cube_pose.position += (static_cast<double>(k) / n) * err;
    const auto q = node_configuration(plan.grasp, node.cube_pose, m, p, &prev);
    if (!q) {
      plan.notes.push_back("ik_failed_on_append");
      break;
    }
    node.joint_config = *q;
    prev = *q;
    plan.waypoints.push_back(node);
    ++appended;
  }
  return appended;
}

// ---------------------------------------------------------------------------
// Controller

enum class MpPhase { Plan, Approach, Execute, Done };

struct MpState {
  MpPhase phase = MpPhase::Plan;
  MotionPlan plan;
  MpExecState exec;
  Approach approach;
  int refine_rounds = 0;
  double segment_end = 0.0;  // time the current schedule reaches its last waypoint
  bool singular = false;
  std::vector<std::string> notes;
};

class MpController final : public Controller {
 public:
  /// `fixed_grasp` pins the grasp (TG/CG/OG pairing); without it the planner
  /// iterates candidates (PG). A pinned grasp that admits no plan falls back
  /// to the candidate iteration and records a note.
  MpController(ControllerEnv env, TaskSpec task, std::optional<Grasp> fixed_grasp, MpParams params,
               std::uint64_t seed)
      : models_(env), task_(std::move(task)), fixed_(std::move(fixed_grasp)), params_(params),
        rng_(mix_seed(seed, 0x4d50ULL)) {
    params_.validate();
  }

  std::string name() const override { return "MP"; }
  double rate_hz() const override { return params_.rate_hz; }
  const Grasp& grasp() const override { return state_.plan.grasp; }
  bool singularity_flag() const override { return state_.singular; }
  std::vector<std::string> notes() const override { return state_.notes; }
  const MpState& state() const { return state_; }

  Vec9 tick(const Observation& obs) override {
    const ControllerEnv& env = models_.env;
    if (state_.phase == MpPhase::Plan) make_plan(obs);
    if (state_.phase == MpPhase::Approach) {
      const auto targets = state_.approach.targets(obs);
      if (!state_.approach.done()) return cartesian_pd_torque(env, obs, targets, 300.0, 4.0);
      state_.phase = MpPhase::Execute;
      state_.exec = MpExecState{};
      state_.segment_end = obs.time + plan_duration(state_.plan);
    }
    if (state_.phase == MpPhase::Execute && obs.time >= state_.segment_end + params_.waypoint_dwell) {
      // Plan finished: refine toward the goal position if needed.
      if (state_.refine_rounds < params_.refine_budget) {
        const std::size_t before = state_.plan.waypoints.size();
        const int added = refine_to_goal(state_.plan, obs.cube, task_.goal, models_, params_);
        if (added > 0) {
          ++state_.refine_rounds;
          // Resume the schedule at the first appended waypoint.
          state_.exec.start_time = obs.time - params_.waypoint_dwell * static_cast<double>(before - 1);
          state_.segment_end = state_.exec.start_time + plan_duration(state_.plan);
        } else {
          state_.phase = MpPhase::Done;
        }
      } else {
        state_.phase = MpPhase::Done;
      }
    }
    auto [tau, next] = execute_plan(env, state_.plan, obs, params_, state_.exec);
    state_.exec = next;
    return tau;
  }

 private:
  void make_plan(const Observation& obs) {
    const Pose start = obs.cube.pose();
    Pose goal = task_.goal;
    if (task_.level == 3) goal.orientation = start.orientation;
    bool planned = false;
    if (fixed_) {
      try {
        state_.plan.waypoints = rrt_plan(start, goal, *fixed_, models_, rng_, params_);
        state_.plan.grasp = *fixed_;
        state_.plan.waypoint_dwell = params_.waypoint_dwell;
        planned = true;
      } catch (const PlanningFailed&) {
        state_.notes.push_back("fixed_grasp_plan_failed_fallback_to_candidates");
      }
    }
    if (!planned) {
      try {
        state_.plan = plan_with_grasps(start, goal, models_, rng_, params_);
      } catch (const PlanningFailed&) {
        // Nothing admits a plan: hold the start pose with the first candidate
        // that is reachable so the episode still runs.
        state_.notes.push_back("planning_failed_hold_start");
        Grasp g = fixed_ ? *fixed_ : heuristic_grasp_candidates(start, models_).front();
        state_.plan.grasp = g;
        state_.plan.waypoint_dwell = params_.waypoint_dwell;
        const GraspFeasibility f = check_reachability(g, start, models_.env.fingers,
                                                      models_.grasp_options);
        state_.plan.waypoints = {TaskSpaceNode{start, f.joint_positions()}};
      }
    }
    ApproachParams ap;
    ap.squeeze_depth = params_.squeeze_depth;
    state_.approach = Approach(models_.env, state_.plan.grasp, ap);
    state_.phase = MpPhase::Approach;
  }

  MpModels models_;
  TaskSpec task_;
  std::optional<Grasp> fixed_;
  MpParams params_;
  std::mt19937_64 rng_;
  MpState state_;
};

}  // namespace trifinger
