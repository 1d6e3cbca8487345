#include "trifinger/controller_mp.hpp"

#include <gtest/gtest.h>

using namespace trifinger;

namespace {

const ControllerEnv kEnv{};
const MpModels kModels(kEnv);

Pose resting(double yaw = 0.0) {
  return Pose{Vec3(0, 0, 0.0325), Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()))};
}

double path_length(const std::vector<TaskSpaceNode>& w) {
  double l = 0.0;
  for (std::size_t k = 1; k < w.size(); ++k) l += (w[k].cube_pose.position - w[k - 1].cube_pose.position).norm();
  return l;
}

Observation observation_at(const Vec9& q, double t) {
  Observation o;
  o.joint_state.q = q;
  o.fingertips = fingertip_state(kEnv.fingers, q, Vec9::Zero());
  o.time = t;
  return o;
}

}  // namespace

TEST(Planner, GoalEqualsStartGivesSingleWaypoint) {
  std::mt19937_64 rng(1);
  const MotionPlan plan = plan_with_grasps(resting(), resting(), kModels, rng, MpParams{});
  ASSERT_EQ(plan.waypoints.size(), 1u);
  EXPECT_EQ(plan.grasp.label, "CG");
  EXPECT_TRUE(node_is_valid(plan.grasp, plan.waypoints[0], kModels));
}

TEST(Planner, PureTranslationUsesHeuristicGrasp) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Pose goal = resting();
    goal.position += Vec3(0.05, 0.0, 0.0);
    const MotionPlan plan = plan_with_grasps(resting(), goal, kModels, rng, MpParams{});
    EXPECT_NE(plan.grasp.label, "sampled");
    EXPECT_LT((plan.waypoints.back().cube_pose.position - goal.position).norm(), 1e-9);
  }
}

TEST(Planner, SameSeedReplays) {
  Pose goal{Vec3(0.03, -0.02, 0.07), Quat(Eigen::AngleAxisd(0.3, Vec3(0.2, 0.1, 1).normalized()))};
  auto run = [&]() {
    std::mt19937_64 rng(9);
    return plan_with_grasps(resting(0.2), goal, kModels, rng, MpParams{});
  };
  const MotionPlan a = run(), b = run();
  ASSERT_EQ(a.waypoints.size(), b.waypoints.size());
  EXPECT_EQ(a.grasp.label, b.grasp.label);
  for (std::size_t k = 0; k < a.waypoints.size(); ++k) {
    EXPECT_EQ(a.waypoints[k].joint_config, b.waypoints[k].joint_config);
    EXPECT_EQ(a.waypoints[k].cube_pose.position, b.waypoints[k].cube_pose.position);
  }
}

TEST(Planner, WaypointsValidAndWithinStepBounds) {
  const MpParams p;
  std::mt19937_64 goals(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    const Pose start = resting(0.5 * u(goals));
    const Pose goal{Vec3(0.05 * u(goals), 0.05 * u(goals), 0.0325 + 0.03 * (1 + u(goals))),
                    Quat(Eigen::AngleAxisd(0.3 * u(goals), Vec3::UnitZ())) * start.orientation};
    std::mt19937_64 rng(static_cast<std::uint64_t>(k));
    const MotionPlan plan = plan_with_grasps(start, goal, kModels, rng, p);
    for (std::size_t j = 0; j < plan.waypoints.size(); ++j) {
      EXPECT_TRUE(node_is_valid(plan.grasp, plan.waypoints[j], kModels));
      if (j > 0) {
        const auto& a = plan.waypoints[j - 1].cube_pose;
        const auto& b = plan.waypoints[j].cube_pose;
        EXPECT_LE((b.position - a.position).norm(), p.rrt_step + 1e-12);
        EXPECT_LE(std::abs(yaw_of(b.orientation) - yaw_of(a.orientation)), p.rrt_step_rot + 1e-9);
      }
    }
  }
}

TEST(Planner, TranslationPathLengthWithinBounds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Pose goal = resting();
    goal.position += Vec3(0.05 * u(rng), 0.05 * u(rng), 0.03 * (1.0 + u(rng)));
    const Grasp g = center_of_three_grasp(resting(), goal, 3, kEnv.fingers, kModels.grasp_options);
    const auto w = rrt_plan(resting(), goal, g, kModels, rng, MpParams{});
    const double straight = (goal.position - resting().position).norm();
    EXPECT_GE(path_length(w), straight - 1e-12);
    EXPECT_LE(path_length(w), 3.0 * straight);
  }
}

TEST(Planner, InvalidStartThrows) {
  Pose high = resting();
  high.position.z() = 0.6;
  std::mt19937_64 rng(1);
  const Grasp g = center_of_three_grasp(resting(), resting(), 3, kEnv.fingers, kModels.grasp_options);
  EXPECT_THROW(rrt_plan(high, resting(), g, kModels, rng, MpParams{}), PlanningFailed);
}

TEST(Execute, AtWaypointIsGravityCompensation) {
  std::mt19937_64 rng(1);
  MotionPlan plan = plan_with_grasps(resting(), resting(), kModels, rng, MpParams{});
  MpParams p;
  p.squeeze_depth = 0.0;
  const Vec9 q = plan.waypoints[0].joint_config;
  const auto [tau, st] = execute_plan(kEnv, plan, observation_at(q, 1.0), p, MpExecState{});
  EXPECT_LT((tau - gravity_compensation(kEnv.fingers, q, kEnv.gravity)).norm(), 1e-15);
}

TEST(Execute, HandEvaluatedPdTorque) {
  std::mt19937_64 rng(1);
  MotionPlan plan = plan_with_grasps(resting(), resting(), kModels, rng, MpParams{});
  MpParams p;
  p.squeeze_depth = 0.0;
  p.pd_kp = 2.0;
  p.pd_kd = 0.0;
  Vec9 q = plan.waypoints[0].joint_config;
  q[4] -= 0.1;
  const auto [tau, st] = execute_plan(kEnv, plan, observation_at(q, 0.0), p, MpExecState{});
  const Vec9 g = gravity_compensation(kEnv.fingers, q, kEnv.gravity);
  EXPECT_NEAR(tau[4] - g[4], 0.2, 1e-12);
}

TEST(Execute, ScheduleScalesWithDwell) {
  std::mt19937_64 rng(2);
  Pose goal = resting();
  goal.position += Vec3(0.04, 0, 0.02);
  MotionPlan plan = plan_with_grasps(resting(), goal, kModels, rng, MpParams{});
  ASSERT_GT(plan.waypoints.size(), 1u);
  const double full = plan_duration(plan);
  plan.waypoint_dwell *= 0.5;
  EXPECT_NEAR(plan_duration(plan), 0.5 * full, 1e-15);
  EXPECT_EQ(waypoint_schedule(plan, plan_duration(plan)).first, plan.waypoints.size() - 1);
}

TEST(Execute, OpenLoopInCubePose) {
  std::mt19937_64 rng(4);
  Pose goal = resting();
  goal.position += Vec3(0.03, 0.02, 0.03);
  const MotionPlan plan = plan_with_grasps(resting(), goal, kModels, rng, MpParams{});
  Observation a = observation_at(plan.waypoints[0].joint_config + Vec9::Constant(0.01), 0.37);
  Observation b = a;
  b.cube.position += Vec3(0.02, -0.01, 0.03);
  b.cube.orientation = Quat(Eigen::AngleAxisd(0.4, Vec3::UnitX()));
  EXPECT_EQ(execute_plan(kEnv, plan, a, MpParams{}, MpExecState{}).first,
            execute_plan(kEnv, plan, b, MpParams{}, MpExecState{}).first);
}

TEST(Refine, WithinToleranceUnchanged) {
  std::mt19937_64 rng(1);
  MotionPlan plan = plan_with_grasps(resting(), resting(), kModels, rng, MpParams{});
  CubeState observed;
  observed.position = resting().position + Vec3(0.003, 0, 0);
  EXPECT_EQ(refine_to_goal(plan, observed, resting(), kModels, MpParams{}), 0);
  EXPECT_EQ(plan.waypoints.size(), 1u);
}

TEST(Refine, AppendsValidWaypointsAtStep) {
  std::mt19937_64 rng(1);
  Pose goal = resting();
  goal.position.z() += 0.03;
  MotionPlan plan = plan_with_grasps(resting(), goal, kModels, rng, MpParams{});
  const std::size_t before = plan.waypoints.size();
  CubeState observed;
  observed.position = goal.position - Vec3(0.03, 0, 0);  // 3 cm short
  EXPECT_EQ(refine_to_goal(plan, observed, goal, kModels, MpParams{}), 3);
  ASSERT_EQ(plan.waypoints.size(), before + 3);
  for (const auto& w : plan.waypoints) EXPECT_TRUE(node_is_valid(plan.grasp, w, kModels));
}

TEST(MpController, FixedGraspIsUsed) {
  const Pose goal{Vec3(0.03, 0, 0.06), Quat::Identity()};
  const Grasp tg = triangle_grasp(resting(), goal, kEnv.fingers, kModels.grasp_options);
  TaskSpec task;
  task.level = 3;
  task.goal = goal;
  MpController ctl(kEnv, task, tg, MpParams{}, 5);
  WorldConfig wc;
  World w(wc);
  const Observation obs = w.reset(CubeState{}, default_initial_joint_positions(wc.fingers), 1);
  ctl.tick(obs);
  EXPECT_EQ(ctl.grasp().label, "TG");
}

TEST(MpParams, Validation) {
  MpParams p;
  p.rrt_goal_bias = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}
