#pragma once

// Shared controller plumbing: the controller interface used by the harness,
// the environment constants controllers need, Jacobian inversion with a
// damped fallback, and the fingertip approach sequence (reach pre-grasp
// points, then close onto the contacts) shared by all three controllers.

#include "trifinger/common.hpp"
#include "trifinger/grasping.hpp"
#include "trifinger/kinematics.hpp"
#include "trifinger/rewards.hpp"
#include "trifinger/sim_world.hpp"

#include <memory>
#include <string>
#include <vector>

namespace trifinger {

struct ControllerEnv {
  FingerSet fingers = make_default_fingers();
  double tau_max = 0.397;
  double tip_radius = 0.0075;
  double cube_side = 0.065;
  Vec3 gravity = Vec3(0.0, 0.0, -kStandardGravity);

  static ControllerEnv from_world(const WorldConfig& w) {
    ControllerEnv e;
    e.fingers = w.fingers;
    e.tau_max = w.tau_max;
    e.tip_radius = w.tip_radius;
    e.cube_side = w.cube_side;
    e.gravity = w.gravity;
    return e;
  }

  GraspOptions grasp_options() const {
    GraspOptions o;
    o.cube_side = cube_side;
    o.tip_radius = tip_radius;
    return o;
  }
};

/// A structured controller ticked at its own rate; the harness holds the
/// returned torque between ticks.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual double rate_hz() const = 0;
  virtual Vec9 tick(const Observation& obs) = 0;
  /// True once any tick had to fall back to a damped Jacobian solve.
  virtual bool singularity_flag() const { return false; }
  /// Grasp actually used (MP may pick its own).
  virtual const Grasp& grasp() const = 0;
  /// Free-form status notes recorded in the episode log.
  virtual std::vector<std::string> notes() const { return {}; }
};

inline constexpr double kSingularCondition = 1e8;

struct JacobianInverse {
  Mat3 inv = Mat3::Identity();
  bool fallback = false;
};

/// Exact inverse when cond(J) <= 1e8, otherwise the damped pseudo-inverse
/// J^T (J J^T + lambda I)^-1 with the fallback flag raised.
inline JacobianInverse invert_jacobian(const Mat3& j, double lambda) {
  JacobianInverse out;
  if (condition_number(j) <= kSingularCondition) {
    out.inv = j.inverse();
  } else {
    out.inv = j.transpose() * (j * j.transpose() + lambda * Mat3::Identity()).inverse();
    out.fallback = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fingertip approach

struct ApproachParams {
  double standoff = 0.02;        // pre-grasp distance outside the face (m)
  double clearance = 0.025;      // height above the cube top when passing over (m)
  double speed = 0.15;           // target speed along the path (m/s)
  double squeeze_depth = 0.01;   // closing target inside the face (m)
  double reach_tolerance = 0.006;
  double reach_timeout = 4.0;    // s
  double close_timeout = 2.0;    // s
  double contact_force = 0.05;   // N, contact detection threshold
  double contact_hold = 0.1;     // s all three in contact before closing completes
};

/// Piecewise-linear path followed at constant speed.
struct TipPath {
  std::vector<Vec3> points;

  double length() const {
    double l = 0.0;
    for (std::size_t k = 1; k < points.size(); ++k) l += (points[k] - points[k - 1]).norm();
    return l;
  }

  Vec3 at(double s) const {
    if (points.empty()) return Vec3::Zero();
    for (std::size_t k = 1; k < points.size(); ++k) {
      const double seg = (points[k] - points[k - 1]).norm();
      if (s <= seg) {
        return seg > 0.0 ? Vec3(points[k - 1] + (s / seg) * (points[k] - points[k - 1]))
                         : points[k];
      }
      s -= seg;
    }
    return points.back();
  }
};

enum class ApproachStage { Reach, Close, Done };

/// Drives the fingertips to pre-grasp points (passing over the cube top when
/// needed) and then closes them onto the grasp contacts. Targets are fixed in
/// the world using the cube pose observed when the approach starts.
class Approach {
 public:
  Approach() = default;
  Approach(const ControllerEnv& env, const Grasp& grasp, const ApproachParams& params)
      : env_(env), grasp_(grasp), params_(params) {}

  ApproachStage stage() const { return stage_; }
  bool done() const { return stage_ == ApproachStage::Done; }
  const Pose& cube_at_start() const { return cube_; }
  double stage_start() const { return stage_start_; }

  /// Fingertip targets for this tick.
  std::array<Vec3, kNumFingers> targets(const Observation& obs) {
    if (!started_) start(obs);
    const double t = obs.time - stage_start_;
    std::array<Vec3, kNumFingers> out;
    if (stage_ == ApproachStage::Reach) {
      bool arrived = true;
      for (int i = 0; i < kNumFingers; ++i) {
        const double s = std::min(params_.speed * t, reach_paths_[i].length());
        out[i] = reach_paths_[i].at(s);
        arrived = arrived && s >= reach_paths_[i].length() &&
                  (obs.fingertips.x[i] - reach_paths_[i].points.back()).norm() <
                      params_.reach_tolerance;
      }
      if (arrived || t > params_.reach_timeout) begin_stage(ApproachStage::Close, obs.time);
      return out;
    }
    for (int i = 0; i < kNumFingers; ++i) {
      const double s = std::min(params_.speed * t, close_paths_[i].length());
      out[i] = close_paths_[i].at(s);
    }
    if (stage_ == ApproachStage::Close) {
      bool all = true;
      for (const auto& c : obs.contacts) all = all && c.normal_force > params_.contact_force;
      if (all) {
        if (!contact_since_) contact_since_ = obs.time;
      } else {
        contact_since_.reset();
      }
      if ((contact_since_ && obs.time - *contact_since_ >= params_.contact_hold) ||
          t > params_.close_timeout) {
        begin_stage(ApproachStage::Done, obs.time);
      }
    }
    return out;
  }

  /// Squeezed contact targets in the world at the approach cube pose.
  std::array<Vec3, kNumFingers> closing_targets() const {
    std::array<Vec3, kNumFingers> out;
    for (int i = 0; i < kNumFingers; ++i) out[i] = close_paths_[i].points.back();
    return out;
  }

 private:
  void start(const Observation& obs) {
    started_ = true;
    cube_ = obs.cube.pose();
    const double top = max_corner_height(cube_);
    for (int i = 0; i < kNumFingers; ++i) {
      const GraspContact& c = grasp_.for_finger(i);
      const Vec3 pre = contact_tip_target(cube_, c, env_.tip_radius, params_.standoff);
      const Vec3 squeeze = contact_tip_target(cube_, c, env_.tip_radius, -params_.squeeze_depth);
      const Vec3 tip = obs.fingertips.x[i];
      TipPath reach;
      reach.points.push_back(tip);
      if (segment_hits_cube(tip, pre)) {
        const double z = std::max(tip.z(), top + env_.tip_radius + params_.clearance);
        reach.points.push_back(Vec3(tip.x(), tip.y(), z));
        reach.points.push_back(Vec3(pre.x(), pre.y(), z));
      }
      reach.points.push_back(pre);
      reach_paths_[i] = reach;
      close_paths_[i].points = {pre, squeeze};
    }
    begin_stage(ApproachStage::Reach, obs.time);
  }

  void begin_stage(ApproachStage s, double time) {
    stage_ = s;
    stage_start_ = time;
    contact_since_.reset();
  }

  double max_corner_height(const Pose& cube) const {
    const double h = 0.5 * env_.cube_side;
    double top = -std::numeric_limits<double>::infinity();
    for (int sx = -1; sx <= 1; sx += 2)
      for (int sy = -1; sy <= 1; sy += 2)
        for (int sz = -1; sz <= 1; sz += 2)
          top = std::max(top, cube.transform(Vec3(sx * h, sy * h, sz * h)).z());
    return top;
  }

  // Conservative test: does the straight segment pass within the cube's
  // circumscribed cylinder (inflated by the tip radius) below its top?
  bool segment_hits_cube(const Vec3& a, const Vec3& b) const {
    const double h = 0.5 * env_.cube_side;
    const double radius = std::sqrt(2.0) * h + env_.tip_radius + 0.005;
    const double top = max_corner_height(cube_) + env_.tip_radius + 0.005;
    for (int k = 0; k <= 50; ++k) {
      const Vec3 p = a + (k / 50.0) * (b - a);
      Vec3 d = p - cube_.position;
      d.z() = 0.0;
      if (d.norm() < radius && p.z() < top) return true;
    }
    return false;
  }

  ControllerEnv env_;
  Grasp grasp_;
  ApproachParams params_;
  bool started_ = false;
  Pose cube_;
  ApproachStage stage_ = ApproachStage::Reach;
  double stage_start_ = 0.0;
  std::optional<double> contact_since_;
  std::array<TipPath, kNumFingers> reach_paths_{};
  std::array<TipPath, kNumFingers> close_paths_{};
};

/// Fingertip Cartesian PD mapped through J^T plus gravity compensation.
inline Vec9 cartesian_pd_torque(const ControllerEnv& env, const Observation& obs,
                                const std::array<Vec3, kNumFingers>& targets, double kp,
                                double kd) {
  Vec9 tau;
  for (int i = 0; i < kNumFingers; ++i) {
    const Vec3 qi = finger_block(obs.joint_state.q, i);
    const Vec3 f = kp * (targets[i] - obs.fingertips.x[i]) - kd * obs.fingertips.dx[i];
    set_finger_block(tau, i,
                     jacobian(env.fingers[i], qi).transpose() * f +
                         gravity_compensation(env.fingers[i], qi, env.gravity));
  }
  return clamp_torque(tau, env.tau_max);
}

/// Cube pose interpolated between `from` and `to` (linear position, slerp).
inline Pose interpolate_pose(const Pose& from, const Pose& to, double s) {
  s = std::clamp(s, 0.0, 1.0);
  Pose p;
  p.position = from.position + s * (to.position - from.position);
  p.orientation = from.orientation.slerp(s, to.orientation).normalized();
  return p;
}

/// Distance metric over cube poses: |dpos| + w * angle(drot).
inline double pose_distance(const Pose& a, const Pose& b, double orientation_weight) {
  return (a.position - b.position).norm() +
         orientation_weight * rotation_angle_between(a.orientation, b.orientation);
}

}  // namespace trifinger
