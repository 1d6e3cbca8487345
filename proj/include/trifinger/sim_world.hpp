#pragma once

// Desk-scale deterministic physics for the tri-finger platform: a cube rigid
// body, three fingertip spheres, a floor and gravity.
//
// Contacts are penalty springs. Friction is an elastic stick anchor per
// contact whose tangential force saturates at mu * normal force, after which
// the anchor slides. The world advances in fixed control steps of `dt`, each
// split into `substeps` semi-implicit Euler sub-steps.

#include "trifinger/common.hpp"
#include "trifinger/kinematics.hpp"

#include <optional>
#include <random>
#include <variant>
#include <vector>

namespace trifinger {

struct CubeState {
  Vec3 position = Vec3(0.0, 0.0, 0.0325);
  Quat orientation = Quat::Identity();
  Vec3 linear_velocity = Vec3::Zero();
  Vec3 angular_velocity = Vec3::Zero();

  Pose pose() const { return Pose{position, orientation}; }
};

struct WorldConfig {
  double cube_side = 0.065;
  double cube_mass = 0.094;
  double friction_mu = 0.5;
  // Fingertip-cube penalty contact, also used for the tangential stick spring.
  double contact_stiffness = 2000.0;
  double contact_damping = 50.0;
  // Per-corner cube-floor penalty contact (fingertip-floor contact is an
  // inelastic velocity projection).
  double floor_stiffness = 5000.0;
  double floor_damping = 20.0;
  double tip_radius = 0.0075;
  double dt = 0.001;
  int substeps = 4;
  Vec3 gravity = Vec3(0.0, 0.0, -kStandardGravity);
  double tau_max = 0.397;
  double arena_radius = 0.195;
  double joint_damping = 0.01;
  // Internal PD used to turn position commands into torques (gravity
  // compensation is added on top).
  double position_kp = 3.0;
  double position_kd = 0.05;
  FingerSet fingers = make_default_fingers();

  double cube_half() const { return 0.5 * cube_side; }
  double cube_inertia() const { return cube_mass * cube_side * cube_side / 6.0; }

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("WorldConfig: dt must be > 0");
    if (!(friction_mu >= 0.0)) throw ConfigError("WorldConfig: friction_mu must be >= 0");
    if (!(tau_max > 0.0)) throw ConfigError("WorldConfig: tau_max must be > 0");
    if (substeps < 1) throw ConfigError("WorldConfig: substeps must be >= 1");
    if (!(cube_side > 0.0) || !(cube_mass > 0.0)) throw ConfigError("WorldConfig: bad cube");
  }
};

struct ContactRecord {
  int finger_index = 0;
  Vec3 contact_point = Vec3::Zero();
  double normal_force = 0.0;
  Vec3 tangential_force = Vec3::Zero();
  bool in_contact = false;
};

struct ObservationModel {
  enum class Kind { Ideal, Realistic };
  Kind kind = Kind::Ideal;
  double rate_hz = 10.0;
  double position_noise_std = 0.001;     // m
  double orientation_noise_std = 0.01;   // rad, per rotation-vector axis

  static ObservationModel ideal() { return {}; }
  static ObservationModel realistic() {
    ObservationModel m;
    m.kind = Kind::Realistic;
    return m;
  }
};

struct Observation {
  JointState joint_state;
  FingertipState fingertips;
  CubeState cube;
  std::array<ContactRecord, kNumFingers> contacts;
  double time = 0.0;
};

struct TorqueCommand {
  Vec9 tau = Vec9::Zero();
};

struct PositionCommand {
  Vec9 q = Vec9::Zero();
};

using Command = std::variant<TorqueCommand, PositionCommand>;

class World {
 public:
  explicit World(WorldConfig config = {}, ObservationModel model = {})
      : config_(std::move(config)), model_(model) {
    config_.validate();
  }

  const WorldConfig& config() const { return config_; }
  const ObservationModel& observation_model() const { return model_; }
  void set_observation_model(const ObservationModel& model) { model_ = model; }

  // Exact internal state, independent of the observation model.
  const CubeState& cube() const { return cube_; }
  const JointState& joints() const { return joints_; }
  double time() const { return time_; }
  std::int64_t step_count() const { return steps_; }

  Observation reset(const CubeState& initial_cube, const Vec9& initial_q, std::uint64_t seed) {
    if (!initial_q.allFinite()) throw InvalidPose("reset: non-finite joint positions");
    CubeState cube = initial_cube;
    cube.orientation.normalize();
    for (const Vec3& corner : cube_corners(cube)) {
      if (corner.z() < -1e-9) throw InvalidPose("reset: cube intersects the floor");
    }
    cube_ = cube;
    joints_ = JointState{};
    for (int i = 0; i < kNumFingers; ++i) {
      set_finger_block(joints_.q, i,
                       clamp_to_limits(config_.fingers[i], finger_block(initial_q, i)));
    }
    seed_ = seed;
    time_ = 0.0;
    steps_ = 0;
    tip_anchor_.fill(std::nullopt);
    floor_anchor_.fill(std::nullopt);
    // Contact records at reset reflect geometry only; anchors stay empty.
    auto tip_anchor = tip_anchor_;
    auto floor_anchor = floor_anchor_;
    compute_forces(tip_anchor, floor_anchor);
    sample_cube_for_window(0);
    return observe();
  }

  Observation step(const Command& command) {
    Vec9 tau;
    if (const auto* tc = std::get_if<TorqueCommand>(&command)) {
      if (!tc->tau.allFinite()) throw std::invalid_argument("step: non-finite torque command");
      tau = tc->tau;
    } else {
      const auto& pc = std::get<PositionCommand>(command);
      if (!pc.q.allFinite()) throw std::invalid_argument("step: non-finite position command");
      tau = config_.position_kp * (pc.q - joints_.q) - config_.position_kd * joints_.dq +
            gravity_compensation(config_.fingers, joints_.q, config_.gravity);
    }
    joints_.tau = clamp_torque(tau, config_.tau_max);

    const double h = config_.dt / config_.substeps;
    for (int s = 0; s < config_.substeps; ++s) substep(h);
    ++steps_;
    time_ = static_cast<double>(steps_) * config_.dt;
    check_blowup();

    const auto window = static_cast<std::int64_t>(std::floor(time_ * model_.rate_hz + 1e-9));
    if (window != sampled_window_) sample_cube_for_window(window);
    return observe();
  }

  Observation observe() const { return observe(model_); }

  Observation observe(const ObservationModel& model) const {
    Observation obs;
    obs.joint_state = joints_;
    obs.fingertips = fingertip_state(config_.fingers, joints_.q, joints_.dq);
    obs.contacts = contacts_;
    obs.time = time_;
    if (model.kind == ObservationModel::Kind::Ideal) {
      obs.cube = cube_;
    } else {
      obs.cube = held_cube_;
      std::mt19937_64 rng(mix_seed(seed_, static_cast<std::uint64_t>(sampled_window_)));
      std::normal_distribution<double> normal(0.0, 1.0);
      Vec3 dp, dr;
      for (int k = 0; k < 3; ++k) dp[k] = model.position_noise_std * normal(rng);
      for (int k = 0; k < 3; ++k) dr[k] = model.orientation_noise_std * normal(rng);
      obs.cube.position += dp;
      const double angle = dr.norm();
      if (angle > 0.0) {
        obs.cube.orientation =
            (Quat(Eigen::AngleAxisd(angle, dr / angle)) * obs.cube.orientation).normalized();
      }
    }
    return obs;
  }

  std::array<Vec3, 8> cube_corners(const CubeState& cube) const {
    std::array<Vec3, 8> corners;
    const double hs = config_.cube_half();
    int k = 0;
    for (int sx = -1; sx <= 1; sx += 2) {
      for (int sy = -1; sy <= 1; sy += 2) {
        for (int sz = -1; sz <= 1; sz += 2) {
          corners[k++] = cube.position + cube.orientation * Vec3(sx * hs, sy * hs, sz * hs);
        }
      }
    }
    return corners;
  }

  /// Kinetic plus gravitational energy of fingers and cube plus the elastic
  /// energy stored in all penalty and stick springs.
  double mechanical_energy() const {
    double e = 0.0;
    for (int i = 0; i < kNumFingers; ++i) {
      const Vec3 qi = finger_block(joints_.q, i);
      const Vec3 dqi = finger_block(joints_.dq, i);
      e += 0.5 * dqi.dot(config_.fingers[i].joint_inertia_diag.cwiseProduct(dqi));
      e += potential_energy(config_.fingers[i], qi, config_.gravity);
    }
    e += 0.5 * config_.cube_mass * cube_.linear_velocity.squaredNorm();
    e += 0.5 * config_.cube_inertia() * cube_.angular_velocity.squaredNorm();
    e -= config_.cube_mass * config_.gravity.dot(cube_.position);
    e += spring_energy_;
    return e;
  }

 private:
  struct TipContactGeometry {
    bool touching = false;
    double penetration = 0.0;
    Vec3 normal = Vec3::Zero();         // world, pointing from cube toward tip
    Vec3 surface_point = Vec3::Zero();  // world, closest point on the cube
  };

  TipContactGeometry tip_cube_geometry(const Vec3& tip) const {
    TipContactGeometry g;
    const double hs = config_.cube_half();
    const double r = config_.tip_radius;
    const Vec3 local = cube_.orientation.conjugate() * (tip - cube_.position);
    const Vec3 closest = local.cwiseMax(Vec3::Constant(-hs)).cwiseMin(Vec3::Constant(hs));
    const Vec3 d = local - closest;
    const double dist = d.norm();
    Vec3 normal_local;
    Vec3 surface_local = closest;
    if (dist > 0.0) {
      if (dist >= r) return g;
      normal_local = d / dist;
      g.penetration = r - dist;
    } else {
      int axis = 0;
      double depth = hs - std::abs(local[0]);
      for (int k = 1; k < 3; ++k) {
        const double dk = hs - std::abs(local[k]);
        if (dk < depth) {
          depth = dk;
          axis = k;
        }
      }
      const double sign = local[axis] >= 0.0 ? 1.0 : -1.0;
      normal_local = Vec3::Zero();
      normal_local[axis] = sign;
      surface_local[axis] = sign * hs;
      g.penetration = r + depth;
    }
    g.touching = true;
    g.normal = cube_.orientation * normal_local;
    g.surface_point = cube_.position + cube_.orientation * surface_local;
    return g;
  }

  struct Forces {
    std::array<Vec3, kNumFingers> tip_force{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    Vec3 cube_force = Vec3::Zero();
    Vec3 cube_torque = Vec3::Zero();
  };

  // Elastic stick friction: trial force from the anchor spring and damper,
  // saturated at mu * fn. When the spring alone exceeds the cone the anchor
  // slides toward the contact point, so slipping never stores energy.
  // Returns the tangential force.
  static Vec3 stick_friction(const Vec3& point, const Vec3& normal, const Vec3& v_rel, double fn,
                             double mu, double k_t, double c_t, Vec3& anchor_world) {
    Vec3 delta = point - anchor_world;
    delta -= delta.dot(normal) * normal;
    const Vec3 v_t = v_rel - v_rel.dot(normal) * normal;
    Vec3 f = -k_t * delta - c_t * v_t;
    const double limit = mu * fn;
    const double mag = f.norm();
    if (mag > limit) {
      f *= limit / mag;
      const double spring = k_t * delta.norm();
      if (spring > limit) {
        delta *= limit / spring;
        anchor_world = point - delta;
      }
    }
    return f;
  }

  Forces compute_forces(std::array<std::optional<Vec3>, kNumFingers>& tip_anchor,
                        std::array<std::optional<Vec3>, 8>& floor_anchor) {
    Forces out;
    spring_energy_ = 0.0;
    const double mu = config_.friction_mu;
    for (int i = 0; i < kNumFingers; ++i) {
      const FingerModel& fm = config_.fingers[i];
      const Vec3 qi = finger_block(joints_.q, i);
      const Vec3 tip = forward_kinematics(fm, qi);
      const Vec3 tip_vel = jacobian(fm, qi) * finger_block(joints_.dq, i);
      ContactRecord rec;
      rec.finger_index = i;

      const TipContactGeometry g = tip_cube_geometry(tip);
      if (g.touching) {
        const Vec3 lever = g.surface_point - cube_.position;
        const Vec3 v_cube_pt = cube_.linear_velocity + cube_.angular_velocity.cross(lever);
        const Vec3 v_rel = tip_vel - v_cube_pt;
        const double pen_rate = -v_rel.dot(g.normal);
        const double fn = std::max(0.0, config_.contact_stiffness * g.penetration +
                                            config_.contact_damping * pen_rate);
        Vec3 ft = Vec3::Zero();
        if (fn > 0.0 && mu > 0.0) {
          Vec3 anchor = tip_anchor[i]
                            ? Vec3(cube_.position + cube_.orientation * (*tip_anchor[i]))
                            : g.surface_point;
          ft = stick_friction(g.surface_point, g.normal, v_rel, fn, mu, config_.contact_stiffness,
                              config_.contact_damping, anchor);
          tip_anchor[i] = cube_.orientation.conjugate() * (anchor - cube_.position);
          Vec3 d = g.surface_point - anchor;
          d -= d.dot(g.normal) * g.normal;
          spring_energy_ += 0.5 * config_.contact_stiffness * d.squaredNorm();
        } else {
          tip_anchor[i].reset();
        }
        spring_energy_ += 0.5 * config_.contact_stiffness * g.penetration * g.penetration;
        const Vec3 f_tip = fn * g.normal + ft;
        out.tip_force[i] += f_tip;
        out.cube_force -= f_tip;
        out.cube_torque -= lever.cross(f_tip);
        rec.in_contact = true;
        rec.contact_point = g.surface_point;
        rec.normal_force = fn;
        rec.tangential_force = ft;
      } else {
        tip_anchor[i].reset();
      }
      contacts_[i] = rec;
    }

    const Vec3 up = Vec3::UnitZ();
    const auto corners = cube_corners(cube_);
    for (int k = 0; k < 8; ++k) {
      const Vec3& p = corners[k];
      if (p.z() >= 0.0) {
        floor_anchor[k].reset();
        continue;
      }
      const double pen = -p.z();
      const Vec3 lever = p - cube_.position;
      const Vec3 v = cube_.linear_velocity + cube_.angular_velocity.cross(lever);
      const double fn = std::max(0.0, config_.floor_stiffness * pen - config_.floor_damping * v.z());
      Vec3 ft = Vec3::Zero();
      const Vec3 contact_point(p.x(), p.y(), 0.0);
      if (fn > 0.0 && mu > 0.0) {
        Vec3 anchor = floor_anchor[k] ? *floor_anchor[k] : contact_point;
        ft = stick_friction(contact_point, up, v, fn, mu, config_.floor_stiffness,
                            config_.floor_damping, anchor);
        floor_anchor[k] = anchor;
        Vec3 d = contact_point - anchor;
        d.z() = 0.0;
        spring_energy_ += 0.5 * config_.floor_stiffness * d.squaredNorm();
      } else {
        floor_anchor[k].reset();
      }
      spring_energy_ += 0.5 * config_.floor_stiffness * pen * pen;
      const Vec3 f = fn * up + ft;
      out.cube_force += f;
      out.cube_torque += lever.cross(f);
    }
    return out;
  }

  void substep(double h) {
    const Forces f = compute_forces(tip_anchor_, floor_anchor_);

    for (int i = 0; i < kNumFingers; ++i) {
      const FingerModel& fm = config_.fingers[i];
      const Vec3 qi = finger_block(joints_.q, i);
      Vec3 dqi = finger_block(joints_.dq, i);
      const Vec3 load = finger_block(joints_.tau, i) - config_.joint_damping * dqi -
                        gravity_compensation(fm, qi, config_.gravity) +
                        jacobian(fm, qi).transpose() * f.tip_force[i];
      dqi += h * load.cwiseQuotient(fm.joint_inertia_diag);
      // Fingertip-floor contact is inelastic: while the tip sphere touches the
      // floor, its downward velocity is removed by the minimal joint-space
      // (inertia-weighted) correction. This never adds energy.
      const Mat3 j = jacobian(fm, qi);
      if (forward_kinematics(fm, qi).z() < config_.tip_radius) {
        const Vec3 jz = j.row(2).transpose();
        const double vz = jz.dot(dqi);
        const Vec3 minv_jz = jz.cwiseQuotient(fm.joint_inertia_diag);
        const double denom = jz.dot(minv_jz);
        if (vz < 0.0 && denom > 1e-12) dqi -= (vz / denom) * minv_jz;
      }
      Vec3 qn = qi + h * dqi;
      for (int k = 0; k < 3; ++k) {
        const JointLimit& lim = fm.joint_limits[k];
        if (qn[k] < lim.lower) {
          qn[k] = lim.lower;
          dqi[k] = std::max(dqi[k], 0.0);
        } else if (qn[k] > lim.upper) {
          qn[k] = lim.upper;
          dqi[k] = std::min(dqi[k], 0.0);
        }
      }
      set_finger_block(joints_.q, i, qn);
      set_finger_block(joints_.dq, i, dqi);
    }

    cube_.linear_velocity += h * (f.cube_force / config_.cube_mass + config_.gravity);
    // A uniform cube has isotropic inertia, so there is no gyroscopic term.
    cube_.angular_velocity += h * (f.cube_torque / config_.cube_inertia());
    cube_.position += h * cube_.linear_velocity;
    const Vec3 rot = h * cube_.angular_velocity;
    const double angle = rot.norm();
    if (angle > 0.0) {
      cube_.orientation = Quat(Eigen::AngleAxisd(angle, rot / angle)) * cube_.orientation;
    }
    cube_.orientation.normalize();
  }

  void check_blowup() const {
    constexpr double kLimit = 1e6;
    auto bad = [](const auto& v) { return !v.allFinite() || v.cwiseAbs().maxCoeff() > kLimit; };
    if (bad(joints_.q) || bad(joints_.dq) || bad(cube_.position) || bad(cube_.linear_velocity) ||
        bad(cube_.angular_velocity)) {
      throw NumericalBlowup("world state exceeded 1e6; configuration is unstable");
    }
  }

  void sample_cube_for_window(std::int64_t window) {
    sampled_window_ = window;
    held_cube_ = cube_;
  }

  WorldConfig config_;
  ObservationModel model_;
  JointState joints_;
  CubeState cube_;
  CubeState held_cube_;
  std::int64_t sampled_window_ = 0;
  std::array<ContactRecord, kNumFingers> contacts_{};
  std::array<std::optional<Vec3>, kNumFingers> tip_anchor_{};  // cube frame
  std::array<std::optional<Vec3>, 8> floor_anchor_{};          // world frame
  double spring_energy_ = 0.0;
  std::uint64_t seed_ = 0;
  double time_ = 0.0;
  std::int64_t steps_ = 0;
};

/// One sample of the history used for drop detection.
struct DropSample {
  double time = 0.0;
  std::array<bool, kNumFingers> in_contact{false, false, false};
  Vec3 cube_position = Vec3::Zero();
  Vec3 goal_position = Vec3::Zero();
};

struct DropCriteria {
  double lost_duration = 0.5;   // s, all contacts lost for longer than this
  double goal_distance = 0.05;  // m, while the cube is farther than this from the goal
};

/// True iff, after all three contacts were first held simultaneously, every
/// contact was lost for longer than `lost_duration` while the cube stayed
/// farther than `goal_distance` from its goal.
inline bool detect_drop(const std::vector<DropSample>& history, const DropCriteria& criteria = {}) {
  if (history.empty()) throw std::invalid_argument("detect_drop: empty history");
  bool grasped = false;
  std::optional<double> run_start;
  for (const DropSample& s : history) {
    const bool all = s.in_contact[0] && s.in_contact[1] && s.in_contact[2];
    const bool none = !s.in_contact[0] && !s.in_contact[1] && !s.in_contact[2];
    if (!grasped) {
      grasped = all;
      continue;
    }
    const bool away = (s.cube_position - s.goal_position).norm() > criteria.goal_distance;
    if (none && away) {
      if (!run_start) run_start = s.time;
      if (s.time - *run_start > criteria.lost_duration) return true;
    } else {
      run_start.reset();
    }
  }
  return false;
}

}  // namespace trifinger
