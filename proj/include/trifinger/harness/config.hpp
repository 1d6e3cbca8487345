#pragma once

// Experiment configuration: one JSON document holds the world, task, goal
// protocol, controller parameters and sweep/tuning/residual protocols.
// Every key is optional (defaults below); unknown keys are rejected so typos
// do not silently fall back to defaults. The config hash is FNV-1a 64 over
// the canonical (sorted-key) dump of the fully resolved config.

#include "trifinger/common.hpp"
#include "trifinger/controller_cic.hpp"
#include "trifinger/controller_cpc.hpp"
#include "trifinger/controller_mp.hpp"
#include "trifinger/residual.hpp"
#include "trifinger/rewards.hpp"
#include "trifinger/sim_world.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace trifinger::harness {

using json = nlohmann::json;

enum class ControllerKind { CPC, CIC, MP };
enum class GraspKind { TG, CG, OG, PG };

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::CPC: return "CPC";
    case ControllerKind::CIC: return "CIC";
    case ControllerKind::MP: return "MP";
  }
  return "?";
}

inline std::string to_string(GraspKind k) {
  switch (k) {
    case GraspKind::TG: return "TG";
    case GraspKind::CG: return "CG";
    case GraspKind::OG: return "OG";
    case GraspKind::PG: return "PG";
  }
  return "?";
}

inline ControllerKind parse_controller(const std::string& s) {
  if (s == "CPC" || s == "cpc") return ControllerKind::CPC;
  if (s == "CIC" || s == "cic") return ControllerKind::CIC;
  if (s == "MP" || s == "mp") return ControllerKind::MP;
  throw ConfigError("unknown controller '" + s + "' (expected CPC, CIC or MP)");
}

inline GraspKind parse_grasp(const std::string& s) {
  if (s == "TG" || s == "tg") return GraspKind::TG;
  if (s == "CG" || s == "cg") return GraspKind::CG;
  if (s == "OG" || s == "og") return GraspKind::OG;
  if (s == "PG" || s == "pg") return GraspKind::PG;
  throw ConfigError("unknown grasp '" + s + "' (expected TG, CG, OG or PG)");
}

/// How the start pose and the relative goal are drawn for each episode.
struct GoalProtocol {
  double initial_yaw_range_deg = 45.0;  // start yaw uniform in [-r, r]
  double max_axis_tilt_deg = 5.0;       // bound on the goal's z-axis tilt from the start's
  double offset_radius = 0.05;          // m, goal xy offset uniform in a disk
  double lift_min = 0.02;               // m, goal height above the start
  double lift_max = 0.06;               // m
};

struct BoProtocol {
  int n_init = 4;
  int n_iter = 50;
  int tuning_goals = 4;   // episodes per objective evaluation (fixed seeds)
  int eval_goals = 20;    // held-out goals for the manual-vs-tuned comparison
  double episode_duration = 10.0;  // s
  // Declared search intervals per controller; name -> [lower, upper].
  std::map<std::string, std::map<std::string, std::pair<double, double>>> spaces = {
      {"CPC",
       {{"kp", {100.0, 600.0}},
        {"kd", {1.0, 8.0}},
        {"gain_growth_rate", {0.0, 2.0}},
        {"gain_clip", {1.0, 5.0}},
        {"approach_speed", {0.02, 0.12}}}},
      {"CIC",
       {{"K", {100.0, 400.0}},
        {"K1", {0.5, 3.0}},
        {"K2", {0.1, 2.0}},
        {"D", {10.0, 60.0}},
        {"goal_speed", {0.02, 0.1}},
        {"x_r_offset_z", {-0.02, 0.02}}}},
      {"MP", {{"waypoint_dwell", {0.05, 0.4}}, {"goal_append_step", {0.005, 0.03}}}},
  };
};

struct ResidualProtocol {
  ShapedRewardWeights weights;
  int budget = 30;          // policy evaluations
  int train_goals = 5;
  int eval_goals = 20;
  double episode_duration = 8.0;  // s
  double sigma = 0.02;      // ES initial mutation scale
  double init_scale = 0.05; // uniform initialization half-width
};

struct ExperimentConfig {
  WorldConfig world;
  std::string observation_model = "ideal";  // ideal | realistic
  TaskSpec task;                             // goal is overwritten per episode
  GoalProtocol goal;
  ControllerKind controller = ControllerKind::CPC;
  GraspKind grasp = GraspKind::TG;
  CpcParams cpc;
  CicParams cic;
  MpParams mp;
  int trials = 15;
  double delta_theta_deg = 25.0;
  std::uint64_t seed = 1;
  int workers = 1;
  std::vector<double> sweep_delta_theta_deg = {10.0, 25.0, 35.0};
  DropCriteria drop;
  BoProtocol bo;
  ResidualProtocol residual;

  void validate() const {
    world.validate();
    task.validate();
    if (trials < 1) throw ConfigError("ExperimentConfig: trials must be >= 1");
    if (!(delta_theta_deg >= 0.0)) throw ConfigError("ExperimentConfig: delta_theta_deg must be >= 0");
    if (workers < 1) throw ConfigError("ExperimentConfig: workers must be >= 1");
    if (observation_model != "ideal" && observation_model != "realistic") {
      throw ConfigError("ExperimentConfig: observation_model must be 'ideal' or 'realistic'");
    }
    if (!(goal.offset_radius >= 0.0) || !(goal.lift_min >= 0.0) || goal.lift_max < goal.lift_min ||
        !(goal.initial_yaw_range_deg >= 0.0) || !(goal.max_axis_tilt_deg >= 0.0)) {
      throw ConfigError("ExperimentConfig: invalid goal protocol");
    }
    for (double d : sweep_delta_theta_deg) {
      if (!(d >= 0.0)) throw ConfigError("ExperimentConfig: sweep angles must be >= 0");
    }
    cpc.validate();
    cic.validate(world.cube_side);
    mp.validate();
    residual.weights.validate();
    if (bo.n_init < 2 || bo.n_iter < 0 || bo.tuning_goals < 1 || bo.eval_goals < 1) {
      throw ConfigError("ExperimentConfig: invalid BO protocol");
    }
    if (residual.budget < 1 || residual.train_goals < 1 || residual.eval_goals < 1) {
      throw ConfigError("ExperimentConfig: invalid residual protocol");
    }
  }

  ObservationModel make_observation_model() const {
    return observation_model == "realistic" ? ObservationModel::realistic() : ObservationModel::ideal();
  }
};

// ---------------------------------------------------------------------------
// JSON binding. Each struct lists its fields once through `fields(obj, f)`;
// the same list drives writing and reading.

namespace detail {

inline json to_j(double v) { return v; }
inline json to_j(int v) { return v; }
inline json to_j(bool v) { return v; }
inline json to_j(std::uint64_t v) { return v; }
inline json to_j(const std::string& v) { return v; }
inline json to_j(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline json to_j(const std::vector<double>& v) { return v; }

inline void from_j(const json& j, double& v) { v = j.get<double>(); }
inline void from_j(const json& j, int& v) { v = j.get<int>(); }
inline void from_j(const json& j, bool& v) { v = j.get<bool>(); }
inline void from_j(const json& j, std::uint64_t& v) { v = j.get<std::uint64_t>(); }
inline void from_j(const json& j, std::string& v) { v = j.get<std::string>(); }
inline void from_j(const json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
  v = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}
inline void from_j(const json& j, std::vector<double>& v) { v = j.get<std::vector<double>>(); }

struct Writer {
  json& j;
  template <class T>
  void operator()(const char* name, const T& v) { j[name] = to_j(v); }
};

struct Reader {
  const json& j;
  std::string where;
  std::set<std::string> known;
  template <class T>
  void operator()(const char* name, T& v) {
    known.insert(name);
    if (!j.contains(name)) return;
    try {
      from_j(j.at(name), v);
    } catch (const json::exception& e) {
      throw ConfigError(where + "." + name + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where + "." + name + ": " + e.what());
    }
  }
  void finish() const {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!known.count(it.key())) throw ConfigError("unknown config key " + where + "." + it.key());
    }
  }
};

template <class F>
void fields(WorldConfig& w, F&& f) {
  f("cube_side", w.cube_side);
  f("cube_mass", w.cube_mass);
  f("friction_mu", w.friction_mu);
  f("contact_stiffness", w.contact_stiffness);
  f("contact_damping", w.contact_damping);
  f("floor_stiffness", w.floor_stiffness);
  f("floor_damping", w.floor_damping);
  f("tip_radius", w.tip_radius);
  f("dt", w.dt);
  f("substeps", w.substeps);
  f("gravity", w.gravity);
  f("tau_max", w.tau_max);
  f("arena_radius", w.arena_radius);
  f("joint_damping", w.joint_damping);
  f("position_kp", w.position_kp);
  f("position_kd", w.position_kd);
}

template <class F>
void fields(TaskSpec& t, F&& f) {
  f("level", t.level);
  f("d_xy", t.d_xy);
  f("d_z", t.d_z);
  f("episode_duration", t.episode_duration);
  f("reward_rate_hz", t.reward_rate_hz);
}

template <class F>
void fields(GoalProtocol& g, F&& f) {
  f("initial_yaw_range_deg", g.initial_yaw_range_deg);
  f("max_axis_tilt_deg", g.max_axis_tilt_deg);
  f("offset_radius", g.offset_radius);
  f("lift_min", g.lift_min);
  f("lift_max", g.lift_max);
}

template <class F>
void fields(CpcParams& p, F&& f) {
  f("kp", p.kp);
  f("ki", p.ki);
  f("kd", p.kd);
  f("gain_growth_rate", p.gain_growth_rate);
  f("gain_clip", p.gain_clip);
  f("schedule_interval", p.schedule_interval);
  f("lambda", p.lambda);
  f("approach_speed", p.approach_speed);
  f("squeeze_depth", p.squeeze_depth);
  f("goal_feedback", p.goal_feedback);
  f("orientation_weight", p.orientation_weight);
  f("integral_limit", p.integral_limit);
  f("rate_hz", p.rate_hz);
}

template <class F>
void fields(CicParams& p, F&& f) {
  f("K", p.K);
  f("D", p.D);
  f("x_r_offset", p.x_r_offset);
  f("K1", p.K1);
  f("K2", p.K2);
  f("K3", p.K3);
  f("lambda", p.lambda);
  f("filter_cutoff_hz", p.filter_cutoff_hz);
  f("rate_hz", p.rate_hz);
  f("fold_gravity_into_tau2", p.fold_gravity_into_tau2);
  f("reach_kp", p.reach_kp);
  f("reach_kd", p.reach_kd);
  f("squeeze_depth", p.squeeze_depth);
  f("goal_speed", p.goal_speed);
  f("orientation_weight", p.orientation_weight);
}

template <class F>
void fields(MpParams& p, F&& f) {
  f("waypoint_dwell", p.waypoint_dwell);
  f("goal_append_step", p.goal_append_step);
  f("pd_kp", p.pd_kp);
  f("pd_kd", p.pd_kd);
  f("rrt_step", p.rrt_step);
  f("rrt_step_rot", p.rrt_step_rot);
  f("rrt_goal_bias", p.rrt_goal_bias);
  f("rrt_timeout", p.rrt_timeout);
  f("smoothing_attempts", p.smoothing_attempts);
  f("orientation_weight", p.orientation_weight);
  f("max_joint_jump", p.max_joint_jump);
  f("squeeze_depth", p.squeeze_depth);
  f("refine_tolerance", p.refine_tolerance);
  f("refine_budget", p.refine_budget);
  f("max_sampled_grasps", p.max_sampled_grasps);
  f("sample_margin", p.sample_margin);
  f("rate_hz", p.rate_hz);
}

template <class F>
void fields(DropCriteria& d, F&& f) {
  f("lost_duration", d.lost_duration);
  f("goal_distance", d.goal_distance);
}

template <class F>
void fields(ShapedRewardWeights& w, F&& f) {
  f("w_task", w.w_task);
  f("w_action_reg", w.w_action_reg);
  f("w_tip_force", w.w_tip_force);
  f("w_grasp_hold", w.w_grasp_hold);
  f("force_cap", w.force_cap);
}

template <class F>
void fields(ResidualProtocol& r, F&& f) {
  f("budget", r.budget);
  f("train_goals", r.train_goals);
  f("eval_goals", r.eval_goals);
  f("episode_duration", r.episode_duration);
  f("sigma", r.sigma);
  f("init_scale", r.init_scale);
}

template <class T>
json write_struct(T v) {
  json j = json::object();
  fields(v, Writer{j});
  return j;
}

template <class T>
void read_struct(const json& j, T& v, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  Reader r{j, where, {}};
  fields(v, r);
  r.finish();
}

inline json write_spaces(const BoProtocol& bo) {
  json j = json::object();
  for (const auto& [ctrl, dims] : bo.spaces) {
    json d = json::object();
    for (const auto& [name, range] : dims) d[name] = json::array({range.first, range.second});
    j[ctrl] = d;
  }
  return j;
}

inline void read_spaces(const json& j, BoProtocol& bo) {
  if (!j.is_object()) throw ConfigError("bo.spaces: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    parse_controller(it.key());
    std::map<std::string, std::pair<double, double>> dims;
    for (auto d = it.value().begin(); d != it.value().end(); ++d) {
      const json& r = d.value();
      if (!r.is_array() || r.size() != 2) {
        throw ConfigError("bo.spaces." + it.key() + "." + d.key() + ": expected [lower, upper]");
      }
      dims[d.key()] = {r[0].get<double>(), r[1].get<double>()};
    }
    bo.spaces[it.key()] = dims;
  }
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  using namespace detail;
  json j;
  j["world"] = write_struct(c.world);
  j["observation_model"] = c.observation_model;
  j["task"] = write_struct(c.task);
  j["goal"] = write_struct(c.goal);
  j["controller"] = to_string(c.controller);
  j["grasp"] = to_string(c.grasp);
  j["cpc"] = write_struct(c.cpc);
  j["cic"] = write_struct(c.cic);
  j["mp"] = write_struct(c.mp);
  j["trials"] = c.trials;
  j["delta_theta_deg"] = c.delta_theta_deg;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["sweep_delta_theta_deg"] = c.sweep_delta_theta_deg;
  j["drop"] = write_struct(c.drop);
  json bo;
  bo["n_init"] = c.bo.n_init;
  bo["n_iter"] = c.bo.n_iter;
  bo["tuning_goals"] = c.bo.tuning_goals;
  bo["eval_goals"] = c.bo.eval_goals;
  bo["episode_duration"] = c.bo.episode_duration;
  bo["spaces"] = write_spaces(c.bo);
  j["bo"] = bo;
  json res = write_struct(c.residual);
  res["weights"] = write_struct(c.residual.weights);
  j["residual"] = res;
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  using namespace detail;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  ExperimentConfig c;
  static const std::set<std::string> top = {
      "world", "observation_model", "task", "goal", "controller", "grasp", "cpc", "cic", "mp",
      "trials", "delta_theta_deg", "seed", "workers", "sweep_delta_theta_deg", "drop", "bo",
      "residual"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!top.count(it.key())) throw ConfigError("unknown config key " + it.key());
  }
  try {
    if (j.contains("world")) read_struct(j["world"], c.world, "world");
    if (j.contains("observation_model")) c.observation_model = j["observation_model"].get<std::string>();
    if (j.contains("task")) read_struct(j["task"], c.task, "task");
    if (j.contains("goal")) read_struct(j["goal"], c.goal, "goal");
    if (j.contains("controller")) c.controller = parse_controller(j["controller"].get<std::string>());
    if (j.contains("grasp")) c.grasp = parse_grasp(j["grasp"].get<std::string>());
    if (j.contains("cpc")) read_struct(j["cpc"], c.cpc, "cpc");
    if (j.contains("cic")) read_struct(j["cic"], c.cic, "cic");
    if (j.contains("mp")) read_struct(j["mp"], c.mp, "mp");
    if (j.contains("trials")) c.trials = j["trials"].get<int>();
    if (j.contains("delta_theta_deg")) c.delta_theta_deg = j["delta_theta_deg"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
    if (j.contains("sweep_delta_theta_deg")) {
      c.sweep_delta_theta_deg = j["sweep_delta_theta_deg"].get<std::vector<double>>();
    }
    if (j.contains("drop")) read_struct(j["drop"], c.drop, "drop");
    if (j.contains("bo")) {
      const json& bo = j["bo"];
      static const std::set<std::string> keys = {"n_init", "n_iter", "tuning_goals", "eval_goals",
                                                 "episode_duration", "spaces"};
      for (auto it = bo.begin(); it != bo.end(); ++it) {
        if (!keys.count(it.key())) throw ConfigError("unknown config key bo." + it.key());
      }
      if (bo.contains("n_init")) c.bo.n_init = bo["n_init"].get<int>();
      if (bo.contains("n_iter")) c.bo.n_iter = bo["n_iter"].get<int>();
      if (bo.contains("tuning_goals")) c.bo.tuning_goals = bo["tuning_goals"].get<int>();
      if (bo.contains("eval_goals")) c.bo.eval_goals = bo["eval_goals"].get<int>();
      if (bo.contains("episode_duration")) c.bo.episode_duration = bo["episode_duration"].get<double>();
      if (bo.contains("spaces")) read_spaces(bo["spaces"], c.bo);
    }
    if (j.contains("residual")) {
      json res = j["residual"];
      if (res.contains("weights")) {
        read_struct(res["weights"], c.residual.weights, "residual.weights");
        res.erase("weights");
      }
      read_struct(res, c.residual, "residual");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("load_config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Canonical form for hashing. `workers` is excluded: it is an execution
/// setting that cannot change results (outputs are indexed by episode).
inline std::string canonical_dump(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("workers");
  return j.dump();
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_dump(c))));
  return buf;
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_config: cannot open " + path);
  out << to_json(c).dump(2) << '\n';
  if (!out) throw IoError("save_config: write failed for " + path);
}

}  // namespace trifinger::harness
