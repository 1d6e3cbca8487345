#pragma once

// Residual policy learning on top of a structured base controller.
//
// The applied torque is a = clamp(a0 + 0.05 * tanh(raw), tau_max) where a0
// is the base controller's torque and raw the policy output. The MDP state
// is augmented with a0 (ResidualObservation). SAC is out of scope; learners
// plug in through ResidualLearner, and EsLearner is the reference
// derivative-free learner (seeded (1+1)-evolution strategy).

#include "trifinger/common.hpp"
#include "trifinger/controller.hpp"
#include "trifinger/rewards.hpp"
#include "trifinger/sim_world.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace trifinger {

inline constexpr double kResidualRange = 0.05;  // N m, componentwise residual bound

/// Squashes a raw policy output into [-kResidualRange, kResidualRange].
inline Vec9 squash_residual(const Vec9& raw) {
  Vec9 r;
  for (int k = 0; k < 9; ++k) r[k] = kResidualRange * std::tanh(raw[k]);
  return r;
}

/// a = clamp(base + squash(raw)). Components with a zero residual are passed
/// through untouched so that a zero policy reproduces the base bit for bit.
inline Vec9 compose_action(const Vec9& base, const Vec9& residual_raw, double tau_max = 0.397) {
  const Vec9 r = squash_residual(residual_raw);
  Vec9 out;
  for (int k = 0; k < 9; ++k) {
    out[k] = clamp_abs(r[k] == 0.0 ? base[k] : base[k] + r[k], tau_max);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Observation features

inline constexpr int kResidualObsDim = 44;

/// Flattened observation features: q, dq/10, fingertip positions, cube
/// position and quaternion (w >= 0), goal position and quaternion, and the
/// three normal forces.
inline Eigen::VectorXd residual_features(const Observation& obs, const TaskSpec& task) {
  Eigen::VectorXd f(kResidualObsDim);
  int n = 0;
  auto put3 = [&](const Vec3& v) {
    f.segment<3>(n) = v;
    n += 3;
  };
  auto put_quat = [&](Quat q) {
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    f[n++] = q.w();
    f[n++] = q.x();
    f[n++] = q.y();
    f[n++] = q.z();
  };
  f.segment<9>(n) = obs.joint_state.q;
  n += 9;
  f.segment<9>(n) = 0.1 * obs.joint_state.dq;
  n += 9;
  for (int i = 0; i < kNumFingers; ++i) put3(obs.fingertips.x[i]);
  put3(obs.cube.position);
  put_quat(obs.cube.orientation);
  put3(task.goal.position);
  put_quat(task.goal.orientation);
  for (int i = 0; i < kNumFingers; ++i) f[n++] = obs.contacts[i].normal_force;
  return f;
}

struct ResidualObservation {
  Eigen::VectorXd features = Eigen::VectorXd::Zero(kResidualObsDim);  // includes the goal
  Vec9 base_action = Vec9::Zero();  // a0 the base controller applies this tick
};

// ---------------------------------------------------------------------------
// Policy network

struct PolicyShape {
  int obs_dim = kResidualObsDim;
  int action_dim = 9;
  int embed_dim = 64;
  int hidden_dim = 64;

  int output_dim() const { return 2 * action_dim; }  // Gaussian mean and log-std

  /// Layers in parameter order: observation embedder, base-action embedder,
  /// then the three trunk layers.
  std::vector<std::pair<int, int>> layers() const {
    return {{obs_dim, embed_dim},
            {action_dim, embed_dim},
            {2 * embed_dim, hidden_dim},
            {hidden_dim, hidden_dim},
            {hidden_dim, output_dim()}};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [in, out] : layers()) n += static_cast<std::size_t>(in + 1) * out;
    return n;
  }

  bool operator==(const PolicyShape&) const = default;
};

/// MLP with tanh activations. Parameters live in one flat vector; each layer
/// stores its weight matrix (out x in, column-major) followed by its bias.
class ResidualPolicy {
 public:
  ResidualPolicy() : ResidualPolicy(PolicyShape{}) {}
  explicit ResidualPolicy(PolicyShape shape)
      : shape_(shape), params_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.parameter_count()))) {}

  static ResidualPolicy zero(PolicyShape shape = {}) { return ResidualPolicy(shape); }

  /// Small uniform initialization in [-scale, scale].
  static ResidualPolicy random_uniform(std::mt19937_64& rng, double scale = 0.05,
                                      PolicyShape shape = {}) {
    ResidualPolicy p(shape);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (Eigen::Index k = 0; k < p.params_.size(); ++k) p.params_[k] = u(rng);
    return p;
  }

  const PolicyShape& shape() const { return shape_; }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }
  void set_parameters(const Eigen::VectorXd& p) {
    if (p.size() != params_.size()) throw ConfigError("ResidualPolicy: parameter size mismatch");
    params_ = p;
  }

  /// Gaussian head: first action_dim entries are the mean, the rest log-std.
  Eigen::VectorXd head(const ResidualObservation& o) const {
    const auto L = shape_.layers();
    Eigen::Index offset = 0;
    auto dense = [&](int layer, const Eigen::VectorXd& x, bool activate) {
      const auto [in, out] = L[layer];
      Eigen::Map<const Eigen::MatrixXd> w(params_.data() + offset, out, in);
      Eigen::Map<const Eigen::VectorXd> b(params_.data() + offset + static_cast<Eigen::Index>(in) * out, out);
      offset += static_cast<Eigen::Index>(in + 1) * out;
      Eigen::VectorXd y = w * x + b;
      if (activate) y = y.array().tanh().matrix();
      return y;
    };
    const Eigen::VectorXd e_obs = dense(0, o.features, true);
    const Eigen::VectorXd e_act = dense(1, o.base_action, true);
    Eigen::VectorXd h(2 * shape_.embed_dim);
    h << e_obs, e_act;
    h = dense(2, h, true);
    h = dense(3, h, true);
    return dense(4, h, false);
  }

  /// Raw (pre-squash) action: the mean, or a Gaussian sample when `rng` is set.
  Vec9 act(const ResidualObservation& o, std::mt19937_64* rng = nullptr) const {
    const Eigen::VectorXd out = head(o);
    Vec9 raw = out.head<9>();
    if (rng != nullptr) {
      std::normal_distribution<double> n(0.0, 1.0);
      for (int k = 0; k < 9; ++k) {
        const double log_std = std::clamp(out[9 + k], -5.0, 2.0);
        raw[k] += std::exp(log_std) * n(*rng);
      }
    }
    return raw;
  }

 private:
  PolicyShape shape_;
  Eigen::VectorXd params_;
};

/// Text format: a header line, a shape line, a count line, then one value
/// per line with 17 significant digits.
inline void save_policy(const ResidualPolicy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_policy: cannot open " + path);
  const PolicyShape& s = policy.shape();
  out << "# trifinger residual policy v1\n";
  out << "shape " << s.obs_dim << ' ' << s.action_dim << ' ' << s.embed_dim << ' ' << s.hidden_dim
      << ' ' << s.output_dim() << '\n';
  out << "count " << policy.parameters().size() << '\n';
  char buf[64];
  for (Eigen::Index k = 0; k < policy.parameters().size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g\n", policy.parameters()[k]);
    out << buf;
  }
  if (!out) throw IoError("save_policy: write failed for " + path);
}

inline ResidualPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_policy: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "# trifinger residual policy v1") throw IoError("load_policy: bad header in " + path);
  std::string tag;
  PolicyShape s;
  int out_dim = 0;
  in >> tag >> s.obs_dim >> s.action_dim >> s.embed_dim >> s.hidden_dim >> out_dim;
  if (tag != "shape" || out_dim != s.output_dim()) throw IoError("load_policy: bad shape line");
  std::size_t count = 0;
  in >> tag >> count;
  if (tag != "count" || count != s.parameter_count()) throw IoError("load_policy: bad count line");
  ResidualPolicy p(s);
  for (std::size_t k = 0; k < count; ++k) {
    if (!(in >> p.parameters()[static_cast<Eigen::Index>(k)])) {
      throw IoError("load_policy: truncated parameter list");
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Shaped reward

struct ShapedRewardWeights {
  double w_task = 1.0;
  double w_action_reg = 0.1;
  double w_tip_force = 0.05;
  double w_grasp_hold = 0.1;
  double force_cap = 2.0;  // N

  void validate() const {
    if (!(w_task > 0.0)) throw ConfigError("ShapedRewardWeights: w_task must be > 0");
    if (!(w_action_reg >= 0.0) || !(w_tip_force >= 0.0) || !(w_grasp_hold >= 0.0) ||
        !(force_cap >= 0.0)) {
      throw ConfigError("ShapedRewardWeights: weights must be nonnegative");
    }
  }
};

/// w_task r_task - w_action_reg |a_r|^2 + w_tip_force sum min(f_n, cap)
/// + w_grasp_hold [all contacts active]; `residual` is the applied (squashed)
/// residual torque.
inline double shaped_reward(const Observation& obs, const Vec9& residual,
                            const ShapedRewardWeights& w, const TaskSpec& task) {
  const double r_task = step_reward(obs.cube.pose(), task).r;
  double force = 0.0;
  bool all = true;
  for (const ContactRecord& c : obs.contacts) {
    force += std::min(c.normal_force, w.force_cap);
    all = all && c.in_contact;
  }
  return w.w_task * r_task - w.w_action_reg * residual.squaredNorm() + w.w_tip_force * force +
         w.w_grasp_hold * (all ? 1.0 : 0.0);
}

// ---------------------------------------------------------------------------
// Augmented MDP

struct ResidualStep {
  ResidualObservation observation;  // carries the NEXT tick's a0
  double reward = 0.0;
  bool done = false;
  Vec9 applied_residual = Vec9::Zero();
  Vec9 applied_action = Vec9::Zero();
  Vec9 base_action = Vec9::Zero();  // a0 used for this step
};

/// One MDP step spans one base-controller tick (1/rate seconds of world
/// time, torque held constant). The base controller is ticked exactly once
/// per step, in the same order as when it runs alone.
class ResidualEnv {
 public:
  ResidualEnv(World& world, std::unique_ptr<Controller> base, TaskSpec task,
              ShapedRewardWeights weights = {})
      : world_(world), base_(std::move(base)), task_(std::move(task)), weights_(weights) {
    weights_.validate();
    steps_per_tick_ = std::max(1, static_cast<int>(std::lround(1.0 / (base_->rate_hz() * world_.config().dt))));
    total_steps_ = static_cast<std::int64_t>(std::llround(task_.episode_duration / world_.config().dt));
  }

  /// `initial` is the observation returned by World::reset.
  ResidualObservation reset(const Observation& initial) {
    obs_ = initial;
    current_.features = residual_features(obs_, task_);
    current_.base_action = base_->tick(obs_);
    return current_;
  }

  ResidualStep step(const Vec9& residual_raw) {
    ResidualStep out;
    out.base_action = current_.base_action;
    out.applied_residual = squash_residual(residual_raw);
    out.applied_action = compose_action(current_.base_action, residual_raw, world_.config().tau_max);
    for (int k = 0; k < steps_per_tick_ && world_.step_count() < total_steps_; ++k) {
      obs_ = world_.step(TorqueCommand{out.applied_action});
    }
    out.reward = shaped_reward(obs_, out.applied_residual, weights_, task_);
    out.done = world_.step_count() >= total_steps_;
    current_.features = residual_features(obs_, task_);
    if (!out.done) current_.base_action = base_->tick(obs_);
    out.observation = current_;
    return out;
  }

  const ResidualObservation& current() const { return current_; }
  const Observation& observation() const { return obs_; }
  Controller& base() { return *base_; }
  const TaskSpec& task() const { return task_; }

 private:
  World& world_;
  std::unique_ptr<Controller> base_;
  TaskSpec task_;
  ShapedRewardWeights weights_;
  int steps_per_tick_ = 1;
  std::int64_t total_steps_ = 0;
  Observation obs_;
  ResidualObservation current_;
};

/// A freshly reset episode for the residual MDP.
struct ResidualEpisodeSetup {
  std::unique_ptr<World> world;
  std::unique_ptr<Controller> base;
  TaskSpec task;
  Observation initial;
};

using ResidualEpisodeFactory = std::function<ResidualEpisodeSetup(int goal_index)>;

/// Deterministic rollout of `policy` (mean action); returns the shaped return.
inline double residual_rollout(const ResidualPolicy& policy, ResidualEpisodeSetup setup,
                               const ShapedRewardWeights& weights) {
  ResidualEnv env(*setup.world, std::move(setup.base), setup.task, weights);
  ResidualObservation o = env.reset(setup.initial);
  double total = 0.0;
  for (;;) {
    const ResidualStep s = env.step(policy.act(o));
    total += s.reward;
    o = s.observation;
    if (s.done) break;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Learners

/// Scores a policy (higher is better); must be deterministic.
using PolicyEvaluator = std::function<double(const ResidualPolicy&)>;

struct LearnerResult {
  ResidualPolicy policy;
  double score = 0.0;
  double zero_policy_score = 0.0;
  std::vector<double> best_history;  // best score after each evaluation
  int evaluations = 0;
};

class ResidualLearner {
 public:
  virtual ~ResidualLearner() = default;
  virtual std::string name() const = 0;
  /// `budget` is the number of policy evaluations.
  virtual LearnerResult train(const PolicyShape& shape, const PolicyEvaluator& evaluate,
                              int budget) = 0;
};

/// Seeded (1+1)-ES with a success-based step-size rule. The zero policy and
/// a small uniform initialization are evaluated first; the better one is the
/// first parent, so the result never scores below the zero-policy baseline.
class EsLearner final : public ResidualLearner {
 public:
  explicit EsLearner(std::uint64_t seed, double sigma = 0.02, double init_scale = 0.05)
      : seed_(seed), sigma_(sigma), init_scale_(init_scale) {}

  std::string name() const override { return "es-1+1"; }

  LearnerResult train(const PolicyShape& shape, const PolicyEvaluator& evaluate,
                      int budget) override {
    if (budget <= 0) throw ConfigError("train_residual: budget must be > 0");
    std::mt19937_64 rng(mix_seed(seed_, 0x5245ULL));
    LearnerResult res;
    ResidualPolicy parent = ResidualPolicy::zero(shape);
    res.zero_policy_score = evaluate(parent);
    double best = res.zero_policy_score;
    res.evaluations = 1;
    res.best_history.push_back(best);
    if (res.evaluations < budget) {
      ResidualPolicy init = ResidualPolicy::random_uniform(rng, init_scale_, shape);
      const double s = evaluate(init);
      ++res.evaluations;
      if (s > best) {
        best = s;
        parent = init;
      }
      res.best_history.push_back(best);
    }
    double sigma = sigma_;
    std::normal_distribution<double> normal(0.0, 1.0);
    while (res.evaluations < budget) {
      ResidualPolicy child = parent;
      for (Eigen::Index k = 0; k < child.parameters().size(); ++k) {
        child.parameters()[k] += sigma * normal(rng);
      }
      const double s = evaluate(child);
      ++res.evaluations;
      if (s > best) {
        best = s;
        parent = std::move(child);
        sigma *= 1.5;
      } else {
        sigma *= std::pow(1.5, -0.25);  // 1/5th success rule
      }
      res.best_history.push_back(best);
    }
    res.policy = std::move(parent);
    res.score = best;
    return res;
  }

 private:
  std::uint64_t seed_;
  double sigma_;
  double init_scale_;
};

/// Trains a residual on top of the base controllers produced by `factory`,
/// scoring each candidate by its mean shaped return over `n_goals` episodes.
inline LearnerResult train_residual(const ResidualEpisodeFactory& factory, int n_goals,
                                    ResidualLearner& learner, int budget,
                                    const ShapedRewardWeights& weights = {},
                                    const PolicyShape& shape = {}) {
  if (n_goals <= 0) throw ConfigError("train_residual: n_goals must be > 0");
  const PolicyEvaluator evaluate = [&](const ResidualPolicy& policy) {
    double total = 0.0;
    for (int g = 0; g < n_goals; ++g) total += residual_rollout(policy, factory(g), weights);
    return total / n_goals;
  };
  return learner.train(shape, evaluate, budget);
}

}  // namespace trifinger
