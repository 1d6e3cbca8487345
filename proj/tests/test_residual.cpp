#include "trifinger/harness/residual_runs.hpp"
#include "trifinger/residual.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace trifinger;
using namespace trifinger::harness;

namespace {

ExperimentConfig short_config(ControllerKind ctl, GraspKind g, double duration) {
  ExperimentConfig c;
  c.controller = ctl;
  c.grasp = g;
  c.residual.episode_duration = duration;
  return residual_config(c);
}

ResidualEpisodeSetup make_setup(const ExperimentConfig& c, std::uint64_t seed) {
  return residual_episode_factory(c, {seed})(0);
}

}  // namespace

TEST(Compose, IdentitySaturationAndClamp) {
  Vec9 base;
  for (int k = 0; k < 9; ++k) base[k] = 0.03 * (k - 4);
  EXPECT_EQ(compose_action(base, Vec9::Zero()), base);
  const Vec9 sat = squash_residual(Vec9::Constant(1e6));
  EXPECT_EQ(sat, Vec9::Constant(kResidualRange));
  EXPECT_EQ(squash_residual(Vec9::Constant(-1e6)), Vec9::Constant(-kResidualRange));
  const Vec9 at_limit = Vec9::Constant(0.397);
  EXPECT_EQ(compose_action(at_limit, Vec9::Constant(1e6)), Vec9::Constant(0.397));
}

TEST(ShapedReward, TaskOnlyEqualsTaskReward) {
  Observation o;
  o.cube.position = Vec3(0.02, -0.01, 0.05);
  TaskSpec task;
  task.goal.position = Vec3(0, 0, 0.06);
  ShapedRewardWeights w;
  w.w_action_reg = w.w_tip_force = w.w_grasp_hold = 0.0;
  EXPECT_EQ(shaped_reward(o, Vec9::Constant(0.01), w, task), step_reward(o.cube.pose(), task).r);
}

TEST(ShapedReward, ZeroEverythingIsZero) {
  Observation o;
  TaskSpec task;
  task.goal = o.cube.pose();
  EXPECT_EQ(shaped_reward(o, Vec9::Zero(), ShapedRewardWeights{}, task), 0.0);
}

TEST(ShapedReward, RegularizationLinearAndForceCap) {
  Observation o;
  TaskSpec task;
  task.goal = o.cube.pose();
  const Vec9 r = Vec9::Constant(0.02);
  ShapedRewardWeights w;
  const double a = shaped_reward(o, r, w, task);
  w.w_action_reg *= 2.0;
  EXPECT_NEAR(shaped_reward(o, r, w, task), 2.0 * a, 1e-15);
  ShapedRewardWeights wf;
  o.contacts[0].normal_force = 5.0;
  EXPECT_NEAR(shaped_reward(o, Vec9::Zero(), wf, task), wf.w_tip_force * 2.0, 1e-15);
}

// Scripted squeeze: the same grasp held with a deeper squeeze target presses
// harder, so the (uncapped) tip-force term grows.
TEST(ShapedReward, TipForceTermGrowsWithSqueeze) {
  auto tip_term = [](double depth) {
    ExperimentConfig c = short_config(ControllerKind::CPC, GraspKind::CG, 3.0);
    c.cpc.squeeze_depth = depth;
    PreparedEpisode p = prepare_episode(c, make_level3_start(c, 11), 11);
    World& w = *p.world;
    Observation obs = p.initial;
    Vec9 tau = Vec9::Zero();
    for (int k = 0; k < 3000; ++k) {
      if (k % 5 == 0) tau = p.controller->tick(obs);
      obs = w.step(TorqueCommand{tau});
    }
    ShapedRewardWeights only;
    only.w_action_reg = only.w_grasp_hold = 0.0;
    only.force_cap = 100.0;
    return shaped_reward(obs, Vec9::Zero(), only, p.task) - step_reward(obs.cube.pose(), p.task).r;
  };
  EXPECT_GT(tip_term(0.02), tip_term(0.005));
}

TEST(Policy, ShapeAndSaveLoadRoundTrip) {
  const PolicyShape s;
  EXPECT_EQ(s.output_dim(), 18);
  std::mt19937_64 rng(3);
  const ResidualPolicy p = ResidualPolicy::random_uniform(rng, 0.1);
  EXPECT_EQ(static_cast<std::size_t>(p.parameters().size()), s.parameter_count());
  const auto path = std::filesystem::temp_directory_path() / "trifinger_policy_roundtrip.txt";
  save_policy(p, path.string());
  const ResidualPolicy q = load_policy(path.string());
  EXPECT_EQ(p.parameters(), q.parameters());
  std::filesystem::remove(path);
  EXPECT_THROW(load_policy("/nonexistent/policy.txt"), IoError);
}

TEST(Policy, ZeroPolicyOutputsZeroMean) {
  ResidualObservation o;
  o.features.setConstant(0.3);
  o.base_action.setConstant(0.1);
  EXPECT_EQ(ResidualPolicy::zero().act(o), Vec9::Zero());
}

TEST(ResidualEnv, ZeroPolicyReproducesBaseBitForBit) {
  for (ControllerKind ctl : {ControllerKind::CPC, ControllerKind::CIC, ControllerKind::MP}) {
    const ExperimentConfig c = short_config(ctl, GraspKind::CG, 2.0);
    // Base alone.
    std::vector<Vec9> alone;
    {
      ResidualEpisodeSetup s = make_setup(c, 21);
      const auto every = std::llround(1.0 / (s.base->rate_hz() * c.world.dt));
      Observation obs = s.initial;
      Vec9 tau = Vec9::Zero();
      const auto total = std::llround(c.task.episode_duration / c.world.dt);
      for (long long k = 0; k < total; ++k) {
        if (k % every == 0) tau = s.base->tick(obs);
        obs = s.world->step(TorqueCommand{tau});
        if ((k + 1) % every == 0) alone.push_back(s.world->joints().q);
      }
    }
    // Through the residual MDP with the zero policy.
    std::vector<Vec9> wrapped;
    {
      ResidualEpisodeSetup s = make_setup(c, 21);
      World& w = *s.world;
      ResidualEnv env(w, std::move(s.base), s.task);
      const ResidualPolicy zero = ResidualPolicy::zero();
      ResidualObservation o = env.reset(s.initial);
      for (;;) {
        const ResidualStep st = env.step(zero.act(o));
        EXPECT_EQ(st.applied_action, st.base_action);
        EXPECT_EQ(st.applied_residual, Vec9::Zero());
        wrapped.push_back(w.joints().q);
        o = st.observation;
        if (st.done) break;
      }
    }
    EXPECT_EQ(alone, wrapped) << to_string(ctl);
  }
}

TEST(ResidualEnv, BookkeepsBaseActionAndClamp) {
  const ExperimentConfig c = short_config(ControllerKind::CPC, GraspKind::TG, 1.0);
  ResidualEpisodeSetup s = make_setup(c, 5);
  ResidualEnv env(*s.world, std::move(s.base), s.task);
  ResidualObservation o = env.reset(s.initial);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int k = 0; k < 100; ++k) {
    Vec9 raw;
    for (int j = 0; j < 9; ++j) raw[j] = n(rng);
    const Vec9 a0 = o.base_action;
    const ResidualStep st = env.step(raw);
    EXPECT_EQ(st.base_action, a0);
    EXPECT_LE(st.applied_residual.cwiseAbs().maxCoeff(), kResidualRange);
    EXPECT_EQ(st.applied_action, compose_action(a0, raw, c.world.tau_max));
    EXPECT_LE(st.applied_action.cwiseAbs().maxCoeff(), c.world.tau_max);
    o = st.observation;
  }
}

TEST(EsLearner, BudgetOfOneReturnsZeroPolicy) {
  EsLearner es(1);
  int calls = 0;
  const LearnerResult r = es.train(PolicyShape{}, [&](const ResidualPolicy&) { return static_cast<double>(++calls); }, 1);
  EXPECT_EQ(r.evaluations, 1);
  EXPECT_EQ(r.policy.parameters(), ResidualPolicy::zero().parameters());
  EXPECT_EQ(r.score, r.zero_policy_score);
}

TEST(EsLearner, ReplaysAndNeverLosesToZero) {
  // Deterministic smooth evaluator: prefers a particular parameter direction.
  const PolicyEvaluator eval = [](const ResidualPolicy& p) {
    return -(p.parameters().array() - 0.01).square().sum();
  };
  EsLearner a(7), b(7);
  const LearnerResult ra = a.train(PolicyShape{}, eval, 12);
  const LearnerResult rb = b.train(PolicyShape{}, eval, 12);
  EXPECT_EQ(ra.policy.parameters(), rb.policy.parameters());
  EXPECT_GE(ra.score, ra.zero_policy_score);
  EXPECT_EQ(ra.best_history.size(), 12u);
}

TEST(EsLearner, ImprovesOnMotionPlannerBase) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ExperimentConfig c = short_config(ControllerKind::MP, GraspKind::PG, 3.0);
    c.seed = 100 + seed;
    const std::vector<std::uint64_t> goals = {residual_train_seed(c.seed, 0), residual_train_seed(c.seed, 1)};
    EsLearner es(mix_seed(c.seed, 0x4553ULL), c.residual.sigma, c.residual.init_scale);
    const LearnerResult r = train_residual(residual_episode_factory(c, goals), 2, es, 6, c.residual.weights);
    improved += r.score > r.zero_policy_score;
  }
  EXPECT_GE(improved, 6);
}
