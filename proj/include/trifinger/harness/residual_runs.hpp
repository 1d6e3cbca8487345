#pragma once

// Residual-policy protocols (Table IV analogue, level 3): train a residual
// on top of the configured base controller over `residual.train_goals`
// goals, then compare base vs base+residual on held-out goals.

#include "trifinger/harness/episode.hpp"
#include "trifinger/harness/results.hpp"
#include "trifinger/harness/sweep.hpp"
#include "trifinger/residual.hpp"

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace trifinger::harness {

inline std::uint64_t residual_train_seed(std::uint64_t base, int j) {
  return mix_seed(base ^ 0x52545241ULL, static_cast<std::uint64_t>(j));
}

inline std::uint64_t residual_eval_seed(std::uint64_t base, int j) {
  return mix_seed(base ^ 0x52455641ULL, static_cast<std::uint64_t>(j));
}

/// Level-3 config with the residual episode duration.
inline ExperimentConfig residual_config(const ExperimentConfig& base) {
  ExperimentConfig c = base;
  c.task.level = 3;
  c.task.episode_duration = base.residual.episode_duration;
  c.validate();
  return c;
}

/// Factory for the residual MDP: goal g of the training set.
inline ResidualEpisodeFactory residual_episode_factory(const ExperimentConfig& c,
                                                       std::vector<std::uint64_t> seeds) {
  return [c, seeds = std::move(seeds)](int g) {
    const std::uint64_t seed = seeds.at(static_cast<std::size_t>(g));
    PreparedEpisode p = prepare_episode(c, make_level3_start(c, seed), seed);
    if (!p.controller) throw ConfigError("residual episode: " + join(p.errors, '|'));
    ResidualEpisodeSetup s;
    s.world = std::move(p.world);
    s.base = std::move(p.controller);
    s.task = p.task;
    s.initial = p.initial;
    return s;
  };
}

/// Per-tick hook applying `policy` (mean action) on top of the base torque.
inline ActionHook residual_hook(const ResidualPolicy& policy, double tau_max) {
  return [&policy, tau_max](const Observation& obs, const TaskSpec& task, const Vec9& base) {
    ResidualObservation o;
    o.features = residual_features(obs, task);
    o.base_action = base;
    return compose_action(base, policy.act(o), tau_max);
  };
}

struct ResidualTrainingResult {
  LearnerResult learner;
  std::vector<std::uint64_t> train_seeds;
};

inline ResidualTrainingResult run_residual_training(const ExperimentConfig& base) {
  const ExperimentConfig c = residual_config(base);
  ResidualTrainingResult r;
  for (int j = 0; j < c.residual.train_goals; ++j) r.train_seeds.push_back(residual_train_seed(c.seed, j));
  EsLearner learner(mix_seed(c.seed, 0x4553ULL), c.residual.sigma, c.residual.init_scale);
  r.learner = train_residual(residual_episode_factory(c, r.train_seeds), c.residual.train_goals, learner,
                             c.residual.budget, c.residual.weights);
  return r;
}

struct ResidualEvalResult {
  std::vector<std::uint64_t> eval_seeds;
  std::vector<EpisodeLog> base_logs;
  std::vector<EpisodeLog> residual_logs;
  AggregateRow base_row;
  AggregateRow residual_row;
};

inline ResidualEvalResult run_residual_eval(const ExperimentConfig& base, const ResidualPolicy& policy) {
  const ExperimentConfig c = residual_config(base);
  ResidualEvalResult r;
  for (int j = 0; j < c.residual.eval_goals; ++j) r.eval_seeds.push_back(residual_eval_seed(c.seed, j));
  const std::size_t n = r.eval_seeds.size();
  r.base_logs.resize(n);
  r.residual_logs.resize(n);
  const ActionHook hook = residual_hook(policy, c.world.tau_max);
  parallel_for(static_cast<int>(2 * n), c.workers, [&](int job) {
    const std::size_t k = static_cast<std::size_t>(job) % n;
    const std::uint64_t seed = r.eval_seeds[k];
    if (static_cast<std::size_t>(job) < n) {
      r.base_logs[k] = run_episode(c, seed);
    } else {
      r.residual_logs[k] = run_episode(c, seed, hook);
    }
  });
  r.base_row = aggregate(r.base_logs);
  r.residual_row = aggregate(r.residual_logs);
  return r;
}

inline void emit_residual_training(const std::filesystem::path& dir, const ExperimentConfig& config,
                                   const ResidualTrainingResult& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("emit_residual_training: cannot create " + dir.string() + ": " + ec.message());
  const std::string hash = config_hash(config);
  write_file(dir / "config.json", to_json(config).dump(2) + "\n");
  save_policy(r.learner.policy, (dir / "policy.txt").string());
  std::ostringstream curve;
  curve << "# config_hash=" << hash << '\n';
  curve << "# zero_policy_score=" << fmt(r.learner.zero_policy_score) << '\n';
  curve << "evaluation,best_mean_shaped_return\n";
  for (std::size_t k = 0; k < r.learner.best_history.size(); ++k) {
    curve << k << ',' << fmt(r.learner.best_history[k]) << '\n';
  }
  write_file(dir / "training.csv", curve.str());
  std::ostringstream m;
  m << "# config_hash=" << hash << "\nconfig.json\npolicy.txt\ntraining.csv\n";
  write_file(dir / "manifest.txt", m.str());
}

inline void emit_residual_eval(const std::filesystem::path& dir, const ExperimentConfig& config,
                               const ResidualEvalResult& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "episodes", ec);
  if (ec) throw IoError("emit_residual_eval: cannot create " + dir.string() + ": " + ec.message());
  const std::string hash = config_hash(config);
  write_file(dir / "config.json", to_json(config).dump(2) + "\n");
  std::ostringstream t;
  t << "# config_hash=" << hash << '\n';
  t << "controller,grasp,variant,trials,return_mean,return_std,pos_err_mean_cm,pos_err_std_cm,drop_pct\n";
  auto row = [&](const char* variant, const AggregateRow& a) {
    t << a.controller << ',' << a.grasp << ',' << variant << ',' << a.trials << ',' << fmt(a.return_mean)
      << ',' << fmt(a.return_std) << ',' << fmt(a.pos_err_mean_cm) << ',' << fmt(a.pos_err_std_cm) << ','
      << fmt(a.drop_pct) << '\n';
  };
  row("base", r.base_row);
  row("residual", r.residual_row);
  write_file(dir / "comparison.csv", t.str());
  std::vector<std::string> files = {"config.json", "comparison.csv"};
  for (std::size_t k = 0; k < r.base_logs.size(); ++k) {
    const std::string a = "episodes/base_e" + std::to_string(k) + ".csv";
    const std::string b = "episodes/residual_e" + std::to_string(k) + ".csv";
    write_file(dir / a, episode_csv(r.base_logs[k]));
    write_file(dir / b, episode_csv(r.residual_logs[k]));
    files.push_back(a);
    files.push_back(b);
  }
  std::ostringstream m;
  m << "# config_hash=" << hash << '\n';
  for (const auto& f : files) m << f << '\n';
  write_file(dir / "manifest.txt", m.str());
}

}  // namespace trifinger::harness
