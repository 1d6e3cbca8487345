#pragma once

// BO tuning protocol (Table III analogue): Bayesian optimization over the
// controller's declared parameter intervals on the configured level, then a
// manual-vs-tuned comparison on held-out goals.
//
// Seeds: tuning goals and held-out evaluation goals come from two disjoint
// derived streams of the base seed. Every objective evaluation replays the
// same tuning goals (common random numbers), so the objective is a
// deterministic function of the parameters.

#include "trifinger/bayesopt.hpp"
#include "trifinger/harness/results.hpp"
#include "trifinger/harness/sweep.hpp"

#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace trifinger::harness {

inline std::uint64_t tuning_seed(std::uint64_t base, int j) {
  return mix_seed(base ^ 0x54554e45ULL, static_cast<std::uint64_t>(j));
}

inline std::uint64_t evaluation_seed(std::uint64_t base, int j) {
  return mix_seed(base ^ 0x4556414cULL, static_cast<std::uint64_t>(j));
}

/// Writes one named tunable into the config's controller parameters.
inline void set_param(ExperimentConfig& c, ControllerKind kind, const std::string& name, double v) {
  switch (kind) {
    case ControllerKind::CPC:
      if (name == "kp") c.cpc.kp = v;
      else if (name == "ki") c.cpc.ki = v;
      else if (name == "kd") c.cpc.kd = v;
      else if (name == "gain_growth_rate") c.cpc.gain_growth_rate = v;
      else if (name == "gain_clip") c.cpc.gain_clip = v;
      else if (name == "approach_speed") c.cpc.approach_speed = v;
      else if (name == "goal_feedback") c.cpc.goal_feedback = v;
      else throw ConfigError("CPC has no tunable '" + name + "'");
      return;
    case ControllerKind::CIC:
      if (name == "K") c.cic.K = Vec3::Constant(v);
      else if (name == "K1") c.cic.K1 = Vec3::Constant(v);
      else if (name == "K2") c.cic.K2 = v;
      else if (name == "K3") c.cic.K3 = v;
      else if (name == "D") c.cic.D = v;
      else if (name == "goal_speed") c.cic.goal_speed = v;
      else if (name == "x_r_offset_x") c.cic.x_r_offset.x() = v;
      else if (name == "x_r_offset_y") c.cic.x_r_offset.y() = v;
      else if (name == "x_r_offset_z") c.cic.x_r_offset.z() = v;
      else throw ConfigError("CIC has no tunable '" + name + "'");
      return;
    case ControllerKind::MP:
      if (name == "waypoint_dwell") c.mp.waypoint_dwell = v;
      else if (name == "goal_append_step") c.mp.goal_append_step = v;
      else if (name == "pd_kp") c.mp.pd_kp = v;
      else if (name == "pd_kd") c.mp.pd_kd = v;
      else throw ConfigError("MP has no tunable '" + name + "'");
      return;
  }
}

inline double get_param(const ExperimentConfig& c, ControllerKind kind, const std::string& name) {
  switch (kind) {
    case ControllerKind::CPC:
      if (name == "kp") return c.cpc.kp;
      if (name == "ki") return c.cpc.ki;
      if (name == "kd") return c.cpc.kd;
      if (name == "gain_growth_rate") return c.cpc.gain_growth_rate;
      if (name == "gain_clip") return c.cpc.gain_clip;
      if (name == "approach_speed") return c.cpc.approach_speed;
      if (name == "goal_feedback") return c.cpc.goal_feedback;
      break;
    case ControllerKind::CIC:
      if (name == "K") return c.cic.K.x();
      if (name == "K1") return c.cic.K1.x();
      if (name == "K2") return c.cic.K2;
      if (name == "K3") return c.cic.K3;
      if (name == "D") return c.cic.D;
      if (name == "goal_speed") return c.cic.goal_speed;
      if (name == "x_r_offset_x") return c.cic.x_r_offset.x();
      if (name == "x_r_offset_y") return c.cic.x_r_offset.y();
      if (name == "x_r_offset_z") return c.cic.x_r_offset.z();
      break;
    case ControllerKind::MP:
      if (name == "waypoint_dwell") return c.mp.waypoint_dwell;
      if (name == "goal_append_step") return c.mp.goal_append_step;
      if (name == "pd_kp") return c.mp.pd_kp;
      if (name == "pd_kd") return c.mp.pd_kd;
      break;
  }
  throw ConfigError(to_string(kind) + " has no tunable '" + name + "'");
}

inline ParamSpace tuning_space(const ExperimentConfig& c, ControllerKind kind) {
  const auto it = c.bo.spaces.find(to_string(kind));
  if (it == c.bo.spaces.end() || it->second.empty()) {
    throw ConfigError("no BO intervals declared for " + to_string(kind));
  }
  ParamSpace space;
  for (const auto& [name, range] : it->second) {
    get_param(c, kind, name);  // validates the name
    space.dims.push_back(ParamDim{name, range.first, range.second});
  }
  space.validate();
  return space;
}

inline ExperimentConfig with_params(const ExperimentConfig& c, const ParamSpace& space,
                                    const std::vector<double>& theta) {
  ExperimentConfig out = c;
  for (std::size_t k = 0; k < space.size(); ++k) set_param(out, c.controller, space.dims[k].name, theta[k]);
  return out;
}

/// Runs one episode per seed (level and duration from `c`) and returns the logs.
inline std::vector<EpisodeLog> run_seeded(const ExperimentConfig& c, const std::vector<std::uint64_t>& seeds,
                                          int workers) {
  std::vector<EpisodeLog> logs(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), workers,
               [&](int j) { logs[static_cast<std::size_t>(j)] = run_episode(c, seeds[static_cast<std::size_t>(j)]); });
  return logs;
}

struct TuningResult {
  ControllerKind controller = ControllerKind::CPC;
  GraspKind grasp = GraspKind::TG;
  int level = 3;
  BoTrace trace;
  std::vector<double> manual_theta;
  std::vector<double> tuned_theta;
  double manual_tuning_mean = 0.0;   // mean return on the tuning goals
  double incumbent_tuning_mean = 0.0;
  bool incumbent_selected = false;   // false: manual params kept (incumbent not better)
  std::vector<std::uint64_t> tuning_seeds;
  std::vector<std::uint64_t> evaluation_seeds;
  std::vector<EpisodeLog> manual_logs;
  std::vector<EpisodeLog> tuned_logs;
  AggregateRow manual_row;
  AggregateRow tuned_row;
};

/// BO tuning of `base.controller` / `base.grasp` on `level`: n_init random
/// points plus n_iter BO iterations, each scored by the mean return over the
/// fixed tuning goals; the final parameters are the incumbent if it beats the
/// manual defaults on the tuning goals, otherwise the manual defaults. Both
/// are then evaluated on `bo.eval_goals` held-out goals.
inline TuningResult run_bo_tuning(const ExperimentConfig& base, int level) {
  ExperimentConfig c = base;
  c.task.level = level;
  c.task.episode_duration = base.bo.episode_duration;
  c.validate();
  TuningResult res;
  res.controller = c.controller;
  res.grasp = c.grasp;
  res.level = level;
  const ParamSpace space = tuning_space(c, c.controller);
  for (const ParamDim& d : space.dims) res.manual_theta.push_back(get_param(c, c.controller, d.name));

  for (int j = 0; j < c.bo.tuning_goals; ++j) res.tuning_seeds.push_back(tuning_seed(c.seed, j));
  for (int j = 0; j < c.bo.eval_goals; ++j) res.evaluation_seeds.push_back(evaluation_seed(c.seed, j));
  const std::set<std::uint64_t> tune_set(res.tuning_seeds.begin(), res.tuning_seeds.end());
  for (std::uint64_t s : res.evaluation_seeds) {
    if (tune_set.count(s)) throw ConfigError("run_bo_tuning: tuning and evaluation seeds overlap");
  }

  auto returns_of = [&](const ExperimentConfig& cfg) {
    const std::vector<EpisodeLog> logs = run_seeded(cfg, res.tuning_seeds, c.workers);
    std::vector<double> r;
    for (const EpisodeLog& l : logs) r.push_back(l.terminal.episode_return);
    return r;
  };
  const BoObjective objective = [&](const std::vector<double>& theta, std::uint64_t) {
    return returns_of(with_params(c, space, theta));
  };
  std::mt19937_64 rng(mix_seed(c.seed, 0x424fULL));
  res.trace = bo_loop(space, objective, c.bo.n_init, c.bo.n_iter, rng);

  res.manual_tuning_mean = mean_std(returns_of(c)).mean;
  res.incumbent_tuning_mean = res.trace.best().mean;
  res.incumbent_selected = !res.trace.best().failed && res.incumbent_tuning_mean > res.manual_tuning_mean;
  res.tuned_theta = res.incumbent_selected ? res.trace.best().theta : res.manual_theta;

  const ExperimentConfig tuned = with_params(c, space, res.tuned_theta);
  res.manual_logs = run_seeded(c, res.evaluation_seeds, c.workers);
  res.tuned_logs = run_seeded(tuned, res.evaluation_seeds, c.workers);
  res.manual_row = aggregate(res.manual_logs);
  res.tuned_row = aggregate(res.tuned_logs);
  return res;
}

inline std::vector<std::string> trace_header(const ParamSpace& space) {
  std::vector<std::string> h = {"index", "seed", "failed", "mean_return", "incumbent_mean"};
  for (const ParamDim& d : space.dims) h.push_back(d.name);
  h.push_back("error");
  return h;
}

inline std::string trace_csv(const BoTrace& t, const std::string& hash) {
  std::ostringstream out;
  out << "# config_hash=" << hash << '\n';
  out << join(trace_header(t.space), ',') << '\n';
  for (std::size_t k = 0; k < t.iterations.size(); ++k) {
    const BoEntry& e = t.iterations[k];
    out << k << ',' << e.seed << ',' << (e.failed ? 1 : 0) << ',' << fmt(e.mean) << ','
        << fmt(t.incumbent_history[k]);
    for (double v : e.theta) out << ',' << fmt(v);
    std::string err = sanitize(e.error);
    for (char& ch : err) {
      if (ch == ',') ch = ';';
    }
    out << ',' << err << '\n';
  }
  return out.str();
}

inline const std::vector<std::string>& comparison_header() {
  static const std::vector<std::string> h = {"controller",      "grasp",          "level",       "variant",
                                             "trials",          "return_mean",    "return_std",  "pos_err_mean_cm",
                                             "pos_err_std_cm",  "ori_err_mean_deg", "ori_err_std_deg", "drop_pct"};
  return h;
}

/// Table-III-shaped comparison rows (manual, then tuned).
inline std::string comparison_csv(const TuningResult& r, const std::string& hash) {
  std::ostringstream out;
  out << "# config_hash=" << hash << '\n';
  out << join(comparison_header(), ',') << '\n';
  auto row = [&](const char* variant, const AggregateRow& a) {
    out << to_string(r.controller) << ',' << to_string(r.grasp) << ',' << r.level << ',' << variant << ','
        << a.trials << ',' << fmt(a.return_mean) << ',' << fmt(a.return_std) << ',' << fmt(a.pos_err_mean_cm)
        << ',' << fmt(a.pos_err_std_cm) << ',' << fmt(a.ori_err_mean_deg) << ',' << fmt(a.ori_err_std_deg)
        << ',' << fmt(a.drop_pct) << '\n';
  };
  row("manual", r.manual_row);
  row("tuned", r.tuned_row);
  return out.str();
}

inline void emit_tuning_results(const std::filesystem::path& dir, const ExperimentConfig& config,
                                const TuningResult& r) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "episodes", ec);
  if (ec) throw IoError("emit_tuning_results: cannot create " + dir.string() + ": " + ec.message());
  const std::string hash = config_hash(config);
  std::vector<std::string> files = {"config.json", "trace.csv", "comparison.csv", "params.csv"};
  write_file(dir / "config.json", to_json(config).dump(2) + "\n");
  write_file(dir / "trace.csv", trace_csv(r.trace, hash));
  write_file(dir / "comparison.csv", comparison_csv(r, hash));
  std::ostringstream p;
  p << "# config_hash=" << hash << '\n';
  p << "# incumbent_selected=" << (r.incumbent_selected ? 1 : 0) << '\n';
  p << "# manual_tuning_mean=" << fmt(r.manual_tuning_mean) << '\n';
  p << "# incumbent_tuning_mean=" << fmt(r.incumbent_tuning_mean) << '\n';
  p << "name,lower,upper,manual,incumbent,tuned\n";
  for (std::size_t k = 0; k < r.trace.space.size(); ++k) {
    const ParamDim& d = r.trace.space.dims[k];
    p << d.name << ',' << fmt(d.lower) << ',' << fmt(d.upper) << ',' << fmt(r.manual_theta[k]) << ','
      << fmt(r.trace.best().theta[k]) << ',' << fmt(r.tuned_theta[k]) << '\n';
  }
  write_file(dir / "params.csv", p.str());
  for (std::size_t k = 0; k < r.manual_logs.size(); ++k) {
    const std::string a = "episodes/manual_e" + std::to_string(k) + ".csv";
    const std::string b = "episodes/tuned_e" + std::to_string(k) + ".csv";
    write_file(dir / a, episode_csv(r.manual_logs[k]));
    write_file(dir / b, episode_csv(r.tuned_logs[k]));
    files.push_back(a);
    files.push_back(b);
  }
  std::ostringstream m;
  m << "# config_hash=" << hash << '\n';
  for (const auto& f : files) m << f << '\n';
  write_file(dir / "manifest.txt", m.str());
}

}  // namespace trifinger::harness
