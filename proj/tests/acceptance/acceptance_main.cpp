// Acceptance checks for the ten primary criteria. Each criterion prints one
// "criterion N: PASS|FAIL <detail>" line; `--criterion N` runs a single one
// (one ctest entry per criterion), no argument runs all of them.

#include "../oracles.hpp"
#include "trifinger/controller_mp.hpp"
#include "trifinger/harness/residual_runs.hpp"
#include "trifinger/harness/sweep.hpp"
#include "trifinger/harness/tuning.hpp"
#include "trifinger/kinematics.hpp"
#include "trifinger/rewards.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace trifinger;
using namespace trifinger::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

Quat axis_angle(double angle, const Vec3& axis) { return Quat(Eigen::AngleAxisd(angle, axis.normalized())); }

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

bool same_samples(const EpisodeLog& a, const EpisodeLog& b) {
  if (a.samples.size() != b.samples.size()) return false;
  for (std::size_t k = 0; k < a.samples.size(); ++k) {
    const EpisodeSample& x = a.samples[k];
    const EpisodeSample& y = b.samples[k];
    if (x.t != y.t || x.q != y.q || x.dq != y.dq || x.tau != y.tau || x.reward != y.reward ||
        x.cube.position != y.cube.position || x.cube.orientation.coeffs() != y.cube.orientation.coeffs() ||
        x.in_contact != y.in_contact || x.normal_force != y.normal_force) {
      return false;
    }
  }
  return true;
}

// 1. Rewards: 20 hand-formula cases at 1e-12 plus the 90/180 degree anchors.
Outcome criterion1() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  std::uniform_real_distribution<double> ang(0.0, kPi);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    TaskSpec s;
    s.level = 3 + k % 2;
    s.goal = Pose{Vec3(u(rng), u(rng), 0.1 + u(rng) / 2), axis_angle(ang(rng), random_unit(rng))};
    const double theta = ang(rng);
    const Pose cube{Vec3(u(rng), u(rng), 0.1 + u(rng) / 2), s.goal.orientation * axis_angle(theta, random_unit(rng))};
    const Vec3 e = cube.position - s.goal.position;
    const double r3 = -0.5 * std::sqrt(e.x() * e.x() + e.y() * e.y()) / 0.39 - 0.5 * std::abs(e.z()) / 0.27;
    const double expected = s.level == 3 ? r3 : 0.5 * r3 - 0.5 * theta / kPi;
    worst = std::max(worst, std::abs(step_reward(cube, s).r - expected));
  }
  double anchor = 0.0;
  for (int k = 0; k < 5; ++k) {
    const Vec3 axis = random_unit(rng);
    const Quat base = axis_angle(ang(rng), random_unit(rng));
    anchor = std::max(anchor, std::abs(orientation_error(base * axis_angle(kPi / 2, axis), base) - 0.5));
    anchor = std::max(anchor, std::abs(orientation_error(base * axis_angle(kPi, axis), base) - 1.0));
  }
  return {worst < 1e-12 && anchor < 1e-12,
          "20 cases max err " + num(worst) + ", anchor err " + num(anchor)};
}

// 2. Kinematics: Jacobian vs FD, damped pinv vs normal equations, gravity
// compensation vs FD of the potential energy.
Outcome criterion2() {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u0(-kPi / 2, kPi / 2), u(-kPi, kPi);
  std::normal_distribution<double> n(0.0, 1.0);
  const FingerSet fingers = make_default_fingers();
  const double h = 1e-6;
  double jac = 0.0, grav = 0.0, pinv = 0.0;
  for (int k = 0; k < 100; ++k) {
    const FingerModel& m = fingers[static_cast<std::size_t>(k % 3)];
    const Vec3 q(u0(rng), u(rng), u(rng));
    const Mat3 j = jacobian(m, q);
    const Vec3 g = gravity_compensation(m, q);
    for (int c = 0; c < 3; ++c) {
      Vec3 dq = Vec3::Zero();
      dq[c] = h;
      const Vec3 fd = (forward_kinematics(m, q + dq) - forward_kinematics(m, q - dq)) / (2 * h);
      jac = std::max(jac, (j.col(c) - fd).cwiseAbs().maxCoeff());
      const double fdv = (potential_energy(m, q + dq) - potential_energy(m, q - dq)) / (2 * h);
      grav = std::max(grav, std::abs(g[c] - fdv));
    }
    Mat3 a;
    for (int r = 0; r < 9; ++r) a(r / 3, r % 3) = n(rng);
    const Vec3 dx(n(rng), n(rng), n(rng));
    const double lambda = 1e-6;
    const Vec3 ref = (a.transpose() * a + lambda * Mat3::Identity()).fullPivLu().solve(a.transpose() * dx);
    pinv = std::max(pinv, (damped_pinv_solve<3, 3>(a, dx, lambda) - ref).cwiseAbs().maxCoeff() /
                              std::max(1.0, ref.norm()));
  }
  return {jac < 1e-6 && pinv < 1e-9 && grav < 1e-6,
          "jacobian " + num(jac) + ", pinv " + num(pinv) + ", gravity " + num(grav)};
}

// 3. CIC force nullification and moment realization over 100 random cases.
Outcome criterion3() {
  const ControllerEnv env;
  std::mt19937_64 rng(103);
  double null_res = 0.0, moment_res = 0.0;
  for (int k = 0; k < 100; ++k) {
    const oracle::CicCase c = oracle::random_cic_case(env, rng);
    const Vec9& q = c.obs.joint_state.q;
    std::array<Vec3, 3> f2;
    tau2_surface_force(env, c.grasp, q, c.cube.orientation, 0.6, &f2);
    const Vec9 t3 = tau3_nullify(env, q, f2, 1e-4);
    null_res = std::max(null_res, oracle::nullification_residual(env, q, f2, t3));
    std::array<Vec3, 3> xb;
    for (int i = 0; i < 3; ++i) xb[static_cast<std::size_t>(i)] = c.cube.position - c.obs.fingertips.x[static_cast<std::size_t>(i)];
    const Vec9 t4 = tau4_rotation(env, q, xb, c.cube.orientation, c.task.goal.orientation, 15.0, 1e-4);
    moment_res = std::max(moment_res, oracle::moment_residual(env, q, xb, c.cube.orientation,
                                                              c.task.goal.orientation, 15.0, t4));
  }
  return {null_res < 1e-9 && moment_res < 1e-9,
          "max nullification residual " + num(null_res) + ", max moment residual " + num(moment_res)};
}

// 4. Force-closure test vs the brute-force LP oracle on 50 grasps.
Outcome criterion4() {
  const GraspOptions opt{};
  const double h = opt.half();
  const FingerSet fingers = make_default_fingers();
  const int edges = 8;
  int agree = 0, total = 0;
  bool mandated = true;
  auto check = [&](const std::vector<GraspContact>& cs, double mu) {
    const bool lib = is_force_closure(cs, mu, edges, h);
    const bool ref = oracle::force_closure(cs, mu, edges, h);
    ++total;
    agree += lib == ref;
    return lib;
  };
  const Pose rest{Vec3(0, 0, 0.0325), Quat::Identity()};
  const Grasp tg = triangle_grasp(rest, Pose{Vec3(0.02, 0.01, 0.06), Quat::Identity()}, fingers, opt);
  mandated &= check({tg.contacts.begin(), tg.contacts.end()}, opt.mu);
  mandated &= !check({make_contact(Face::PosZ, h, 0.01, 0.0), make_contact(Face::PosZ, h, -0.01, 0.01),
                      make_contact(Face::PosZ, h, 0.0, -0.015)},
                     0.5);
  mandated &= !check({make_contact(Face::PosX, h), make_contact(Face::NegX, h)}, 0.0);

  std::mt19937_64 rng(104);
  std::uniform_int_distribution<int> face(0, 5);
  std::uniform_real_distribution<double> coord(-0.8 * h, 0.8 * h);
  const std::array<double, 4> mus{0.0, 0.2, 0.5, 1.0};
  int positives = 0;
  while (total < 50) {
    std::vector<GraspContact> cs;
    const int n = 3 + total % 2;
    for (int j = 0; j < n; ++j) cs.push_back(make_contact(static_cast<Face>(face(rng)), h, coord(rng), coord(rng)));
    const double mu = mus[static_cast<std::size_t>(total % 4)];
    try {
      positives += check(cs, mu);
    } catch (const DegenerateGrasp&) {
      continue;
    }
  }
  return {mandated && agree == total,
          std::to_string(agree) + "/" + std::to_string(total) + " agree (" + std::to_string(positives) +
              " random closures), mandated cases " + (mandated ? "ok" : "wrong")};
}

// 5. Planner soundness and open-loop execution.
Outcome criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  const ControllerEnv env;
  const MpModels models(env);
  const MpParams p;
  std::mt19937_64 goals(105);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0, valid = 0;
  bool invariant = true;
  for (int k = 0; k < 20; ++k) {
    const Pose start{Vec3(0, 0, 0.0325), axis_angle(0.5 * u(goals), Vec3::UnitZ())};
    const Pose goal{Vec3(0.05 * u(goals), 0.05 * u(goals), 0.0325 + 0.03 * (1 + u(goals))),
                    axis_angle(0.4 * u(goals), Vec3::UnitZ()) * start.orientation};
    std::mt19937_64 rng(static_cast<std::uint64_t>(k));
    const MotionPlan plan = plan_with_grasps(start, goal, models, rng, p);
    for (const TaskSpaceNode& w : plan.waypoints) {
      ++checked;
      valid += node_is_valid(plan.grasp, w, models);
    }
    for (double t : {0.0, 0.37, 2.5}) {
      Observation a;
      a.joint_state.q = plan.waypoints[0].joint_config + Vec9::Constant(0.01 * u(goals));
      a.fingertips = fingertip_state(env.fingers, a.joint_state.q, Vec9::Zero());
      a.time = t;
      Observation b = a;
      b.cube.position += Vec3(0.02 * u(goals), 0.02 * u(goals), 0.03);
      b.cube.orientation = axis_angle(kPi * u(goals), random_unit(goals));
      invariant &= execute_plan(env, plan, a, p, MpExecState{}).first ==
                   execute_plan(env, plan, b, p, MpExecState{}).first;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {checked > 0 && valid == checked && invariant && secs < 60.0,
          std::to_string(valid) + "/" + std::to_string(checked) + " waypoints valid, open-loop invariance " +
              (invariant ? "exact" : "violated") + ", " + num(secs) + " s"};
}

// 6. GP posterior vs dense oracle, EI anchor and Monte Carlo, BO on a quadratic.
Outcome criterion6() {
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double gp_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 12, d = 3;
    Eigen::MatrixXd x(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < d; ++k) x(i, k) = u(rng);
      y[i] = std::sin(6.0 * x(i, 0)) + 0.5 * x.row(i).sum() + 0.05 * u(rng);
    }
    GpHyper hy;
    hy.lengthscales = Eigen::VectorXd::Constant(d, 0.2 + 0.2 * trial);
    hy.signal_variance = 1.3;
    hy.noise_variance = 1e-3;
    const GpModel m = gp_condition(x, y, hy);
    const oracle::DenseGp g = oracle::dense_gp(x, y, hy, m.jitter);
    for (int q = 0; q < 20; ++q) {
      const Eigen::Vector3d xq(u(rng), u(rng), u(rng));
      const auto [mu, var] = gp_posterior(m, xq);
      const auto [mu_o, var_o] = oracle::dense_posterior(g, x, hy, xq);
      gp_err = std::max({gp_err, std::abs(mu - mu_o), std::abs(var - var_o)});
    }
  }
  // EI(mu = f*, sigma = 1) = phi(0) = 1/sqrt(2 pi) = 0.39894...
  const double anchor = std::abs(expected_improvement(0.7, 1.0, 0.7) - 1.0 / std::sqrt(2.0 * kPi));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> s(-1.0, 1.0);
  int mc_ok = 0;
  for (int c = 0; c < 10; ++c) {
    const double mu = s(rng), sigma = 0.2 + std::abs(s(rng)), best = mu + sigma * s(rng);
    const int n = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < n; ++k) {
      const double v = std::max(0.0, mu + sigma * n01(rng) - best);
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    mc_ok += std::abs(expected_improvement(mu, sigma * sigma, best) - mean) <= 3.0 * se;
  }
  const ParamSpace space{{{"x", 0.0, 1.0}, {"y", 0.0, 1.0}}};
  auto f = [](const std::vector<double>& t, std::uint64_t) {
    return std::vector<double>{-((t[0] - 0.3) * (t[0] - 0.3) + (t[1] - 0.7) * (t[1] - 0.7))};
  };
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 r(seed);
    const BoTrace trace = bo_loop(space, f, 4, 50, r);
    const auto& t = trace.best().theta;
    hits += std::hypot(t[0] - 0.3, t[1] - 0.7) <= 0.05;
  }
  return {gp_err < 1e-8 && anchor < 1e-6 && mc_ok == 10 && hits >= 9,
          "GP max err " + num(gp_err) + ", EI anchor err " + num(anchor) + ", EI MC " + std::to_string(mc_ok) +
              "/10 within 3 SE, BO optimum found " + std::to_string(hits) + "/10"};
}

// 7. BO-tuned vs manual parameters on level 3, held-out goals.
Outcome criterion7() {
  const std::vector<std::pair<ControllerKind, GraspKind>> pairs = {
      {ControllerKind::CPC, GraspKind::TG}, {ControllerKind::CIC, GraspKind::CG}, {ControllerKind::MP, GraspKind::PG}};
  bool all_ge = true, any_gt = false;
  std::string detail;
  for (const auto& [ctl, g] : pairs) {
    ExperimentConfig c;
    c.controller = ctl;
    c.grasp = g;
    const TuningResult r = run_bo_tuning(c, 3);
    all_ge &= r.tuned_row.return_mean >= r.manual_row.return_mean;
    any_gt |= r.tuned_row.return_mean > r.manual_row.return_mean;
    detail += to_string(ctl) + "-" + to_string(g) + " manual " + num(r.manual_row.return_mean, 4) + " tuned " +
              num(r.tuned_row.return_mean, 4) + (r.incumbent_selected ? "" : " (manual kept)") + "; ";
  }
  return {all_ge && any_gt, detail + "held-out goals " + std::to_string(ExperimentConfig{}.bo.eval_goals)};
}

// 8. Residual composition: zero policy is bit-identical; residual clamp.
Outcome criterion8() {
  const ResidualPolicy zero = ResidualPolicy::zero();
  std::mt19937_64 rng(108);
  const ResidualPolicy wild = ResidualPolicy::random_uniform(rng, 2.0);
  int identical = 0, runs = 0;
  double max_res = 0.0;
  for (ControllerKind ctl : {ControllerKind::CPC, ControllerKind::CIC, ControllerKind::MP}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ExperimentConfig c;
      c.controller = ctl;
      c.grasp = ctl == ControllerKind::MP ? GraspKind::PG : GraspKind::CG;
      c.task.episode_duration = 10.0;
      const EpisodeLog base = run_episode(c, seed);
      const EpisodeLog with_zero = run_episode(c, seed, residual_hook(zero, c.world.tau_max));
      ++runs;
      identical += same_samples(base, with_zero) && with_zero.max_abs_residual == 0.0;
      const EpisodeLog with_wild = run_episode(c, seed, residual_hook(wild, c.world.tau_max));
      max_res = std::max(max_res, with_wild.max_abs_residual);
    }
  }
  // |tau - base| is recomputed after the addition, hence the rounding slack.
  return {identical == runs && max_res <= kResidualRange + 1e-12,
          std::to_string(identical) + "/" + std::to_string(runs) +
              " zero-policy runs bit-identical, max |residual| per tick " + num(max_res, 6)};
}

// 9. Mix-and-match comparisons over 15 paired seeds.
Outcome criterion9() {
  ExperimentConfig c;
  const SweepResult r = run_mix_and_match(c, 15);
  auto row = [&](const std::string& ctl, const std::string& g, double d) -> const AggregateRow& {
    for (const AggregateRow& a : r.rows) {
      if (a.controller == ctl && a.grasp == g && a.delta_theta_deg == d) return a;
    }
    throw std::runtime_error("missing cell");
  };
  bool a_ok = true;
  std::string a_detail;
  for (double d : {10.0, 25.0}) {
    for (const char* g : {"TG", "CG", "PG"}) {
      const double drop = row("MP", g, d).drop_pct;
      a_ok &= drop == 0.0;
      a_detail += std::string(g) + "@" + num(d) + "=" + num(drop) + "% ";
    }
  }
  int pg = 0, cg = 0;
  for (const char* ctl : {"CPC", "CIC", "MP"}) {
    pg += row(ctl, "PG", 35.0).dropped;
    cg += row(ctl, "CG", 35.0).dropped;
  }
  const bool b_ok = pg <= cg;
  const double tg_err = row("CPC", "TG", 10.0).ori_err_mean_deg;
  const double cg_err = row("CPC", "CG", 10.0).ori_err_mean_deg;
  const bool c_ok = tg_err <= cg_err;
  return {a_ok && b_ok && c_ok,
          "(a) MP drops " + a_detail + "(b) 35deg pooled drops PG " + std::to_string(pg) + " vs CG " +
              std::to_string(cg) + " (c) CPC 10deg ori err TG " + num(tg_err) + " vs CG " + num(cg_err) + " deg"};
}

// 10. The `sweep` command rerun yields a bit-identical results directory.
std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

std::string tree_hash(const std::map<std::string, std::string>& files) {
  std::string all;
  for (const auto& [name, content] : files) all += name + '\n' + content;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(all)));
  return buf;
}

Outcome criterion10() {
  const fs::path root = fs::temp_directory_path() / "trifinger_acceptance_c10";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string bench = TRIFINGER_BENCH_PATH;
  for (const char* run : {"a", "b"}) {
    // Identical command twice; two workers so thread scheduling varies.
    const std::string cmd = "\"" + bench + "\" sweep --trials 15 --workers 2 --out \"" +
                            (root / run).string() + "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0) return {false, "sweep command returned non-zero"};
  }
  const auto a = read_tree(root / "a");
  const auto b = read_tree(root / "b");
  const std::string ha = tree_hash(a), hb = tree_hash(b);
  fs::remove_all(root);
  return {!a.empty() && a == b,
          std::to_string(a.size()) + " files, directory hashes " + ha + " / " + hb};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks (criteria 1-10)"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-10); all when omitted")->check(CLI::Range(0, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> checks = {criterion1, criterion2, criterion3, criterion4,
                                                        criterion5, criterion6, criterion7, criterion8,
                                                        criterion9, criterion10};
  bool all = true;
  for (int n = 1; n <= 10; ++n) {
    if (only != 0 && n != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[static_cast<std::size_t>(n - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d: %s %s [%.1f s]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    all &= o.pass;
  }
  return all ? 0 : 1;
}
