#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.
// They re-derive the quantities from first principles instead of calling
// the library code paths under test.

#include "trifinger/bayesopt.hpp"
#include "trifinger/controller_cic.hpp"
#include "trifinger/grasping.hpp"

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace trifinger::oracle {

/// Primitive wrenches built independently of the library: each friction cone
/// is discretized into `edges` rays n + mu (cos a t1 + sin a t2); the torque
/// rows are scaled by 1/half.
inline Eigen::MatrixXd wrench_set(const std::vector<GraspContact>& contacts, double mu, int edges,
                                  double half) {
  const int m = mu > 0.0 ? edges : 1;
  Eigen::MatrixXd w(6, static_cast<Eigen::Index>(contacts.size() * static_cast<std::size_t>(m)));
  Eigen::Index col = 0;
  for (const auto& c : contacts) {
    const Vec3 n = c.normal.normalized();
    // Any orthonormal tangent basis gives the same cone up to rotation of the
    // rays; pick one by Gram-Schmidt against the least-aligned world axis.
    Vec3 a = Vec3::UnitX();
    if (std::abs(n.x()) > 0.9) a = Vec3::UnitY();
    const Vec3 t1 = (a - a.dot(n) * n).normalized();
    const Vec3 t2 = n.cross(t1);
    for (int k = 0; k < m; ++k) {
      const double ang = 2.0 * kPi * k / m;
      const Vec3 f = mu > 0.0 ? Vec3(n + mu * (std::cos(ang) * t1 + std::sin(ang) * t2)) : n;
      w.block<3, 1>(0, col) = f;
      w.block<3, 1>(3, col) = c.point.cross(f) / half;
      ++col;
    }
  }
  return w;
}

/// Brute-force positive-spanning test: the columns positively span R^6 iff
/// they have rank 6 and no nonzero c satisfies c . w_j >= 0 for all j. Such
/// a c, if it exists, can be taken as an extreme ray of the polar cone,
/// which is the normal of five linearly independent columns; all 5-subsets
/// are enumerated.
inline bool positively_spans(const Eigen::MatrixXd& w, double tol = 1e-10) {
  const int n = static_cast<int>(w.cols());
  if (n < 7) return false;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(w);
  lu.setThreshold(1e-9);
  if (lu.rank() < 6) return false;
  Eigen::MatrixXd cols(6, 5);
  std::vector<int> idx = {0, 1, 2, 3, 4};
  while (true) {
    for (int k = 0; k < 5; ++k) cols.col(k) = w.col(idx[static_cast<std::size_t>(k)]);
    Eigen::FullPivLU<Eigen::MatrixXd> sub(cols.transpose());
    sub.setThreshold(1e-10);
    if (sub.rank() == 5) {
      Eigen::VectorXd c = sub.kernel().col(0);
      c.normalize();
      const Eigen::VectorXd proj = w.transpose() * c;
      if (proj.minCoeff() >= -tol || proj.maxCoeff() <= tol) return false;
    }
    int k = 4;
    while (k >= 0 && idx[static_cast<std::size_t>(k)] == n - 5 + k) --k;
    if (k < 0) break;
    ++idx[static_cast<std::size_t>(k)];
    for (int j = k + 1; j < 5; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
  }
  return true;
}

inline bool force_closure(const std::vector<GraspContact>& contacts, double mu, int edges, double half) {
  return positively_spans(wrench_set(contacts, mu, edges, half));
}

/// Random well-conditioned CIC evaluation point: a cube pose, a heuristic
/// grasp solved by IK, joint angles perturbed around the IK solution, and a
/// goal rotated away from the cube.
struct CicCase {
  Observation obs;
  Grasp grasp;
  Pose cube;
  TaskSpec task;
};

inline CicCase random_cic_case(const ControllerEnv& env, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const GraspOptions opt = env.grasp_options();
  for (;;) {
    CicCase c;
    c.cube.position = Vec3(0.03 * u(rng), 0.03 * u(rng), 0.0325 + 0.025 * (1.0 + u(rng)));
    c.cube.orientation = Quat(Eigen::AngleAxisd(0.25 * kPi * u(rng), Vec3::UnitZ()));
    c.task.level = 4;
    c.task.goal.position = c.cube.position + Vec3(0.03 * u(rng), 0.03 * u(rng), 0.02 * u(rng));
    const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
    c.task.goal.orientation = (Quat(Eigen::AngleAxisd(0.1 + 0.8 * std::abs(u(rng)), axis)) * c.cube.orientation).normalized();
    const int kind = static_cast<int>(3.0 * (0.5 + 0.5 * u(rng))) % 3;
    c.grasp = kind == 0   ? triangle_grasp(c.cube, c.task.goal, env.fingers, opt)
              : kind == 1 ? center_of_three_grasp(c.cube, c.task.goal, 4, env.fingers, opt)
                          : opposite_faces_grasp(c.cube, env.fingers, opt);
    const GraspFeasibility f = check_reachability(c.grasp, c.cube, env.fingers, opt);
    if (!f.reachable) continue;
    Vec9 q = f.joint_positions();
    for (int k = 0; k < 9; ++k) q[k] += 0.05 * u(rng);
    bool ok = true;
    for (int i = 0; i < kNumFingers; ++i) {
      ok = ok && condition_number(jacobian(env.fingers[i], finger_block(q, i))) < 1e4;
    }
    if (!ok) continue;
    c.obs.joint_state.q = q;
    c.obs.fingertips = fingertip_state(env.fingers, q, Vec9::Zero());
    c.obs.cube.position = c.cube.position;
    c.obs.cube.orientation = c.cube.orientation;
    return c;
  }
}

/// |sum_i F2_i + sum_i J_i^-T tau3_i| with exact inverses.
inline double nullification_residual(const ControllerEnv& env, const Vec9& q,
                                     const std::array<Vec3, kNumFingers>& f2, const Vec9& tau3) {
  Vec3 total = Vec3::Zero();
  for (int i = 0; i < kNumFingers; ++i) {
    const Mat3 j = jacobian(env.fingers[i], finger_block(q, i));
    total += f2[i] + j.transpose().fullPivLu().solve(finger_block(tau3, i));
  }
  return total.norm();
}

/// |sum_i S(r_i) J_i^-T tau4_i - K3 phi r_phi| with r_i = -x_bar_i/|x_bar_i|.
inline double moment_residual(const ControllerEnv& env, const Vec9& q,
                              const std::array<Vec3, kNumFingers>& x_bar, const Quat& cube,
                              const Quat& goal, double k3, const Vec9& tau4) {
  // Rotation error recomputed from the quaternion: q_err = goal * cube^-1.
  Quat e = goal * cube.conjugate();
  if (e.w() < 0.0) e.coeffs() = -e.coeffs();
  const double vn = e.vec().norm();
  const double phi = 2.0 * std::atan2(vn, e.w());
  const Vec3 axis = vn > 0.0 ? Vec3(e.vec() / vn) : Vec3::UnitZ();
  Vec3 total = Vec3::Zero();
  for (int i = 0; i < kNumFingers; ++i) {
    const Mat3 j = jacobian(env.fingers[i], finger_block(q, i));
    const Vec3 r = -x_bar[i].normalized();
    total += r.cross(j.transpose().fullPivLu().solve(finger_block(tau4, i)));
  }
  return (total - k3 * phi * axis).norm();
}

/// Dense GP posterior in original units: standardize y, form
/// A = K + (noise + jitter) I with an independent Matern-5/2 evaluation and
/// solve with a full-pivot LU.
struct DenseGp {
  Eigen::MatrixXd a_inv;
  Eigen::VectorXd y_std_units;
  double y_mean = 0.0;
  double y_std = 1.0;
  double log_marginal_likelihood = 0.0;
};

inline double matern52_oracle(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const GpHyper& h) {
  const double r = ((a - b).array() / h.lengthscales.array()).matrix().norm();
  return h.signal_variance * (1.0 + std::sqrt(5.0) * r + 5.0 * r * r / 3.0) * std::exp(-std::sqrt(5.0) * r);
}

inline DenseGp dense_gp(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, const GpHyper& h, double jitter) {
  DenseGp g;
  const Eigen::Index n = x.rows();
  g.y_mean = y_raw.sum() / static_cast<double>(n);
  double var = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) var += (y_raw[i] - g.y_mean) * (y_raw[i] - g.y_mean);
  var /= static_cast<double>(n);
  g.y_std = var > 1e-24 ? std::sqrt(var) : 1.0;
  g.y_std_units = (y_raw.array() - g.y_mean) / g.y_std;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = matern52_oracle(x.row(i).transpose(), x.row(j).transpose(), h);
  a.diagonal().array() += h.noise_variance + jitter;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  g.a_inv = lu.inverse();
  g.log_marginal_likelihood = -0.5 * g.y_std_units.dot(g.a_inv * g.y_std_units) -
                              0.5 * std::log(lu.determinant()) - 0.5 * static_cast<double>(n) * std::log(2.0 * kPi);
  return g;
}

inline std::pair<double, double> dense_posterior(const DenseGp& g, const Eigen::MatrixXd& x, const GpHyper& h,
                                                 const Eigen::VectorXd& xq) {
  Eigen::VectorXd k(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) k[i] = matern52_oracle(x.row(i).transpose(), xq, h);
  const double mean = k.dot(g.a_inv * g.y_std_units);
  const double var = h.signal_variance - k.dot(g.a_inv * k);
  return {g.y_mean + g.y_std * mean, g.y_std * g.y_std * std::max(0.0, var)};
}

}  // namespace trifinger::oracle
