#pragma once

// Small dense linear-programming helper: phase-1 simplex feasibility test for
// {x >= 0 : A x = b}. Bland's rule guarantees termination on degenerate
// problems; sizes here are tiny (6 x 24 for force closure).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <vector>

namespace trifinger {

/// True iff some x >= 0 satisfies A x = b (up to `tol` on the phase-1 objective,
/// measured relative to the scale of b).
inline bool lp_feasible(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol = 1e-9) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  // Tableau columns: n structural, m artificial, 1 right-hand side.
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n + m + 1);
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const double sign = b[i] < 0.0 ? -1.0 : 1.0;
    t.row(i).head(n) = sign * a.row(i);
    t(i, n + i) = 1.0;
    t(i, n + m) = sign * b[i];
    basis[static_cast<std::size_t>(i)] = n + i;
  }
  // Objective row holds reduced costs of "minimize sum of artificials".
  for (Eigen::Index i = 0; i < m; ++i) {
    t.row(m).head(n) -= t.row(i).head(n);
    t(m, n + m) -= t(i, n + m);
  }
  const double scale = std::max(1.0, b.cwiseAbs().sum());
  const double pivot_tol = 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff());
  const int max_iterations = 50 * static_cast<int>(n + m) + 100;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < n + m; ++j) {
      if (t(m, j) < -1e-12) {
        enter = j;
        break;
      }
    }
    if (enter < 0) break;
    Eigen::Index leave = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (t(i, enter) > pivot_tol) {
        const double ratio = t(i, n + m) / t(i, enter);
        if (ratio < best - 1e-15 ||
            (ratio <= best + 1e-15 && leave >= 0 &&
             basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) break;  // unbounded direction cannot occur in phase 1
    t.row(leave) /= t(leave, enter);
    for (Eigen::Index i = 0; i <= m; ++i) {
      if (i != leave && t(i, enter) != 0.0) t.row(i) -= t(i, enter) * t.row(leave);
    }
    basis[static_cast<std::size_t>(leave)] = enter;
  }
  return -t(m, n + m) <= tol * scale;
}

}  // namespace trifinger
