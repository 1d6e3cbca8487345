#pragma once

// Gaussian-process Bayesian optimization over box-bounded parameters.
//
//  * GP: zero-mean prior on standardized returns, Matérn 5/2 ARD kernel,
//    hyperparameters (log lengthscales, log signal variance, log noise
//    variance) fitted by maximizing the log marginal likelihood with an
//    8-start coordinate-wise geometric search.
//  * Acquisition: expected improvement for maximization, maximized over 4096
//    randomly shifted Halton candidates plus a local polish of the best 8.
//  * Loop: n_init uniform random evaluations, then n_iter (fit, maximize EI,
//    evaluate). Objective failures are recorded with the penalty sentinel and
//    imputed at (min observed - 3 std) when fitting.

#include "trifinger/common.hpp"

#include <Eigen/Cholesky>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace trifinger {

// ---------------------------------------------------------------------------
// Parameter space

struct ParamDim {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
};

struct ParamSpace {
  std::vector<ParamDim> dims;

  std::size_t size() const { return dims.size(); }

  void validate() const {
    if (dims.empty()) throw ConfigError("ParamSpace: no dimensions");
    for (const ParamDim& d : dims) {
      if (!(d.lower < d.upper)) throw ConfigError("ParamSpace: lower < upper violated for " + d.name);
    }
  }

  std::vector<double> to_unit(const std::vector<double>& theta) const {
    std::vector<double> u(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
      u[k] = (theta[k] - dims[k].lower) / (dims[k].upper - dims[k].lower);
    }
    return u;
  }

  std::vector<double> from_unit(const std::vector<double>& u) const {
    std::vector<double> theta(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
      theta[k] = dims[k].lower + std::clamp(u[k], 0.0, 1.0) * (dims[k].upper - dims[k].lower);
    }
    return theta;
  }
};

// ---------------------------------------------------------------------------
// Gaussian process

struct GpHyper {
  Eigen::VectorXd lengthscales;  // per dimension, unit-cube coordinates
  double signal_variance = 1.0;  // standardized units
  double noise_variance = 1e-2;  // standardized units
};

inline double matern52(double r) {
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

inline double kernel_value(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const GpHyper& h) {
  double r2 = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double t = (a[k] - b[k]) / h.lengthscales[k];
    r2 += t * t;
  }
  return h.signal_variance * matern52(std::sqrt(r2));
}

inline Eigen::MatrixXd gram_matrix(const Eigen::MatrixXd& x, const GpHyper& h) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = h.signal_variance;
    for (Eigen::Index j = 0; j < i; ++j) {
      double r2 = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double t = (x(i, c) - x(j, c)) / h.lengthscales[c];
        r2 += t * t;
      }
      k(i, j) = k(j, i) = h.signal_variance * matern52(std::sqrt(r2));
    }
  }
  return k;
}

/// Kernel vector between the rows of x and a query point.
inline Eigen::VectorXd kernel_vector(const Eigen::MatrixXd& x, const Eigen::VectorXd& xq,
                                     const GpHyper& h) {
  const Eigen::Index n = x.rows();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double t = (x(i, c) - xq[c]) / h.lengthscales[c];
      r2 += t * t;
    }
    ks[i] = h.signal_variance * matern52(std::sqrt(r2));
  }
  return ks;
}

struct GpModel {
  GpHyper hyper;
  Eigen::MatrixXd x;         // n x d, unit cube
  Eigen::VectorXd y_raw;     // original units
  Eigen::VectorXd y;         // standardized
  double y_mean = 0.0;
  double y_std = 1.0;
  double jitter = 0.0;       // added to the diagonal on top of the noise
  Eigen::MatrixXd chol_l;    // lower Cholesky factor of K + (noise + jitter) I
  Eigen::VectorXd alpha;     // (K + s I)^-1 y
  double log_marginal_likelihood = 0.0;
};

inline constexpr std::array<double, 5> kJitterLadder{0.0, 1e-10, 1e-8, 1e-6, 1e-4};

/// Conditions a GP on data at fixed hyperparameters (standardizing y).
/// Escalates jitter up to 1e-4, then throws IllConditioned.
inline GpModel gp_condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw,
                            const GpHyper& hyper) {
  if (x.rows() < 1 || x.rows() != y_raw.size()) throw std::invalid_argument("gp_condition: bad data");
  GpModel m;
  m.hyper = hyper;
  m.x = x;
  m.y_raw = y_raw;
  m.y_mean = y_raw.mean();
  const double var = (y_raw.array() - m.y_mean).square().mean();
  m.y_std = var > 1e-24 ? std::sqrt(var) : 1.0;
  m.y = (y_raw.array() - m.y_mean) / m.y_std;
  const Eigen::MatrixXd k = gram_matrix(x, hyper);
  const Eigen::Index n = x.rows();
  for (double jitter : kJitterLadder) {
    Eigen::MatrixXd a = k;
    a.diagonal().array() += hyper.noise_variance + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::MatrixXd l = llt.matrixL();
    if (!(l.diagonal().array() > 0.0).all() || !l.allFinite()) continue;
    m.jitter = jitter;
    m.chol_l = l;
    m.alpha = llt.solve(m.y);
    m.log_marginal_likelihood = -0.5 * m.y.dot(m.alpha) - l.diagonal().array().log().sum() -
                                0.5 * static_cast<double>(n) * std::log(2.0 * kPi);
    return m;
  }
  throw IllConditioned("gp_condition: kernel matrix not positive definite with jitter 1e-4");
}

/// Posterior mean and variance at a unit-cube point, in original units.
inline std::pair<double, double> gp_posterior(const GpModel& m, const Eigen::VectorXd& xq) {
  const Eigen::VectorXd ks = kernel_vector(m.x, xq, m.hyper);
  const double mean_s = ks.dot(m.alpha);
  const Eigen::VectorXd v = m.chol_l.triangularView<Eigen::Lower>().solve(ks);
  const double var_s = std::max(0.0, m.hyper.signal_variance - v.squaredNorm());
  return {m.y_mean + m.y_std * mean_s, m.y_std * m.y_std * var_s};
}

struct GpFitOptions {
  int starts = 8;
  int max_sweeps = 200;
  double initial_step = 1.0;  // in log space
  double min_step = 1e-3;
  double log_len_lo = std::log(0.01), log_len_hi = std::log(10.0);
  double log_sig_lo = std::log(1e-3), log_sig_hi = std::log(1e2);
  double log_noise_lo = std::log(1e-8), log_noise_hi = std::log(1.0);
};

/// Maximizes the log marginal likelihood over log-hyperparameters with a
/// deterministic 8-start coordinate search (geometric steps, halved when a
/// full sweep makes no progress).
inline GpModel gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw,
                      const GpFitOptions& opt = {}) {
  if (x.rows() < 2) throw std::invalid_argument("gp_fit: need at least 2 points");
  const auto d = static_cast<int>(x.cols());
  const int np = d + 2;
  Eigen::VectorXd lo(np), hi(np);
  for (int k = 0; k < d; ++k) {
    lo[k] = opt.log_len_lo;
    hi[k] = opt.log_len_hi;
  }
  lo[d] = opt.log_sig_lo;
  hi[d] = opt.log_sig_hi;
  lo[d + 1] = opt.log_noise_lo;
  hi[d + 1] = opt.log_noise_hi;

  auto to_hyper = [&](const Eigen::VectorXd& p) {
    GpHyper h;
    h.lengthscales = p.head(d).array().exp();
    h.signal_variance = std::exp(p[d]);
    h.noise_variance = std::exp(p[d + 1]);
    return h;
  };
  auto evaluate = [&](const Eigen::VectorXd& p) {
    try {
      return gp_condition(x, y_raw, to_hyper(p)).log_marginal_likelihood;
    } catch (const IllConditioned&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  // Deterministic starts spread over plausible scales.
  static constexpr std::array<double, 8> kLen{0.3, 0.1, 1.0, 0.05, 3.0, 0.2, 0.5, 2.0};
  static constexpr std::array<double, 8> kSig{1.0, 1.0, 1.0, 0.3, 3.0, 0.5, 2.0, 1.0};
  static constexpr std::array<double, 8> kNoise{1e-2, 1e-4, 1e-1, 1e-3, 1e-2, 1e-6, 3e-2, 1e-3};
  Eigen::VectorXd best_p;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < opt.starts; ++s) {
    const auto si = static_cast<std::size_t>(s % 8);
    Eigen::VectorXd p(np);
    for (int k = 0; k < d; ++k) p[k] = std::log(kLen[si]);
    p[d] = std::log(kSig[si]);
    p[d + 1] = std::log(kNoise[si]);
    double v = evaluate(p);
    double step = opt.initial_step;
    for (int sweep = 0; sweep < opt.max_sweeps && step >= opt.min_step; ++sweep) {
      bool improved = false;
      for (int k = 0; k < np; ++k) {
        for (double dir : {1.0, -1.0}) {
          Eigen::VectorXd q = p;
          q[k] = std::clamp(q[k] + dir * step, lo[k], hi[k]);
          if (q[k] == p[k]) continue;
          const double vq = evaluate(q);
          if (vq > v + 1e-12) {
            p = q;
            v = vq;
            improved = true;
            break;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    if (v > best_v) {
      best_v = v;
      best_p = p;
    }
  }
  if (!std::isfinite(best_v)) throw IllConditioned("gp_fit: no start produced a valid model");
  return gp_condition(x, y_raw, to_hyper(best_p));
}

// ---------------------------------------------------------------------------
// Expected improvement

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// EI for maximization: sigma (z Phi(z) + phi(z)), z = (mu - f*) / sigma;
/// 0 when sigma < 1e-12.
inline double expected_improvement(double mean, double variance, double incumbent) {
  const double sigma = std::sqrt(std::max(0.0, variance));
  if (sigma < 1e-12) return 0.0;
  const double z = (mean - incumbent) / sigma;
  return std::max(0.0, sigma * (z * normal_cdf(z) + normal_pdf(z)));
}

inline double expected_improvement(const GpModel& m, const Eigen::VectorXd& x, double incumbent) {
  const auto [mu, var] = gp_posterior(m, x);
  return expected_improvement(mu, var, incumbent);
}

// ---------------------------------------------------------------------------
// Low-discrepancy candidates

inline double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base);
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

/// Halton points (skipping index 0) with a seeded random shift modulo 1
/// (Cranley-Patterson scrambling).
inline std::vector<Eigen::VectorXd> shifted_halton(std::size_t count, std::size_t dim,
                                                   std::mt19937_64& rng) {
  static constexpr std::array<std::uint64_t, 16> kPrimes{2,  3,  5,  7,  11, 13, 17, 19,
                                                         23, 29, 31, 37, 41, 43, 47, 53};
  if (dim > kPrimes.size()) throw std::invalid_argument("shifted_halton: too many dimensions");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd shift(static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < dim; ++k) shift[static_cast<Eigen::Index>(k)] = unit(rng);
  std::vector<Eigen::VectorXd> out(count, Eigen::VectorXd(static_cast<Eigen::Index>(dim)));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = radical_inverse(i + 1, kPrimes[k]) + shift[static_cast<Eigen::Index>(k)];
      out[i][static_cast<Eigen::Index>(k)] = v - std::floor(v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// BO loop

/// Sentinel recorded as the mean of a failed evaluation.
inline constexpr double kPenaltySentinel = -1e300;

struct BoEntry {
  std::vector<double> theta;       // physical units
  std::vector<double> unit;        // unit cube
  double mean = 0.0;               // mean return, or kPenaltySentinel
  std::vector<double> returns;     // per-episode returns
  std::uint64_t seed = 0;          // evaluation seed
  bool failed = false;
  std::string error;
};

struct BoTrace {
  ParamSpace space;
  std::vector<BoEntry> iterations;
  std::size_t incumbent = 0;
  std::vector<double> incumbent_history;  // incumbent mean after each entry

  const BoEntry& best() const { return iterations.at(incumbent); }
};

/// Objective: per-episode returns of theta (physical units); episode j of
/// every evaluation receives the same episode seed (common random numbers).
using BoObjective =
    std::function<std::vector<double>(const std::vector<double>& theta, std::uint64_t eval_seed)>;

struct BoOptions {
  std::size_t candidates = 4096;
  std::size_t polish_count = 8;
  double polish_step = 0.05;
  double polish_min_step = 1e-3;
  GpFitOptions fit;
};

namespace detail {

inline double polish_ei(const GpModel& m, Eigen::VectorXd& x, double incumbent,
                        const BoOptions& opt) {
  double v = expected_improvement(m, x, incumbent);
  double step = opt.polish_step;
  while (step >= opt.polish_min_step) {
    bool improved = false;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      for (double dir : {1.0, -1.0}) {
        Eigen::VectorXd y = x;
        y[k] = std::clamp(y[k] + dir * step, 0.0, 1.0);
        const double vy = expected_improvement(m, y, incumbent);
        if (vy > v) {
          x = y;
          v = vy;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return v;
}

}  // namespace detail

/// Fits the GP to the trace so far (failed entries imputed) and returns the
/// unit-cube point maximizing EI.
inline Eigen::VectorXd propose_next(const BoTrace& trace, std::mt19937_64& rng,
                                    const BoOptions& opt = {}) {
  const std::size_t d = trace.space.size();
  const auto n = static_cast<Eigen::Index>(trace.iterations.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  Eigen::VectorXd y(n);
  double lo = std::numeric_limits<double>::infinity();
  std::vector<double> ok_values;
  for (Eigen::Index i = 0; i < n; ++i) {
    const BoEntry& e = trace.iterations[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < d; ++k) x(i, static_cast<Eigen::Index>(k)) = e.unit[k];
    if (!e.failed) {
      ok_values.push_back(e.mean);
      lo = std::min(lo, e.mean);
    }
  }
  double mean = 0.0, sd = 0.0;
  for (double v : ok_values) mean += v;
  if (!ok_values.empty()) mean /= static_cast<double>(ok_values.size());
  for (double v : ok_values) sd += (v - mean) * (v - mean);
  if (!ok_values.empty()) sd = std::sqrt(sd / static_cast<double>(ok_values.size()));
  const double impute = ok_values.empty() ? -1.0 : lo - 3.0 * sd;
  for (Eigen::Index i = 0; i < n; ++i) {
    const BoEntry& e = trace.iterations[static_cast<std::size_t>(i)];
    y[i] = e.failed ? impute : e.mean;
  }
  const GpModel model = gp_fit(x, y, opt.fit);
  double incumbent = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) incumbent = std::max(incumbent, y[i]);

  const auto cands = shifted_halton(opt.candidates, d, rng);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    scored.emplace_back(expected_improvement(model, cands[i], incumbent), i);
  }
  const std::size_t keep = std::min(opt.polish_count, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  Eigen::VectorXd best = cands[scored.front().second];
  double best_v = -1.0;
  for (std::size_t k = 0; k < keep; ++k) {
    Eigen::VectorXd c = cands[scored[k].second];
    const double v = detail::polish_ei(model, c, incumbent, opt);
    if (v > best_v) {
      best_v = v;
      best = c;
    }
  }
  return best;
}

/// Evaluates one point, converting objective exceptions into a penalty entry.
inline BoEntry evaluate_point(const ParamSpace& space, const std::vector<double>& unit,
                              const BoObjective& objective, std::uint64_t seed) {
  BoEntry e;
  e.unit = unit;
  e.theta = space.from_unit(unit);
  e.seed = seed;
  try {
    e.returns = objective(e.theta, seed);
    if (e.returns.empty()) throw std::runtime_error("objective returned no episodes");
    double s = 0.0;
    for (double r : e.returns) s += r;
    e.mean = s / static_cast<double>(e.returns.size());
    if (!std::isfinite(e.mean)) throw NumericalBlowup("objective returned a non-finite mean");
  } catch (const std::exception& ex) {
    e.failed = true;
    e.error = ex.what();
    e.mean = kPenaltySentinel;
  }
  return e;
}

inline void record(BoTrace& trace, BoEntry e) {
  trace.iterations.push_back(std::move(e));
  const std::size_t last = trace.iterations.size() - 1;
  if (last == 0 || trace.iterations[last].mean > trace.iterations[trace.incumbent].mean) {
    trace.incumbent = last;
  }
  trace.incumbent_history.push_back(trace.iterations[trace.incumbent].mean);
}

/// n_init uniform random points, then n_iter EI-driven points. Deterministic
/// per rng state. `initial_points` (unit cube) are evaluated before the
/// random ones and count toward n_init.
inline BoTrace bo_loop(const ParamSpace& space, const BoObjective& objective, int n_init,
                       int n_iter, std::mt19937_64& rng, const BoOptions& opt = {},
                       const std::vector<std::vector<double>>& initial_points = {}) {
  space.validate();
  if (n_init < 2) throw std::invalid_argument("bo_loop: n_init must be >= 2");
  if (n_iter < 0) throw std::invalid_argument("bo_loop: n_iter must be >= 0");
  BoTrace trace;
  trace.space = space;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uint64_t eval_index = 0;
  const std::uint64_t base = rng();
  for (int i = 0; i < n_init; ++i) {
    std::vector<double> u(space.size());
    if (static_cast<std::size_t>(i) < initial_points.size()) {
      u = initial_points[static_cast<std::size_t>(i)];
    } else {
      for (double& v : u) v = unit(rng);
    }
    record(trace, evaluate_point(space, u, objective, mix_seed(base, eval_index++)));
  }
  for (int it = 0; it < n_iter; ++it) {
    const Eigen::VectorXd next = propose_next(trace, rng, opt);
    std::vector<double> u(next.data(), next.data() + next.size());
    record(trace, evaluate_point(space, u, objective, mix_seed(base, eval_index++)));
  }
  return trace;
}

}  // namespace trifinger
