#include "oracles.hpp"
#include "trifinger/bayesopt.hpp"

#include <gtest/gtest.h>

using namespace trifinger;

namespace {

struct Data {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Data gp_data(std::mt19937_64& rng, int n, int d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Data out{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) out.x(i, k) = u(rng);
    out.y[i] = std::sin(6.0 * out.x(i, 0)) + 0.5 * out.x.row(i).sum() + 0.05 * u(rng);
  }
  return out;
}

GpHyper hyper(int d, double len, double sig, double noise) {
  GpHyper h;
  h.lengthscales = Eigen::VectorXd::Constant(d, len);
  h.signal_variance = sig;
  h.noise_variance = noise;
  return h;
}

}  // namespace

TEST(GaussianProcess, LogMarginalLikelihoodMatchesDenseOracle) {
  std::mt19937_64 rng(41);
  // Data drawn from a GP prior sample with the fixed kernel.
  const GpHyper h = hyper(2, 0.3, 1.0, 1e-3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int n = 15;
  Eigen::MatrixXd x(n, 2);
  for (int i = 0; i < n; ++i) x.row(i) = Eigen::Vector2d(u(rng), u(rng));
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) k(i, j) = oracle::matern52_oracle(x.row(i).transpose(), x.row(j).transpose(), h);
  k.diagonal().array() += h.noise_variance;
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = n01(rng);
  const Eigen::VectorXd y = Eigen::LLT<Eigen::MatrixXd>(k).matrixL() * z;
  const GpModel m = gp_condition(x, y, h);
  const oracle::DenseGp g = oracle::dense_gp(x, y, h, m.jitter);
  EXPECT_NEAR(m.log_marginal_likelihood, g.log_marginal_likelihood, 1e-6);
}

TEST(GaussianProcess, PosteriorMatchesDenseOracle) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const Data d = gp_data(rng, 12, 3);
    const GpHyper h = hyper(3, 0.2 + 0.2 * trial, 1.3, 1e-3);
    const GpModel m = gp_condition(d.x, d.y, h);
    const oracle::DenseGp g = oracle::dense_gp(d.x, d.y, h, m.jitter);
    for (int q = 0; q < 20; ++q) {
      const Eigen::Vector3d xq(u(rng), u(rng), u(rng));
      const auto [mu, var] = gp_posterior(m, xq);
      const auto [mu_o, var_o] = oracle::dense_posterior(g, d.x, h, xq);
      EXPECT_NEAR(mu, mu_o, 1e-8);
      EXPECT_NEAR(var, var_o, 1e-8);
    }
  }
}

TEST(GaussianProcess, PriorReversionFarFromData) {
  std::mt19937_64 rng(43);
  Data d = gp_data(rng, 8, 2);
  d.y.array() -= d.y.mean();
  d.x *= 0.1;  // data in a corner
  const GpHyper h = hyper(2, 0.01, 1.0, 1e-4);
  const GpModel m = gp_condition(d.x, d.y, h);
  const auto [mu, var] = gp_posterior(m, Eigen::Vector2d(0.9, 0.9));
  EXPECT_NEAR(mu, 0.0, 1e-6);
  EXPECT_NEAR(var, m.y_std * m.y_std * h.signal_variance, 1e-6);
}

TEST(GaussianProcess, InterpolatesTrainingPointsAndVariesSmoothly) {
  std::mt19937_64 rng(44);
  const Data d = gp_data(rng, 10, 2);
  const GpHyper h = hyper(2, 0.3, 1.0, 1e-10);
  const GpModel m = gp_condition(d.x, d.y, h);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(gp_posterior(m, d.x.row(i).transpose()).first, d.y[i], 1e-4);
  const Eigen::Vector2d xq(0.37, 0.61);
  double prev = gp_posterior(m, xq).first;
  for (int s = 1; s <= 100; ++s) {
    GpHyper h2 = h;
    h2.lengthscales[0] *= 1.0 + s / 100.0;  // up to doubled
    const double cur = gp_posterior(gp_condition(d.x, d.y, h2), xq).first;
    EXPECT_LT(std::abs(cur - prev), 0.05);
    prev = cur;
  }
}

TEST(GaussianProcess, DuplicateInputsForceNoise) {
  Eigen::MatrixXd x(4, 1);
  x << 0.2, 0.2, 0.7, 0.9;
  Eigen::VectorXd y(4);
  y << 0.0, 1.0, 0.3, 0.5;
  const GpModel m = gp_fit(x, y);
  EXPECT_GT(m.hyper.noise_variance + m.jitter, 0.0);
  EXPECT_TRUE(std::isfinite(m.log_marginal_likelihood));
}

TEST(ExpectedImprovement, AnchorAndDegenerate) {
  EXPECT_NEAR(expected_improvement(0.3, 1.0, 0.3), 0.3989422804014327, 1e-6);
  EXPECT_EQ(expected_improvement(0.1, 0.0, 0.3), 0.0);
  EXPECT_EQ(expected_improvement(0.1, 1e-30, 0.3), 0.0);
}

TEST(ExpectedImprovement, MatchesMonteCarlo) {
  std::mt19937_64 rng(45);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int c = 0; c < 10; ++c) {
    const double mu = u(rng), sigma = 0.2 + std::abs(u(rng)), best = mu + sigma * u(rng);
    const int n = 1000000;
    double s = 0.0, s2 = 0.0;
    for (int k = 0; k < n; ++k) {
      const double v = std::max(0.0, mu + sigma * n01(rng) - best);
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    EXPECT_LE(std::abs(expected_improvement(mu, sigma * sigma, best) - mean), 3.0 * se);
  }
}

TEST(BoLoop, ZeroIterationsKeepsInitialPoints) {
  ParamSpace space{{{"a", -1.0, 1.0}, {"b", 0.0, 2.0}}};
  std::mt19937_64 rng(46);
  auto f = [](const std::vector<double>& t, std::uint64_t) { return std::vector<double>{-(t[0] * t[0] + t[1])}; };
  const BoTrace tr = bo_loop(space, f, 4, 0, rng);
  ASSERT_EQ(tr.iterations.size(), 4u);
  std::size_t best = 0;
  for (std::size_t k = 1; k < 4; ++k) {
    if (tr.iterations[k].mean > tr.iterations[best].mean) best = k;
  }
  EXPECT_EQ(tr.incumbent, best);
}

TEST(BoLoop, TraceLengthFollowsProtocolAndReplays) {
  ParamSpace space{{{"a", 0.0, 1.0}}};
  auto f = [](const std::vector<double>& t, std::uint64_t) {
    // five rollouts per evaluation, as in the paper's protocol
    return std::vector<double>(5, -(t[0] - 0.4) * (t[0] - 0.4));
  };
  std::mt19937_64 a(47), b(47);
  const BoTrace ta = bo_loop(space, f, 4, 10, a);
  const BoTrace tb = bo_loop(space, f, 4, 10, b);
  ASSERT_EQ(ta.iterations.size(), 14u);
  EXPECT_EQ(ta.iterations[0].returns.size(), 5u);
  for (std::size_t k = 0; k < 14; ++k) EXPECT_EQ(ta.iterations[k].theta, tb.iterations[k].theta);
}

TEST(BoLoop, FailedEvaluationsArePenalized) {
  ParamSpace space{{{"a", 0.0, 1.0}}};
  auto f = [](const std::vector<double>& t, std::uint64_t) -> std::vector<double> {
    if (t[0] > 0.5) throw PlanningFailed("boom");
    return {t[0]};
  };
  std::mt19937_64 rng(48);
  const BoTrace tr = bo_loop(space, f, 6, 6, rng);
  EXPECT_FALSE(tr.best().failed);
  for (const auto& e : tr.iterations) {
    if (e.failed) EXPECT_EQ(e.mean, kPenaltySentinel);
  }
}

TEST(BoLoop, LocalizesQuadraticOptimum) {
  ParamSpace space{{{"x", 0.0, 1.0}, {"y", 0.0, 1.0}}};
  const Eigen::Vector2d opt(0.3, 0.7);
  auto f = [&](const std::vector<double>& t, std::uint64_t) {
    return std::vector<double>{-((t[0] - opt[0]) * (t[0] - opt[0]) + (t[1] - opt[1]) * (t[1] - opt[1]))};
  };
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const BoTrace tr = bo_loop(space, f, 4, 50, rng);
    const auto& t = tr.best().theta;
    hits += (Eigen::Vector2d(t[0], t[1]) - opt).norm() <= 0.05;
  }
  EXPECT_GE(hits, 9);
}
