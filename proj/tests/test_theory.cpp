#include <gtest/gtest.h>

#include <cmath>

#include "gist/data.hpp"
#include "gist/theory.hpp"
#include "oracles.hpp"

using gist::DenseMatrix;

namespace {

gist::Graph complete(std::size_t n) {
  std::vector<gist::Edge> e;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
  return gist::make_graph(n, e);
}

gist::Graph regular_theory_graph(std::uint64_t seed = 1) {
  gist::RegularParams p;
  p.n = 12;
  p.degree = 3;
  p.feature_dim = 8;
  p.seed = seed;
  return gist::synth_regular(p).graph;
}

double dense_sum_abs(const DenseMatrix<double>& a) {
  double s = 0.0;
  for (double v : a.values()) s += std::abs(v);
  return s;
}

}  // namespace

TEST(Eigen, DiagonalAndSmallGraphs) {
  EXPECT_NEAR(gist::min_eigenvalue(DenseMatrix<double>(3, 3, {3, 0, 0, 0, 1, 0, 0, 0, 2})), 1.0, 1e-12);
  const auto p2 = gist::normalized_adjacency(gist::make_graph(2, {{0, 1}}), gist::AdjacencyMode::chebyshev);
  EXPECT_NEAR(gist::min_eigenvalue(p2.to_dense()), 0.0, 1e-12);
  const auto k3 = gist::normalized_adjacency(complete(3), gist::AdjacencyMode::chebyshev);
  const auto ev = gist::symmetric_eigenvalues(k3.to_dense());
  EXPECT_NEAR(ev[0], 0.5, 1e-12);
  EXPECT_NEAR(ev[1], 0.5, 1e-12);
  EXPECT_NEAR(ev[2], 2.0, 1e-12);
}

TEST(Eigen, TraceAndDeterminantOfRandomSymmetric) {
  auto rng = gist::make_rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    DenseMatrix<double> a(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = i; j < 3; ++j) a(i, j) = a(j, i) = g(rng);
    const auto ev = gist::symmetric_eigenvalues(a);
    const double det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
                       a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
                       a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
    EXPECT_NEAR(ev[0] + ev[1] + ev[2], a(0, 0) + a(1, 1) + a(2, 2), 1e-9);
    EXPECT_NEAR(ev[0] * ev[1] * ev[2], det, 1e-9);
    EXPECT_LE(ev[0], ev[1]);
    EXPECT_LE(ev[1], ev[2]);
  }
}

TEST(Eigen, RejectsAsymmetric) {
  EXPECT_THROW(gist::symmetric_eigenvalues(DenseMatrix<double>(2, 2, {1, 2, 0, 1})), std::invalid_argument);
}

TEST(NtkGram, MatchesMonteCarlo) {
  auto rng = gist::make_rng(2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseMatrix<double> x(4, 3);
  for (auto& v : x.values()) v = gauss(rng);
  const std::size_t m = 2, d1 = 8;
  const auto h = gist::ntk_gram(x, m, d1);
  const int samples = 200000;
  DenseMatrix<double> mc(4, 4);
  for (int s = 0; s < samples; ++s) {
    double th[3] = {gauss(rng), gauss(rng), gauss(rng)};
    bool on[4];
    for (std::size_t i = 0; i < 4; ++i) on[i] = x(i, 0) * th[0] + x(i, 1) * th[1] + x(i, 2) * th[2] >= 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) mc(i, j) += on[i] && on[j];
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 3; ++k) dot += x(i, k) * x(j, k);
      const double expected = dot * mc(i, j) / samples / static_cast<double>(m * d1);
      EXPECT_NEAR(h(i, j), expected, 0.01 * std::abs(dot) / static_cast<double>(m * d1) + 1e-12);
    }
  EXPECT_EQ(gist::max_asymmetry(h), 0.0);
}

TEST(NtkGram, RejectsZeroRow) {
  EXPECT_THROW(gist::ntk_gram(DenseMatrix<double>(2, 2, {1, 0, 0, 0}), 1, 1), gist::TheoryError);
}

TEST(GistKernel, IdentityAdjacencyGivesH) {
  auto g = gist::make_graph(3, {}, 2);
  g.features = DenseMatrix<double>(3, 2, {1, 0, 0, 1, 1, 1});
  const auto abar = gist::normalized_adjacency(g, gist::AdjacencyMode::chebyshev);
  const auto h = gist::ntk_gram(g.features, 1, 1);
  const auto k = gist::gist_kernel(abar, h);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(k.values()[i], h.values()[i], 1e-15);
}

TEST(GistKernel, MatchesDenseProductAndEigenBound) {
  auto rng = gist::make_rng(3);
  for (int t = 0; t < 10; ++t) {
    const auto g = oracle::random_graph(10, 0.3, 4, rng);
    const auto abar = gist::normalized_adjacency(g, gist::AdjacencyMode::chebyshev);
    const auto h = gist::ntk_gram(g.features, 2, 16);
    const auto k = gist::gist_kernel(abar, h);
    const auto ad = abar.to_dense();
    const auto dense = gist::matmul(gist::matmul(ad, h), ad);
    for (std::size_t i = 0; i < k.values().size(); ++i) EXPECT_NEAR(k.values()[i], dense.values()[i], 1e-12);
    EXPECT_EQ(gist::max_asymmetry(k), 0.0);
    const double la = gist::min_eigenvalue(ad), lh = gist::min_eigenvalue(h);
    EXPECT_GE(gist::min_eigenvalue(k), la * la * lh - 1e-12);
  }
}

TEST(AbarNorm, Examples) {
  const auto empty = gist::normalized_adjacency(gist::make_graph(5, {}), gist::AdjacencyMode::chebyshev);
  EXPECT_DOUBLE_EQ(gist::abar_l1_norm(empty), 5.0);
  const auto p2 = gist::normalized_adjacency(gist::make_graph(2, {{0, 1}}), gist::AdjacencyMode::chebyshev);
  EXPECT_DOUBLE_EQ(gist::abar_l1_norm(p2), 8.0);
  const auto k3 = gist::normalized_adjacency(complete(3), gist::AdjacencyMode::chebyshev);
  const auto d = k3.to_dense();
  EXPECT_NEAR(gist::abar_l1_norm(k3), dense_sum_abs(gist::matmul(d, d)), 1e-12);
}

TEST(PredictedRate, Examples) {
  EXPECT_NEAR(gist::predicted_rate(0.5, 0.1, 1.0, 1), 0.975, 1e-15);
  EXPECT_DOUBLE_EQ(gist::predicted_rate(0.5, 0.1, 1.0, 0), 1.0);
  EXPECT_DOUBLE_EQ(gist::predicted_rate(0.3, 0.1, 0.0, 7), 1.0);
  EXPECT_THROW(gist::predicted_rate(0.5, 1.0, 2.0, 1), std::invalid_argument);
  EXPECT_THROW(gist::predicted_rate(1.0, 0.1, 1.0, 1), std::invalid_argument);
  EXPECT_LT(gist::predicted_rate(0.5, 0.1, 1.0, 10), gist::predicted_rate(0.5, 0.1, 1.0, 2));
}

TEST(InitialLossBound, Formula) {
  EXPECT_DOUBLE_EQ(gist::initial_loss_bound(1.0, 10, 4, 2, 8.0), 10.0 + 8.0);
}

TEST(Assumptions, PathOnTwoNodesIsSingular) {
  auto g = gist::make_graph(2, {{0, 1}}, 2);
  g.features = DenseMatrix<double>(2, 2, {0.1, 0, 0, 0.1});
  const auto r = gist::check_assumptions(g);
  EXPECT_FALSE(r.abar_nonsingular);
  EXPECT_FALSE(r.all_pass());
}

TEST(Assumptions, RegularGraphPasses) {
  const auto g = regular_theory_graph();
  const auto y = gist::regression_targets(g, 2);
  const auto r = gist::check_assumptions(g, y);
  EXPECT_TRUE(r.degree_regular);
  EXPECT_DOUBLE_EQ(r.eps, 0.0);
  EXPECT_DOUBLE_EQ(r.p, 3.0);
  EXPECT_TRUE(r.feature_norm_pass);
  EXPECT_TRUE(r.nonparallel_pass);
  EXPECT_TRUE(r.xhat_norm_pass);
  EXPECT_DOUBLE_EQ(r.c, 1.0);
  EXPECT_TRUE(r.abar_nonsingular) << r.lambda_min_abar;
  EXPECT_TRUE(r.all_pass());
}

TEST(Assumptions, DegreeSpreadSetsEps) {
  auto g = gist::make_graph(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}}, 1);
  const auto r = gist::check_assumptions(g);
  EXPECT_EQ(r.min_deg, 1u);
  EXPECT_EQ(r.max_deg, 4u);
  EXPECT_NEAR(r.eps, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.p, 2.25, 1e-12);
  EXPECT_NEAR(r.norm_bound, 1.0 / 3.0, 1e-12);
}

TEST(Assumptions, DuplicateRowIsReportedByName) {
  auto g = regular_theory_graph();
  for (std::size_t k = 0; k < g.feature_dim(); ++k) g.features(7, k) = g.features(2, k);
  const auto r = gist::check_assumptions(g);
  EXPECT_FALSE(r.nonparallel_pass);
  ASSERT_EQ(r.parallel_pairs.size(), 1u);
  EXPECT_EQ(r.parallel_pairs[0].i, 2u);
  EXPECT_EQ(r.parallel_pairs[0].j, 7u);
  const auto j = gist::to_json(r);
  EXPECT_EQ(j["features"]["parallel_pairs"][0]["i"], 2);
  EXPECT_EQ(j["features"]["parallel_pairs"][0]["j"], 7);
}

TEST(KernelReport, PositiveLambdaOnRegularGraph) {
  const auto g = regular_theory_graph();
  const auto rep = gist::kernel_report(g, 2, 64);
  EXPECT_GT(rep.lambda0, 0.0);
  EXPECT_EQ(rep.g_inf.rows(), g.n);
  const auto j = gist::to_json(rep, true);
  EXPECT_TRUE(j.contains("lambda0"));
}

TEST(TheoryExperiment, SingleSubNetworkDecreasesLoss) {
  const auto g = regular_theory_graph();
  const auto y = gist::regression_targets(g, 2);
  gist::TheoryConfig cfg;
  cfg.d1 = 256;
  cfg.m = 1;
  cfg.zeta = 1;
  cfg.rounds = 30;
  cfg.eta = 0.5;
  const auto r = gist::run_theory_experiment(cfg, g, y);
  ASSERT_EQ(r.rounds.size(), 31u);
  EXPECT_LT(r.rounds.back().loss, 0.5 * r.rounds.front().loss);
  EXPECT_NEAR(r.initial_loss, gist::theory_initial_loss(g, y, cfg.d1, cfg.m, cfg.seed), 1e-9);
  for (const auto& rd : r.rounds) EXPECT_GE(rd.predicted_envelope, r.plateau);
}

TEST(TheoryExperiment, DeterministicForSeed) {
  const auto g = regular_theory_graph();
  const auto y = gist::regression_targets(g, 2);
  gist::TheoryConfig cfg;
  cfg.d1 = 64;
  cfg.rounds = 5;
  const auto a = gist::run_theory_experiment(cfg, g, y), b = gist::run_theory_experiment(cfg, g, y);
  for (std::size_t t = 0; t < a.rounds.size(); ++t) EXPECT_EQ(a.rounds[t].loss, b.rounds[t].loss);
}

TEST(TheoryExperiment, RefusesFailingGraphUnlessForced) {
  auto g = gist::make_graph(2, {{0, 1}}, 2);
  g.features = DenseMatrix<double>(2, 2, {0.1, 0, 0, 0.1});
  const std::vector<double> y{1, -1};
  gist::TheoryConfig cfg;
  cfg.d1 = 8;
  cfg.rounds = 2;
  EXPECT_THROW(gist::run_theory_experiment(cfg, g, y), gist::TheoryError);
  cfg.force = true;
  EXPECT_NO_THROW(gist::run_theory_experiment(cfg, g, y));
}
