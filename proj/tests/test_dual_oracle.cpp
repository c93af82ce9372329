#include "dvr/dual_oracle.hpp"
#include "dvr/harness.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cmath>

using namespace dvr;

namespace {

struct Small {
  Problem problem;
  Graph graph;
  GossipMatrix gossip;
  DvrParams params;
  AugmentedSystem aug;
};

Small small(int n, int m, int d, GraphKind kind = GraphKind::ring, double sigma = 0.1, std::uint64_t seed = 3) {
  Dataset ds = synth_dataset(n * m, d, LossKind::squared, seed, 1.0, 1.0);
  Problem p = build_problem(ds, n, sigma, LossFamily{LossKind::squared});
  Graph g = build_graph(n == 2 ? GraphKind::complete : kind, n, {}, 0);
  GossipMatrix w = GossipMatrix::laplacian(g);
  DvrParams par = compute_params(p, w);
  AugmentedSystem aug = build_augmented(p, g, par.alpha);
  return {p, g, w, par, aug};
}

DualPoint random_point(const AugmentedSystem& aug, unsigned seed) {
  std::srand(seed);
  DualPoint l;
  l.x = Vec::Random(aug.comm_dim());
  l.y = Vec::Random(aug.comp_dim());
  return l;
}

}  // namespace

TEST(Augmented, TwoNodeStructure) {
  Small s = small(2, 1, 1);
  const AugmentedSystem& a = s.aug;
  ASSERT_EQ(a.A.rows(), 4);
  ASSERT_EQ(a.A.cols(), 3);
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(4, 3);
  expect(0, 0) = a.mu_comm;
  expect(1, 0) = -a.mu_comm;
  for (int i = 0; i < 2; ++i) {
    double mu = std::sqrt(s.params.alpha * s.problem.L(i, 0));
    EXPECT_NEAR(a.mu_comp[i], mu, 1e-15);
    expect(i, 1 + i) = -mu;
    expect(2 + i, 1 + i) = mu;
  }
  EXPECT_LE((a.A - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(a.sigma_diag[0], 1.0 / s.problem.sigma[0]);
  EXPECT_EQ(a.sigma_diag[3], 0.0);
}

TEST(Augmented, RankAndGramBlocks) {
  Small s = small(2, 2, 3);
  const AugmentedSystem& a = s.aug;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.A);
  svd.setThreshold(1e-10);
  int proj_rank = 0;
  for (const auto& p : a.P) {
    EXPECT_LE((p * p - p).cwiseAbs().maxCoeff(), 1e-14);
    proj_rank += static_cast<int>(std::lround(p.trace()));
  }
  EXPECT_EQ(svd.rank(), s.problem.d + proj_rank);
  Eigen::MatrixXd q = a.A.transpose() * a.sigma_diag.asDiagonal() * a.A;
  EXPECT_LE((a.Q - q).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Augmented, CommunicationBlockIsLaplacian) {
  Small s = small(4, 2, 2, GraphKind::path);
  const AugmentedSystem& a = s.aug;
  Eigen::MatrixXd lap = s.gossip.dense();
  EXPECT_LE((a.W - a.mu_comm * a.mu_comm * lap).cwiseAbs().maxCoeff(), 1e-13);
  Eigen::MatrixXd comm = a.A.leftCols(a.comm_dim());
  Eigen::MatrixXd gram = comm * comm.transpose();
  for (int k = 0; k < 4; ++k)
    for (int l = 0; l < 4; ++l)
      for (int c = 0; c < a.d; ++c) EXPECT_NEAR(gram(k * a.d + c, l * a.d + c), a.W(k, l), 1e-13);
}

TEST(Augmented, SizeGuard) {
  Dataset ds = synth_dataset(4 * 50, 30, LossKind::squared, 1);
  Problem p = build_problem(ds, 4, 0.1, LossFamily{LossKind::squared});
  Graph g = build_graph(GraphKind::ring, 4, {}, 0);
  EXPECT_THROW(build_augmented(p, g, 1.0), ValidationError);
}

TEST(Dual, ValueAtZero) {
  Small s = small(3, 2, 3);
  DualPoint zero{Vec::Zero(s.aug.comm_dim()), Vec::Zero(s.aug.comp_dim())};
  EXPECT_NEAR(dual_value(s.aug, zero), 0.0, 1e-14);
}

TEST(Dual, CommunicationPartScalesQuadratically) {
  Small s = small(3, 2, 3);
  DualPoint l{Vec::Random(s.aug.comm_dim()), Vec::Zero(s.aug.comp_dim())};
  DualPoint twice{2 * l.x, l.y};
  double v = dual_value(s.aug, l);
  EXPECT_GT(v, 0.0);
  EXPECT_NEAR(dual_value(s.aug, twice), 4 * v, 1e-12 * v);
}

TEST(Dual, StrongDuality) {
  Small s = small(3, 2, 3);
  Vec star = squared_loss_optimum(s.problem);
  Reference ref = reference_solution(s.problem);
  EXPECT_LE((star - ref.theta_star).norm(), 1e-8 * (1 + star.norm()));
  EXPECT_LE(s.problem.gradient(star).norm(), 1e-10);
  DualIterate opt = dual_optimum(s.aug, star);
  EXPECT_NEAR(dual_value(s.aug, opt.lambda), -s.problem.objective(star), 1e-10 * (1 + std::abs(ref.f_star)));
  Mat theta = primal_of(s.aug, opt.lambda);
  for (int i = 0; i < s.problem.n; ++i) EXPECT_LE((theta.row(i).transpose() - star).norm(), 1e-10);
  for (int t = 0; t < 20; ++t) {
    DualPoint other = random_point(s.aug, 100 + t);
    EXPECT_GE(dual_value(s.aug, other), dual_value(s.aug, opt.lambda) - 1e-10);
  }
}

TEST(Dual, DivergenceMatchesSecondDifference) {
  Small s = small(3, 2, 3);
  for (unsigned t = 0; t < 10; ++t) {
    DualPoint a = random_point(s.aug, 7 + t), h = random_point(s.aug, 70 + t);
    h.x *= 1e-1;
    h.y *= 1e-1;
    DualPoint plus{a.x + h.x, a.y + h.y}, minus{a.x - h.x, a.y - h.y};
    double second = dual_value(s.aug, plus) + dual_value(s.aug, minus) - 2 * dual_value(s.aug, a);
    double dd = dual_divergence(s.aug, plus, a);
    EXPECT_NEAR(second, 2 * dd, 1e-9 * (1 + std::abs(second)));
    EXPECT_NEAR(dual_divergence(s.aug, a, plus), dd, 1e-9 * (1 + dd));
    EXPECT_GE(bregman_divergence(s.aug, plus, a), 0.0);
    EXPECT_NEAR(bregman_divergence(s.aug, a, a), 0.0, 1e-14);
  }
}

TEST(Dual, SupportOutsideRangeIsInfeasible) {
  Small s = small(2, 2, 3);
  Vec x = s.aug.P[0].col(0);
  ASSERT_GT(x.norm(), 0.0);
  Vec on = 2.5 * x / x.norm();
  EXPECT_NO_THROW(support_coordinate(s.aug, 0, 0, on));
  Vec off = on;
  Eigen::Vector3d e(1.0, -2.0, 0.5);
  off += e - s.aug.P[0] * e;
  EXPECT_THROW(support_coordinate(s.aug, 0, 0, off), InfeasibleDualError);
}

TEST(Dual, StartMatchesCoreInit) {
  Small s = small(3, 2, 3);
  Mat z0 = Mat::Random(s.problem.n * s.problem.m, s.problem.d);
  DualIterate start = dual_start(s.aug, &z0);
  DvrState st = init_state(s.problem, s.params, &z0, 1);
  EXPECT_LE((primal_of(s.aug, start.lambda) - st.theta).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(range_violation(s.aug, start.lambda), 1e-12);
}

TEST(Blocks, Validation) {
  Small s = small(3, 2, 3);
  StepChoice c;
  c.comm = true;
  EXPECT_TRUE(block_of(c).comm);
  c.comm = false;
  c.samples = {1, 0, 1};
  Block b = block_of(c);
  ASSERT_EQ(b.edges.size(), 3u);
  EXPECT_EQ(b.edges[2], std::make_pair(2, 1));
  EXPECT_NO_THROW(validate_block(s.aug, b));
  b.edges.push_back({0, 0});
  EXPECT_THROW(validate_block(s.aug, b), ValidationError);
  Block bad;
  bad.edges = {{0, 5}};
  EXPECT_THROW(validate_block(s.aug, bad), ValidationError);
}

TEST(Equivalence, CoreMatchesDualCoordinateDescent) {
  struct Shape {
    int n, m, d;
  };
  for (Shape sh : {Shape{2, 1, 1}, Shape{3, 2, 3}, Shape{4, 3, 5}, Shape{4, 2, 2}}) {
    Small s = small(sh.n, sh.m, sh.d, GraphKind::path);
    EquivalenceReport r = equivalence_check(s.aug, s.gossip, s.params, 5, 400);
    EXPECT_EQ(r.steps, 400);
    EXPECT_LE(r.max_deviation, 1e-8) << sh.n << "x" << sh.m << "x" << sh.d;
    EXPECT_LE(r.max_range_violation, 1e-10);
  }
}

TEST(Constants, RelativeSmoothness) {
  Small s = small(3, 2, 3);
  RelativeConstants rc = relative_constants(s.aug, 2000, 3);
  EXPECT_TRUE(rc.upper_ok());
  for (int i = 0; i < s.problem.n; ++i)
    for (int j = 0; j < s.problem.m; ++j)
      EXPECT_NEAR(rc.L_rel(i, j), s.params.alpha * (1 + s.problem.L(i, j) / s.problem.sigma[i]), 1e-12);
  EXPECT_EQ(rc.probes, 2000);
  EXPECT_LE(rc.worst_comm_ratio, rc.L_rel_comm * (1 + 1e-6));
}

TEST(Lyapunov, ContractsInExpectation) {
  for (auto kind : {GraphKind::ring, GraphKind::path}) {
    Small s = small(3, 2, 2, kind);
    LyapunovReport r = lyapunov_check(s.aug, s.params, 2, 20);
    EXPECT_TRUE(r.hypothesis_ok) << r.violation;
    EXPECT_TRUE(r.passed()) << r.max_ratio << " vs " << r.bound;
    EXPECT_EQ(r.ratios.size(), 40u);
    EXPECT_NEAR(r.bound, 1 - s.params.eta * s.params.alpha / 2, 1e-15);
    EXPECT_GT(r.enumerated_blocks, 0);
  }
}

TEST(Lyapunov, OversizedStepBreaksHypothesis) {
  Small s = small(3, 2, 2);
  DvrParams par = s.params;
  par.eta *= 2;
  LyapunovReport r = lyapunov_check(s.aug, par, 1, 5);
  EXPECT_FALSE(r.hypothesis_ok);
  EXPECT_FALSE(r.violation.empty());
  EXPECT_FALSE(r.passed());
}

TEST(Envelope, PrimalAndDualFormsAgree) {
  Small s = small(3, 2, 3);
  Vec star = squared_loss_optimum(s.problem);
  DualIterate start = dual_start(s.aug);
  DualIterate opt = dual_optimum(s.aug, star);
  double primal = envelope_constant(s.problem, s.gossip, s.params, star);
  double dual = envelope_constant(s.aug, s.params, start.lambda, opt.lambda);
  EXPECT_GT(primal, 0.0);
  EXPECT_NEAR(primal, dual, 1e-8 * dual);
}

TEST(Verification, ReportShape) {
  OracleInstance inst = default_oracle_instance();
  EXPECT_EQ(inst.problem.n, 3);
  EXPECT_EQ(inst.problem.m, 2);
  EXPECT_EQ(inst.problem.d, 3);
  nlohmann::json j = run_verification(inst, 1);
  ASSERT_TRUE(j.contains("checks"));
  ASSERT_TRUE(j["pass"].is_boolean());
  EXPECT_TRUE(j["pass"].get<bool>());
  for (const auto& c : j["checks"]) {
    EXPECT_TRUE(c.contains("name"));
    EXPECT_TRUE(c.contains("bound"));
    EXPECT_TRUE(c.contains("observed"));
    EXPECT_TRUE(c["pass"].is_boolean());
  }
}
