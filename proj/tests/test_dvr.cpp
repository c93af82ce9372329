#include "dvr/dvr.hpp"
#include "dvr/harness.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

using namespace dvr;

namespace {

struct Fixture {
  Problem problem;
  GossipMatrix gossip;
};

Fixture small(LossKind kind, GraphKind graph = GraphKind::ring, int n = 4, double sigma = 0.05) {
  Dataset ds = synth_dataset(n * 8, 5, kind, 21, 2.0, 0.9);
  Problem p = build_problem(ds, n, sigma, LossFamily{kind});
  return {p, GossipMatrix::laplacian(build_graph(graph, n, {}, 0))};
}

Instance canonical() {
  ExperimentConfig c;
  c.dataset.decay = 0.7;
  return build_instance(c);
}

std::vector<double> sorted_eigs(const Eigen::MatrixXd& m) {
  Vec e = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues();
  return {e.data(), e.data() + e.size()};
}

double lmin_plus(const std::vector<double>& e) {
  for (double v : e)
    if (v > 1e-9 * e.back()) return v;
  return 0.0;
}

}  // namespace

TEST(Params, MatchIndependentFormulas) {
  for (auto kind : {LossKind::logistic, LossKind::squared}) {
    Fixture s = small(kind);
    const Problem& p = s.problem;
    DvrParams par = compute_params(p, s.gossip);
    Eigen::MatrixXd w = s.gossip.dense();
    Eigen::MatrixXd a(p.n, p.n), b(p.n, p.n);
    for (int k = 0; k < p.n; ++k)
      for (int l = 0; l < p.n; ++l) {
        a(k, l) = w(k, l) / std::sqrt(p.sigma[k] * p.sigma[l]);
        b(k, l) = w(k, l) / std::sqrt(p.D_M[k] * p.D_M[l]);
      }
    double lmax_sw = sorted_eigs(a).back();
    double lmin_dw = lmin_plus(sorted_eigs(b));
    double alpha = 2 * lmin_dw;
    double kappa_comm = s.gossip.gamma() * lmax_sw / lmin_dw;
    double pc = 1.0 / (1.0 + s.gossip.gamma() * (p.m + p.kappa_s) / kappa_comm);
    EXPECT_NEAR(par.alpha, alpha, 1e-10 * alpha);
    EXPECT_NEAR(par.kappa_comm, kappa_comm, 1e-10 * kappa_comm);
    EXPECT_NEAR(par.p_comm, pc, 1e-12);
    double eta = pc / lmax_sw;
    for (int i = 0; i < p.n; ++i) {
      double total = 0.0;
      for (int j = 0; j < p.m; ++j) total += 1 + p.L(i, j) / p.sigma[i];
      double row = 0.0;
      for (int j = 0; j < p.m; ++j) {
        double wij = 1 + p.L(i, j) / p.sigma[i];
        double pij = (1 - pc) * wij / total;
        EXPECT_NEAR(par.p(i, j), pij, 1e-14);
        eta = std::min(eta, pij / (alpha * wij));
        row += par.p(i, j);
      }
      EXPECT_NEAR(row, 1 - par.p_comm, 1e-14);
    }
    EXPECT_NEAR(par.eta, eta, 1e-10 * eta);
    EXPECT_LE(par.alpha * par.eta, 2 * par.p_comm);
    EXPECT_LE(par.alpha * par.eta, 2 * par.p.minCoeff());
    EXPECT_LE(par.eta, par.p_comm / par.lambda_max_sigma_w * (1 + 1e-15));
  }
}

TEST(Params, HomogeneousCommStepIsPlainGossip) {
  Fixture s = small(LossKind::squared);
  ParamOverrides ov;
  ov.p_comm = 0.01;  // makes the communication term of eta binding
  DvrParams par = compute_params(s.problem, s.gossip, ov);
  ASSERT_NEAR(par.eta, par.p_comm / par.lambda_max_sigma_w, 1e-18);
  const double sigma = s.problem.sigma[0];
  EXPECT_NEAR(par.eta * s.gossip.lambda_max(), sigma * par.p_comm, 1e-12);
  DvrState st = init_state(s.problem, par, nullptr, 1);
  Mat before = st.theta;
  StepChoice comm;
  comm.comm = true;
  apply_step(st, par, s.problem, s.gossip, comm);
  Mat expect = before - s.gossip.apply(before) / s.gossip.lambda_max();
  EXPECT_LE((st.theta - expect).cwiseAbs().maxCoeff(), 1e-12 * (1 + before.cwiseAbs().maxCoeff()));
}

TEST(Params, SingleNode) {
  Dataset ds = synth_dataset(40, 4, LossKind::squared, 2);
  Problem p = build_problem(ds, 1, 0.3, LossFamily{LossKind::squared});
  GossipMatrix w = GossipMatrix::laplacian(build_graph(GraphKind::complete, 1, {}, 0));
  DvrParams par = compute_params(p, w);
  EXPECT_EQ(par.p_comm, 0.0);
  double total = 0.0;
  for (int j = 0; j < p.m; ++j) total += 1 + p.L(0, j) / p.sigma[0];
  EXPECT_NEAR(par.alpha * par.eta, 1.0 / total, 1e-15);
  EXPECT_NEAR(par.alpha, 2.0 / p.D_M[0], 1e-15);
  for (int j = 0; j < p.m; ++j) {
    double c = par.alpha * par.eta / par.p(0, j);
    EXPECT_NEAR(c, 1.0 / (1 + p.L(0, j) / p.sigma[0]), 1e-12);
    EXPECT_LE(c, 1.0);
  }
  ParamOverrides ov;
  ov.p_comm = 0.2;
  EXPECT_THROW(compute_params(p, w, ov), ValidationError);
}

TEST(Params, RejectsBadOverrides) {
  Fixture s = small(LossKind::logistic);
  ParamOverrides ov;
  ov.p_comm = 1.0;
  EXPECT_THROW(compute_params(s.problem, s.gossip, ov), ValidationError);
  ov.p_comm = 0.0;
  EXPECT_THROW(compute_params(s.problem, s.gossip, ov), ValidationError);
  ParamOverrides neg;
  neg.beta = -1;
  EXPECT_THROW(compute_params(s.problem, s.gossip, neg), ValidationError);
  DvrParams par = compute_params(s.problem, s.gossip);
  par.eta *= 10;
  EXPECT_THROW(par.validate(), ConstructionError);
}

TEST(Params, ChebyshevUsesMeasuredGap) {
  Fixture s = small(LossKind::logistic, GraphKind::path, 9);
  GossipMatrix c = chebyshev(s.gossip);
  DvrParams par = compute_params(s.problem, c);
  EXPECT_TRUE(par.uses_chebyshev);
  EXPECT_EQ(par.degree, c.effective_degree());
  EXPECT_DOUBLE_EQ(par.gamma, c.gamma());
  EXPECT_GT(par.gamma, s.gossip.gamma());
}

TEST(Init, InterpolatingStartGivesZeroTheta) {
  Rng rng(4);
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd x(12, 3);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = gauss(rng);
  Vec planted(3);
  planted << 1.0, -0.5, 2.0;
  Dataset ds;
  ds.X = x.sparseView();
  ds.y = x * planted;
  Problem p = build_problem(ds, 3, 0.1, LossFamily{LossKind::squared});
  GossipMatrix w = GossipMatrix::laplacian(build_graph(GraphKind::path, 3, {}, 0));
  DvrParams par = compute_params(p, w);
  Mat z0(12, 3);
  for (int r = 0; r < 12; ++r) z0.row(r) = planted.transpose();
  DvrState st = init_state(p, par, &z0, 1);
  EXPECT_LE(st.theta.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Init, LogisticPositiveLabelsOnAxis) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 2);
  x.col(0).setOnes();
  Dataset ds;
  ds.X = x.sparseView();
  ds.y = Vec::Ones(6);
  Vec sigma(2);
  sigma << 0.5, 0.25;
  Problem p = build_problem(ds, 2, sigma, LossFamily{LossKind::logistic});
  GossipMatrix w = GossipMatrix::laplacian(build_graph(GraphKind::complete, 2, {}, 0));
  DvrParams par = compute_params(p, w);
  StateOptions so;
  so.shadow = true;
  DvrState st = init_state(p, par, nullptr, 1, so);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(st.theta(i, 0), p.weight * p.m / 2.0 / sigma[i], 1e-15);
    EXPECT_EQ(st.theta(i, 1), 0.0);
  }
  EXPECT_EQ(st.x_tilde.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE(theta_identity_residual(st, par, p), 1e-15);
}

TEST(Step, ConsensusCommunicationIsNoOp) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  DvrState st = init_state(s.problem, par, nullptr, 1);
  for (int i = 0; i < s.problem.n; ++i) st.theta.row(i) = Vec::LinSpaced(s.problem.d, -2, 3).transpose();
  Mat before = st.theta;
  StepChoice c;
  c.comm = true;
  apply_step(st, par, s.problem, s.gossip, c);
  EXPECT_LE((st.theta - before).cwiseAbs().maxCoeff(), 1e-12 * 3);
  EXPECT_EQ(st.clock.n_comms, 1);
  EXPECT_EQ(st.clock.n_grads, 0);
}

TEST(Step, VirtualFixedPoint) {
  Fixture s = small(LossKind::logistic);
  const Problem& p = s.problem;
  DvrParams par = compute_params(p, s.gossip);
  Mat theta = Mat::Random(p.n, p.d);
  Mat z0(p.n * p.m, p.d);
  for (int i = 0; i < p.n; ++i)
    for (int j = 0; j < p.m; ++j) z0.row(p.row(i, j)) = theta.row(i);
  DvrState st = init_state(p, par, &z0, 1);
  st.theta = theta;
  StepChoice c;
  c.samples.assign(p.n, 3);
  apply_step(st, par, p, s.gossip, c);
  EXPECT_LE((st.theta - theta).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((st.z - z0).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(st.clock.n_grads, 1);
}

TEST(Step, OptimumIsFixedForBothUpdates) {
  for (auto kind : {LossKind::logistic, LossKind::squared}) {
    Fixture s = small(kind);
    const Problem& p = s.problem;
    Reference ref = reference_solution(p);
    DvrParams par = compute_params(p, s.gossip);
    Mat z0(p.n * p.m, p.d);
    for (Eigen::Index r = 0; r < z0.rows(); ++r) z0.row(r) = ref.theta_star.transpose();
    DvrState st = init_state(p, par, &z0, 1);
    for (int i = 0; i < p.n; ++i) st.theta.row(i) = ref.theta_star.transpose();
    Mat star = st.theta;
    for (int t = 0; t < 200; ++t) step(st, par, p, s.gossip);
    EXPECT_LE((st.theta - star).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Step, ThetaIdentityHoldsEveryStep) {
  for (auto kind : {LossKind::logistic, LossKind::squared})
    for (bool cheb : {false, true}) {
      Fixture s = small(kind, GraphKind::path, 6);
      GossipMatrix g = cheb ? chebyshev(s.gossip) : s.gossip;
      DvrParams par = compute_params(s.problem, g);
      StateOptions so;
      so.shadow = true;
      DvrState st = init_state(s.problem, par, nullptr, 9, so);
      for (int t = 0; t < 3000; ++t) {
        step(st, par, s.problem, g);
        ASSERT_LE(theta_identity_residual(st, par, s.problem), 1e-10 * (1 + st.theta.norm())) << "step " << t;
      }
    }
}

TEST(Step, VirtualParametersStayInConvexHull) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  for (Eigen::Index k = 0; k < par.p.size(); ++k) {
    double c = par.alpha * par.eta / par.p.data()[k];
    EXPECT_GT(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
  Mat z0 = Mat::Random(s.problem.n * s.problem.m, s.problem.d);
  DvrState st = init_state(s.problem, par, &z0, 5);
  Vec hist(s.problem.n);
  for (int i = 0; i < s.problem.n; ++i) hist[i] = st.theta.row(i).norm();
  for (int t = 0; t < 2000; ++t) {
    step(st, par, s.problem, s.gossip);
    for (int i = 0; i < s.problem.n; ++i) {
      hist[i] = std::max(hist[i], st.theta.row(i).norm());
      for (int j = 0; j < s.problem.m; ++j) {
        auto r = s.problem.row(i, j);
        ASSERT_LE(st.z.row(r).norm(), hist[i] + z0.row(r).norm() + 1e-12);
      }
    }
  }
}

TEST(Step, CacheMatchesGradientsAndCompactMode) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  StateOptions compact;
  compact.store_z = false;
  DvrState full = init_state(s.problem, par, nullptr, 3);
  DvrState lean = init_state(s.problem, par, nullptr, 3, compact);
  for (int t = 0; t < 1500; ++t) {
    step(full, par, s.problem, s.gossip);
    step(lean, par, s.problem, s.gossip);
  }
  EXPECT_LE((full.theta - lean.theta).cwiseAbs().maxCoeff(), 1e-12);
  for (int i = 0; i < s.problem.n; ++i)
    for (int j = 0; j < s.problem.m; ++j) {
      auto r = s.problem.row(i, j);
      double u = s.problem.preactivation(i, j, full.z.row(r).transpose());
      EXPECT_NEAR(full.u[r], u, 1e-12 * (1 + std::abs(u)));
      EXPECT_NEAR(full.coef[r], s.problem.grad_coef(i, j, u), 1e-14);
    }
}

TEST(Step, DrawFrequenciesMatchProbabilities) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  Rng rng(12);
  StepChoice c;
  const int draws = 200000;
  int comms = 0;
  std::vector<int> hits(s.problem.m, 0);
  for (int k = 0; k < draws; ++k) {
    draw_step(rng, par, c);
    if (c.comm)
      ++comms;
    else
      ++hits[c.samples[0]];
  }
  double pc = par.p_comm;
  EXPECT_NEAR(comms / double(draws), pc, 5 * std::sqrt(pc * (1 - pc) / draws));
  for (int j = 0; j < s.problem.m; ++j) {
    double q = par.p(0, j) / (1 - pc);
    double n = draws - comms;
    EXPECT_NEAR(hits[j] / n, q, 5 * std::sqrt(q * (1 - q) / n));
  }
}

TEST(Step, DivergenceIsReported) {
  Fixture s = small(LossKind::squared);
  DvrParams par = compute_params(s.problem, s.gossip);
  par.eta *= 1e4;
  DvrState st = init_state(s.problem, par, nullptr, 1);
  try {
    for (int t = 0; t < 100000; ++t) step(st, par, s.problem, s.gossip);
    FAIL() << "no divergence detected";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos) << e.what();
  }
}

TEST(Run, ZeroIterationBudget) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  Budget b;
  b.max_iterations = 0;
  Trace t = run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 1);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].iter, 0);
  EXPECT_EQ(t.rows[0].sim_time, 0.0);
  EXPECT_THROW(run_dvr(s.problem, s.gossip, par, Budget{}, CostModel{}, nullptr, 1), ValidationError);
}

TEST(Run, TimeAccountingIsExact) {
  Fixture s = small(LossKind::logistic, GraphKind::path, 9);
  GossipMatrix c = chebyshev(s.gossip);
  DvrParams par = compute_params(s.problem, c);
  Budget b;
  b.max_iterations = 5000;
  const double tau = 37.5;
  Trace t = run_dvr(s.problem, c, par, b, CostModel{tau}, nullptr, 4);
  double prev = -1;
  std::int64_t pg = -1, pc = -1;
  for (const auto& r : t.rows) {
    EXPECT_EQ(r.sim_time, static_cast<double>(r.n_grads) + static_cast<double>(r.n_comms) * tau * c.effective_degree());
    EXPECT_GE(r.sim_time, prev);
    EXPECT_GE(r.n_grads, pg);
    EXPECT_GE(r.n_comms, pc);
    prev = r.sim_time;
    pg = r.n_grads;
    pc = r.n_comms;
  }
  EXPECT_EQ(t.rows.back().iter, 5000);
}

TEST(Run, CadenceAndCommunicationRows) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  Budget b;
  b.max_iterations = 3000;
  TraceOptions o;
  o.every_comm = false;
  RunOptions ro;
  ro.trace = o;
  Trace t = run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 4, ro);
  auto cadence = static_cast<std::int64_t>(std::ceil((s.problem.m + s.problem.kappa_s) / 20.0));
  for (std::size_t k = 1; k + 1 < t.rows.size(); ++k) EXPECT_EQ(t.rows[k].iter % cadence, 0);
  Trace all = run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 4);
  EXPECT_GT(all.rows.size(), t.rows.size());
  o.max_rows = 10;
  ro.trace = o;
  Trace capped = run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 4, ro);
  EXPECT_EQ(capped.rows.size(), 11u);
  EXPECT_EQ(capped.rows.back().iter, 3000);
}

TEST(Run, Deterministic) {
  Fixture s = small(LossKind::logistic);
  DvrParams par = compute_params(s.problem, s.gossip);
  Budget b;
  b.max_iterations = 4000;
  std::ostringstream x, y;
  run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 8).write_csv(x);
  run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 8).write_csv(y);
  EXPECT_EQ(x.str(), y.str());
  std::ostringstream z;
  run_dvr(s.problem, s.gossip, par, b, CostModel{}, nullptr, 9).write_csv(z);
  EXPECT_NE(x.str(), z.str());
}

TEST(Run, CanonicalReachesTargetWithinSixtyEpochsOfKappa) {
  Instance inst = canonical();
  const Problem& p = inst.problem;
  Reference ref = reference_solution(p);
  DvrParams par = compute_params(p, inst.gossip);
  Budget b;
  b.target_suboptimality = 1e-6;
  b.max_iterations = static_cast<std::int64_t>(60 * (p.m + p.kappa_s));
  Trace t = run_dvr(p, inst.gossip, par, b, CostModel{}, &ref, 42);
  const TraceRow* hit = t.first_below(1e-6);
  ASSERT_NE(hit, nullptr);
  EXPECT_LE(hit->iter, *b.max_iterations);
}

TEST(Run, ConsensusGapVanishesOnConvergedTrace) {
  Instance inst = canonical();
  Reference ref = reference_solution(inst.problem);
  DvrParams par = compute_params(inst.problem, inst.gossip);
  Budget b;
  b.target_suboptimality = 1e-12;
  b.max_iterations = 2000000;
  Trace t = run_dvr(inst.problem, inst.gossip, par, b, CostModel{}, &ref, 42);
  ASSERT_LE(t.rows.back().subopt_node0, 1e-12);
  EXPECT_LE(t.rows.back().consensus_gap, 1e-5 * (1 + ref.theta_star.norm()));
}

TEST(Run, MeanErrorDecaysAtHalfTheRate) {
  Instance inst = canonical();
  const Problem& p = inst.problem;
  Reference ref = reference_solution(p);
  DvrParams par = compute_params(p, inst.gossip);
  const auto epoch = static_cast<std::int64_t>(std::ceil(p.m / (1 - par.p_comm)));
  const std::int64_t epochs = 100;
  const int seeds = 50;
  std::vector<double> mean(epochs + 1, 0.0);
  for (int s = 1; s <= seeds; ++s) {
    DvrState st = init_state(p, par, nullptr, s);
    for (std::int64_t e = 0; e <= epochs; ++e) {
      if (e > 0)
        for (std::int64_t k = 0; k < epoch; ++k) step(st, par, p, inst.gossip);
      double err = 0.0;
      for (int i = 0; i < p.n; ++i) err += (st.theta.row(i).transpose() - ref.theta_star).squaredNorm();
      mean[e] += err / seeds;
    }
  }
  for (std::int64_t e = 15; e <= epochs; e += 10) EXPECT_LE(mean[e], mean[e - 10]) << "epoch " << e;
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::int64_t e = 5; e <= epochs; ++e) {
    double x = static_cast<double>(e * epoch), y = std::log(mean[e]);
    n += 1;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_LE(slope, -par.alpha * par.eta / 4);
}
