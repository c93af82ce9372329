#include "dvr/dvr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

namespace dvr {

double DvrParams::p_min() const {
  double pm = p.minCoeff();
  if (p_comm > 0.0) pm = std::min(pm, p_comm);
  return pm;
}

void DvrParams::validate() const {
  const double tol = 1e-12;
  auto fail = [](const std::string& what) { throw ConstructionError("DVR parameters: " + what); };
  if (!(alpha > 0.0) || !(eta > 0.0)) fail("alpha and eta must be positive");
  if (!(p_comm >= 0.0 && p_comm < 1.0)) fail("p_comm must lie in [0,1)");
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (std::abs(p.row(i).sum() - (1.0 - p_comm)) > 1e-12) fail("p_ij rows must sum to 1 - p_comm");
  if (p_comm > 0.0) {
    if (alpha * eta > 2.0 * p_comm * (1 + tol)) fail("alpha * eta exceeds 2 p_comm");
    if (eta > p_comm / lambda_max_sigma_w * (1 + tol)) fail("eta exceeds p_comm / lambda_max");
  }
  if (alpha * eta > 2.0 * p.minCoeff() * (1 + tol)) fail("alpha * eta exceeds 2 min p_ij");
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (eta > p(i, j) / (alpha * sample_weight(i, j)) * (1 + tol)) fail("eta exceeds p_ij / L_rel");
}

nlohmann::json DvrParams::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  j["eta"] = eta;
  j["p_comm"] = p_comm;
  j["p_min"] = p_min();
  j["kappa_comm"] = kappa_comm;
  j["kappa_s"] = kappa_s;
  j["gamma"] = gamma;
  j["lambda_max_sigma_w"] = lambda_max_sigma_w;
  j["lambda_min_dm_w"] = lambda_min_dm_w;
  j["beta"] = beta;
  j["uses_chebyshev"] = uses_chebyshev;
  j["degree"] = degree;
  j["rate"] = alpha * eta / 2.0;
  std::vector<std::vector<double>> rows;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    rows.emplace_back(p.cols());
    for (Eigen::Index k = 0; k < p.cols(); ++k) rows.back()[k] = p(i, k);
  }
  j["p_ij"] = rows;
  return j;
}

std::string DvrParams::digest() const {
  std::size_t h = std::hash<std::string>{}(to_json().dump());
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016zx", h);
  return buf;
}

DvrParams compute_params(const Problem& problem, const GossipMatrix& gossip, const ParamOverrides& overrides) {
  if (gossip.n() != problem.n) throw ValidationError("gossip matrix and problem disagree on n");
  if (overrides.beta < 0.0) throw ValidationError("beta must be >= 0");
  const int n = problem.n, m = problem.m;
  DvrParams par;
  par.beta = overrides.beta;
  par.sigma = problem.sigma.array() + overrides.beta;
  par.D_M = problem.D_M.array() + overrides.beta;
  par.uses_chebyshev = gossip.is_chebyshev();
  par.degree = gossip.effective_degree();
  par.kappa_s = 0.0;
  for (int i = 0; i < n; ++i) par.kappa_s = std::max(par.kappa_s, (1.0 + problem.L.row(i).sum()) / par.sigma[i]);

  Mat weights(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) weights(i, j) = 1.0 + problem.L(i, j) / par.sigma[i];

  if (n == 1) {
    par.p_comm = 0.0;
    par.alpha = 2.0 / par.D_M[0];
  } else {
    Eigen::MatrixXd w = gossip.dense();
    Vec s = par.sigma.array().rsqrt();
    Vec dm = par.D_M.array().rsqrt();
    Spectrum sw = analyze_spectrum(s.asDiagonal() * w * s.asDiagonal());
    Spectrum dw = analyze_spectrum(dm.asDiagonal() * w * dm.asDiagonal());
    par.lambda_max_sigma_w = sw.lambda_max;
    par.lambda_min_dm_w = dw.lambda_min_plus;
    par.gamma = gossip.gamma();
    par.alpha = 2.0 * par.lambda_min_dm_w;
    par.kappa_comm = par.gamma * par.lambda_max_sigma_w / par.lambda_min_dm_w;
    par.p_comm = 1.0 / (1.0 + par.gamma * (m + par.kappa_s) / par.kappa_comm);
  }
  if (overrides.p_comm) {
    if (n == 1 && *overrides.p_comm != 0.0) throw ValidationError("a single node cannot communicate");
    if (!(*overrides.p_comm >= 0.0 && *overrides.p_comm < 1.0))
      throw ValidationError("p_comm override must lie in [0,1)");
    if (n > 1 && *overrides.p_comm == 0.0) throw ValidationError("p_comm must be > 0 with several nodes");
    par.p_comm = *overrides.p_comm;
  }

  par.p.resize(n, m);
  par.cdf.resize(n, m);
  for (int i = 0; i < n; ++i) {
    double total = weights.row(i).sum();
    double acc = 0.0;
    for (int j = 0; j < m; ++j) {
      par.p(i, j) = (1.0 - par.p_comm) * weights(i, j) / total;
      acc += weights(i, j) / total;
      par.cdf(i, j) = acc;
    }
    par.cdf(i, m - 1) = 1.0;
  }

  par.eta = std::numeric_limits<double>::infinity();
  if (n > 1) par.eta = par.p_comm / par.lambda_max_sigma_w;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) par.eta = std::min(par.eta, par.p(i, j) / (par.alpha * weights(i, j)));

  par.sample_weight = std::move(weights);
  par.validate();
  return par;
}

void draw_step(Rng& rng, const DvrParams& params, StepChoice& out) {
  double u = uniform01(rng);
  out.comm = u < params.p_comm;
  if (out.comm) return;
  const Eigen::Index n = params.cdf.rows(), m = params.cdf.cols();
  out.samples.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = uniform01(rng);
    const double* row = params.cdf.data() + i * m;
    auto it = std::upper_bound(row, row + m, r);
    out.samples[static_cast<std::size_t>(i)] = static_cast<int>(std::min<Eigen::Index>(it - row, m - 1));
  }
}

DvrState init_state(const Problem& problem, const DvrParams& params, const Mat* z0,
                    std::uint64_t seed, const StateOptions& options) {
  const int n = problem.n, m = problem.m, d = problem.d;
  DvrState st;
  st.shadow = options.shadow;
  st.store_z = options.store_z;
  st.rng.seed(seed);
  st.u.resize(n * m);
  st.coef.resize(n * m);
  if (z0) {
    if (z0->rows() != n * m || z0->cols() != d) throw ValidationError("z0 must be (n*m) x d");
    if (!z0->allFinite()) throw ValidationError("z0 must be finite");
  }
  if (st.store_z) st.z = z0 ? *z0 : Mat::Zero(n * m, d);
  st.theta = Mat::Zero(n, d);
  for (int i = 0; i < n; ++i) {
    Vec acc = Vec::Zero(d);
    for (int j = 0; j < m; ++j) {
      auto r = problem.row(i, j);
      st.u[r] = z0 ? problem.preactivation(i, j, z0->row(r).transpose()) : 0.0;
      st.coef[r] = problem.grad_coef(i, j, st.u[r]);
      problem.add_feature(i, j, st.coef[r], acc);
    }
    st.theta.row(i) = (-acc / params.sigma[i]).transpose();
  }
  st.x_tilde = Mat::Zero(n, d);
  st.offset = Mat::Zero(n, d);
  return st;
}

namespace {

[[noreturn]] void diverged(std::int64_t iter, int node, const char* kind) {
  throw DivergenceError("non-finite parameter at iteration " + std::to_string(iter) + ", node " +
                        std::to_string(node) + " (" + kind + " update)");
}

}  // namespace

void apply_step(DvrState& st, const DvrParams& params, const Problem& problem,
                const GossipMatrix& gossip, const StepChoice& choice) {
  const int n = problem.n;
  if (choice.comm) {
    Mat wt = gossip.apply(st.theta);
    const double scale = params.eta / params.p_comm;
    for (int i = 0; i < n; ++i) st.theta.row(i) -= (scale / params.sigma[i]) * wt.row(i);
    if (st.shadow) st.x_tilde -= scale * wt;
    ++st.clock.n_comms;
    for (int i = 0; i < n; ++i)
      if (!st.theta.row(i).allFinite()) diverged(st.clock.iter + 1, i, "communication");
  } else {
    const double ae = params.alpha * params.eta;
    for (int i = 0; i < n; ++i) {
      const int j = choice.samples[static_cast<std::size_t>(i)];
      const auto r = problem.row(i, j);
      const double c = ae / params.p(i, j);
      Eigen::Ref<Vec> th = st.theta.row(i).transpose();
      if (st.store_z) {
        st.z.row(r) = (1.0 - c) * st.z.row(r) + c * st.theta.row(i);
        st.u[r] = problem.preactivation(i, j, st.z.row(r).transpose());
      } else {
        st.u[r] = (1.0 - c) * st.u[r] + c * problem.preactivation(i, j, th);
      }
      const double g = problem.grad_coef(i, j, st.u[r]);
      problem.add_feature(i, j, -(g - st.coef[r]) / params.sigma[i], th);
      st.coef[r] = g;
      if (!std::isfinite(st.u[r]) || !st.theta.row(i).allFinite()) diverged(st.clock.iter + 1, i, "computation");
    }
    ++st.clock.n_grads;
  }
  ++st.clock.iter;
}

const StepChoice& step(DvrState& st, const DvrParams& params, const Problem& problem, const GossipMatrix& gossip) {
  draw_step(st.rng, params, st.choice);
  apply_step(st, params, problem, gossip, st.choice);
  return st.choice;
}

double theta_identity_residual(const DvrState& st, const DvrParams& params, const Problem& problem) {
  double worst = 0.0;
  for (int i = 0; i < problem.n; ++i) {
    Vec acc = (st.x_tilde.row(i) + st.offset.row(i)).transpose();
    for (int j = 0; j < problem.m; ++j) problem.add_feature(i, j, -st.coef[problem.row(i, j)], acc);
    worst = std::max(worst, (st.theta.row(i).transpose() - acc / params.sigma[i]).norm());
  }
  return worst;
}

void run_dvr(DvrState& st, const Problem& problem, const GossipMatrix& gossip, const DvrParams& params,
             Recorder& recorder, const RunOptions& options) {
  if (options.check_identity && !st.shadow) throw ValidationError("identity checks need shadow tracking");
  if (recorder.observe(st.clock, st.theta, false, true)) return;
  while (true) {
    const StepChoice& c = step(st, params, problem, gossip);
    if (options.check_identity) {
      double res = theta_identity_residual(st, params, problem);
      if (res > 1e-10 * (1.0 + st.theta.norm()))
        throw std::logic_error("theta identity violated at iteration " + std::to_string(st.clock.iter));
    }
    if (recorder.observe(st.clock, st.theta, c.comm)) return;
  }
}

Trace run_dvr(const Problem& problem, const GossipMatrix& gossip, const DvrParams& params,
              const Budget& budget, const CostModel& cost, const Reference* ref,
              std::uint64_t seed, const RunOptions& options) {
  Trace trace;
  trace.algorithm = "dvr";
  trace.seed = seed;
  trace.params_digest = params.digest();
  trace.meta["params"] = params.to_json();
  trace.meta["tau"] = cost.tau;
  Recorder rec(problem, ref, budget, options.trace, trace);
  DvrState st = init_state(problem, params, nullptr, seed, options.state);
  st.clock.comm_cost = cost.tau * gossip.effective_degree();
  run_dvr(st, problem, gossip, params, rec, options);
  return trace;
}

}  // namespace dvr
