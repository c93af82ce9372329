#include "dvr/catalyst.hpp"

#include <cmath>
#include <limits>

namespace dvr {

std::string to_string(BetaRule rule) {
  switch (rule) {
    case BetaRule::batch: return "batch";
    case BetaRule::finite_sum: return "finite_sum";
    case BetaRule::manual: return "manual";
  }
  return "manual";
}

BetaRule parse_beta_rule(const std::string& name) {
  if (name == "batch") return BetaRule::batch;
  if (name == "finite_sum") return BetaRule::finite_sum;
  if (name == "manual") return BetaRule::manual;
  throw ValidationError("unknown beta rule '" + name + "'");
}

namespace {

double balance_gap(const Problem& problem, const GossipMatrix& gossip, double beta) {
  ParamOverrides ov;
  ov.beta = beta;
  DvrParams p = compute_params(problem, gossip, ov);
  return p.kappa_comm - (problem.m + p.kappa_s) * p.gamma;
}

}  // namespace

double select_beta(const Problem& problem, const GossipMatrix& gossip, BetaRule rule, double value) {
  switch (rule) {
    case BetaRule::manual:
      if (!(value >= 0.0) || !std::isfinite(value)) throw ValidationError("manual beta must be finite and >= 0");
      return value;
    case BetaRule::finite_sum: {
      double ls = problem.L.rowwise().sum().maxCoeff();
      return std::max(ls / problem.m - problem.sigma_min(), 0.0);
    }
    case BetaRule::batch: {
      if (problem.n < 2) throw ValidationError("the batch beta rule needs a network");
      if (balance_gap(problem, gossip, 0.0) <= 0.0) return 0.0;
      double lo = 0.0, hi = problem.sigma_min();
      int doublings = 0;
      while (balance_gap(problem, gossip, hi) > 0.0) {
        lo = hi;
        hi *= 2.0;
        if (++doublings > 200)
          throw ConstructionError("batch beta rule: communication and computation terms never balance");
      }
      for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
        double mid = 0.5 * (lo + hi);
        if (balance_gap(problem, gossip, mid) > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      return hi;
    }
  }
  return 0.0;
}

nlohmann::json CatalystParams::to_json() const {
  nlohmann::json j;
  j["beta_rule"] = to_string(rule);
  j["beta"] = beta;
  j["q"] = q;
  j["extrapolation"] = extrapolation;
  j["rho_out"] = rho_out;
  j["k_inner"] = k_inner;
  j["t_outer"] = t_outer;
  j["inner"] = inner.to_json();
  return j;
}

CatalystParams make_catalyst_params(const Problem& problem, const GossipMatrix& gossip,
                                    const CatalystConfig& config) {
  if (config.k_inner < 0 || config.t_outer < 0) throw ValidationError("k_inner and t_outer must be >= 0");
  CatalystParams cp;
  cp.rule = config.rule;
  cp.beta = select_beta(problem, gossip, config.rule, config.beta_value);
  ParamOverrides ov;
  ov.beta = cp.beta;
  cp.inner = compute_params(problem, gossip, ov);
  const double smin = problem.sigma_min();
  cp.q = smin / (smin + cp.beta);
  cp.extrapolation = (1.0 - std::sqrt(cp.q)) / (1.0 + std::sqrt(cp.q));
  cp.rho_out = config.rho_out > 0.0 ? config.rho_out : std::sqrt(cp.q) / 2.0;
  if (cp.rho_out >= std::sqrt(cp.q) && cp.q < 1.0) throw ValidationError("rho_out must be < sqrt(q)");
  if (config.k_inner > 0) {
    cp.k_inner = config.k_inner;
  } else if (config.theory_k) {
    cp.k_inner = static_cast<std::int64_t>(std::ceil(1.0 / (cp.inner.alpha * cp.inner.eta)));
  } else {
    cp.k_inner = static_cast<std::int64_t>(std::ceil(problem.m / (1.0 - cp.inner.p_comm)));
  }
  cp.t_outer = config.t_outer;
  return cp;
}

double epsilon_schedule(double initial_gap, double rho_out, std::int64_t t) {
  return (2.0 / 9.0) * initial_gap * std::pow(1.0 - rho_out, static_cast<double>(t));
}

CatalystState outer_init(const Problem& problem, const CatalystParams& params, const Mat* z0,
                         std::uint64_t seed, const StateOptions& options) {
  CatalystState cs;
  cs.inner = init_state(problem, params.inner, z0, seed, options);
  // init_state divides by sigma_i + beta, which is exactly omega_0.
  cs.omega = cs.inner.theta;
  for (int i = 0; i < problem.n; ++i)
    cs.inner.theta.row(i) = (1.0 + params.beta / params.inner.sigma[i]) * cs.omega.row(i);
  cs.inner.offset = params.beta * cs.omega;
  cs.theta_prev = cs.inner.theta;
  return cs;
}

bool outer_step(CatalystState& cs, const CatalystParams& params, const Problem& problem,
                const GossipMatrix& gossip, Recorder* recorder, const RunOptions& options) {
  DvrState& st = cs.inner;
  for (std::int64_t k = 0; k < params.k_inner; ++k) {
    const StepChoice& c = step(st, params.inner, problem, gossip);
    if (options.check_identity) {
      double res = theta_identity_residual(st, params.inner, problem);
      if (res > 1e-10 * (1.0 + st.theta.norm()))
        throw std::logic_error("theta identity violated at iteration " + std::to_string(st.clock.iter));
    }
    if (recorder && recorder->observe(st.clock, st.theta, c.comm)) return true;
  }
  Mat theta_k = st.theta;
  Mat omega_next = theta_k + params.extrapolation * (theta_k - cs.theta_prev);
  for (int i = 0; i < problem.n; ++i)
    st.theta.row(i) += (params.beta / params.inner.sigma[i]) * (omega_next.row(i) - cs.omega.row(i));
  st.offset += params.beta * (omega_next - cs.omega);
  cs.theta_prev = std::move(theta_k);
  cs.omega = std::move(omega_next);
  ++cs.outer_iter;
  return false;
}

Trace run_accelerated(const Problem& problem, const GossipMatrix& gossip, const CatalystConfig& config,
                      const Budget& budget, const CostModel& cost, const Reference* ref,
                      std::uint64_t seed, const RunOptions& options) {
  CatalystParams cp = make_catalyst_params(problem, gossip, config);
  Trace trace;
  trace.algorithm = "dvr_accel";
  trace.seed = seed;
  trace.catalyst_columns = true;
  trace.params_digest = cp.inner.digest();
  trace.meta["params"] = cp.to_json();
  trace.meta["tau"] = cost.tau;
  Budget b = budget;
  // the outer loop enforces t_outer itself
  if (b.empty() && cp.t_outer > 0) b.max_iterations = std::numeric_limits<std::int64_t>::max();
  Recorder rec(problem, ref, b, options.trace, trace);
  rec.beta = cp.beta;
  rec.q = cp.q;
  CatalystState cs = outer_init(problem, cp, nullptr, seed, options.state);
  cs.inner.clock.comm_cost = cost.tau * gossip.effective_degree();
  if (rec.observe(cs.inner.clock, cs.inner.theta, false, true)) return trace;
  while (cp.t_outer == 0 || cs.outer_iter < cp.t_outer) {
    rec.outer_iter = cs.outer_iter;
    if (outer_step(cs, cp, problem, gossip, &rec, options)) return trace;
    if (ref) {
      Vec mean = cs.theta_prev.colwise().mean().transpose();
      trace.outer_subopt.push_back(problem.objective(mean) - ref->f_star);
    }
  }
  rec.outer_iter = cs.outer_iter;
  rec.observe(cs.inner.clock, cs.inner.theta, false, true);
  return trace;
}

}  // namespace dvr
