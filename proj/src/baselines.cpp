#include "dvr/baselines.hpp"

#include <cmath>
#include <limits>

namespace dvr {

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::extra: return "extra";
    case BaselineKind::extra_catalyst: return "extra_catalyst";
    case BaselineKind::gt_saga: return "gt_saga";
  }
  return "extra";
}

Mat mix(const GossipMatrix& gossip, const Mat& x) {
  if (gossip.n() == 1) return x;
  return x - gossip.apply(x) / gossip.lambda_max();
}

double default_extra_step(const Problem& problem) {
  double smax = problem.sigma_max();
  return 1.0 / (2.0 * (smax + problem.kappa_b * smax));
}

double default_gt_saga_step(const Problem& problem, const GossipMatrix& gossip) {
  double lf = 0.0;
  for (int i = 0; i < problem.n; ++i)
    lf = std::max(lf, problem.sigma[i] + problem.m * problem.L.row(i).maxCoeff());
  double gamma = problem.n == 1 ? 1.0 : gossip.gamma();
  return gamma / (4.0 * lf);
}

namespace {

void check_finite(const Mat& x, std::int64_t iter, const char* what) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    if (!x.row(i).allFinite())
      throw DivergenceError(std::string(what) + ": non-finite parameter at iteration " + std::to_string(iter) +
                            ", node " + std::to_string(i));
}

Mat extra_gradients(const ExtraState& st, const Problem& problem) {
  Mat g = problem.local_gradients(st.x);
  if (st.prox != 0.0) g += st.prox * (st.x - st.shift);
  return g;
}

}  // namespace

ExtraState extra_init(const Problem& problem, const Mat& x0) {
  if (x0.rows() != problem.n || x0.cols() != problem.d) throw ValidationError("x0 must be n x d");
  ExtraState st;
  st.x = x0;
  st.correction = Mat::Zero(problem.n, problem.d);
  st.shift = Mat::Zero(problem.n, problem.d);
  return st;
}

ExtraState extra_from_pair(const Problem& problem, const GossipMatrix& gossip, double eta,
                           const Mat& x0, const Mat& x1) {
  ExtraState st = extra_init(problem, x1);
  // x1 = W~ x0 - eta g(x0) + c0 fixes c0; one accumulation step follows.
  Mat g0 = problem.local_gradients(x0);
  Mat wx0 = mix(gossip, x0);
  Mat carried = x1 - wx0 + eta * g0;
  st.correction = carried - 0.5 * (x0 - wx0);
  return st;
}

void extra_step(ExtraState& st, const Problem& problem, const GossipMatrix& gossip, double eta) {
  Mat wx = mix(gossip, st.x);
  Mat g = extra_gradients(st, problem);
  Mat next = wx - eta * g + st.correction;
  if (problem.n > 1) st.correction -= 0.5 * (st.x - wx);
  st.x = std::move(next);
  st.clock.n_grads += problem.m;
  if (problem.n > 1) ++st.clock.n_comms;
  ++st.clock.iter;
  check_finite(st.x, st.clock.iter, "extra");
}

Trace run_extra(const Problem& problem, const GossipMatrix& gossip, double eta_b, const Budget& budget,
                const CostModel& cost, const Reference* ref, const TraceOptions& trace_options) {
  if (eta_b <= 0.0) eta_b = default_extra_step(problem);
  Trace trace;
  trace.algorithm = "extra";
  trace.meta["eta_b"] = eta_b;
  trace.meta["tau"] = cost.tau;
  Recorder rec(problem, ref, budget, trace_options, trace);
  ExtraState st = extra_init(problem, Mat::Zero(problem.n, problem.d));
  st.clock.comm_cost = cost.tau * gossip.effective_degree();
  if (rec.observe(st.clock, st.x, false, true)) return trace;
  while (true) {
    extra_step(st, problem, gossip, eta_b);
    if (rec.observe(st.clock, st.x, problem.n > 1)) break;
  }
  return trace;
}

Trace run_extra_catalyst(const Problem& problem, const GossipMatrix& gossip, const ExtraCatalystConfig& config,
                         const Budget& budget, const CostModel& cost, const Reference* ref,
                         const TraceOptions& trace_options) {
  const double smin = problem.sigma_min();
  const double smax = problem.sigma_max();
  const double l_batch = smax + problem.kappa_b * smax;
  const double gamma = problem.n == 1 ? 1.0 : gossip.gamma();
  double beta = config.beta;
  if (beta < 0.0) beta = gamma < 1.0 ? std::max((gamma * l_batch - smin) / (1.0 - gamma), 0.0) : 0.0;
  const double q = smin / (smin + beta);
  const double extrapolation = (1.0 - std::sqrt(q)) / (1.0 + std::sqrt(q));
  const std::int64_t k_inner =
      config.k_inner > 0 ? config.k_inner : static_cast<std::int64_t>(std::ceil(1.0 / gamma));
  const double eta = 1.0 / (2.0 * (l_batch + beta));

  Trace trace;
  trace.algorithm = "extra_catalyst";
  trace.catalyst_columns = true;
  trace.meta["beta"] = beta;
  trace.meta["q"] = q;
  trace.meta["k_inner"] = k_inner;
  trace.meta["eta_b"] = eta;
  trace.meta["tau"] = cost.tau;
  Budget b = budget;
  if (b.empty() && config.t_outer > 0) b.max_iterations = std::numeric_limits<std::int64_t>::max();
  Recorder rec(problem, ref, b, trace_options, trace);
  rec.beta = beta;
  rec.q = q;

  ExtraState st = extra_init(problem, Mat::Zero(problem.n, problem.d));
  st.prox = beta;
  st.shift = st.x;
  st.clock.comm_cost = cost.tau * gossip.effective_degree();
  Mat prev = st.x;
  if (rec.observe(st.clock, st.x, false, true)) return trace;
  std::int64_t outer = 0;
  while (config.t_outer == 0 || outer < config.t_outer) {
    rec.outer_iter = outer;
    for (std::int64_t k = 0; k < k_inner; ++k) {
      extra_step(st, problem, gossip, eta);
      if (rec.observe(st.clock, st.x, problem.n > 1)) return trace;
    }
    Mat next_center = st.x + extrapolation * (st.x - prev);
    prev = st.x;
    st.shift = std::move(next_center);
    ++outer;
    if (ref) trace.outer_subopt.push_back(problem.objective(prev.colwise().mean().transpose()) - ref->f_star);
  }
  rec.outer_iter = outer;
  rec.observe(st.clock, st.x, false, true);
  return trace;
}

GtSagaState gt_saga_init(const Problem& problem, const Mat& x0, const Mat& table_points, std::uint64_t seed) {
  const int n = problem.n, m = problem.m, d = problem.d;
  if (x0.rows() != n || x0.cols() != d) throw ValidationError("x0 must be n x d");
  if (table_points.rows() != n * m || table_points.cols() != d) throw ValidationError("table points must be (n*m) x d");
  GtSagaState st;
  st.rng.seed(seed);
  st.x = x0;
  st.table.resize(n * m);
  st.table_sum = Mat::Zero(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      auto r = problem.row(i, j);
      st.table[r] = problem.grad_coef(i, j, problem.preactivation(i, j, table_points.row(r).transpose()));
      Eigen::Ref<Vec> acc = st.table_sum.row(i).transpose();
      problem.add_feature(i, j, st.table[r], acc);
    }
  st.v.resize(n, d);
  for (int i = 0; i < n; ++i) st.v.row(i) = problem.sigma[i] * st.x.row(i) + st.table_sum.row(i);
  st.y = st.v;
  return st;
}

GtSagaState gt_saga_init(const Problem& problem, const Mat& x0, std::uint64_t seed) {
  Mat pts(problem.n * problem.m, problem.d);
  for (int i = 0; i < problem.n; ++i)
    for (int j = 0; j < problem.m; ++j) pts.row(problem.row(i, j)) = x0.row(i);
  return gt_saga_init(problem, x0, pts, seed);
}

void gt_saga_step(GtSagaState& st, const Problem& problem, const GossipMatrix& gossip, double eta) {
  const int n = problem.n, m = problem.m;
  st.x = mix(gossip, st.x) - eta * st.y;
  Mat v_new(n, problem.d);
  for (int i = 0; i < n; ++i) {
    int j = static_cast<int>(uniform01(st.rng) * m);
    if (j >= m) j = m - 1;
    auto r = problem.row(i, j);
    double g = problem.grad_coef(i, j, problem.preactivation(i, j, st.x.row(i).transpose()));
    double delta = g - st.table[r];
    Eigen::Ref<Vec> vi = v_new.row(i).transpose();
    vi = problem.sigma[i] * st.x.row(i).transpose() + st.table_sum.row(i).transpose();
    problem.add_feature(i, j, m * delta, vi);
    Eigen::Ref<Vec> ts = st.table_sum.row(i).transpose();
    problem.add_feature(i, j, delta, ts);
    st.table[r] = g;
  }
  st.y = mix(gossip, st.y) + v_new - st.v;
  st.v = std::move(v_new);
  st.clock.n_grads += 1;
  if (n > 1) st.clock.n_comms += 2;
  ++st.clock.iter;
  check_finite(st.x, st.clock.iter, "gt_saga");
}

Trace run_gt_saga(const Problem& problem, const GossipMatrix& gossip, double eta_b, const Budget& budget,
                  const CostModel& cost, const Reference* ref, std::uint64_t seed,
                  const TraceOptions& trace_options) {
  if (eta_b <= 0.0) eta_b = default_gt_saga_step(problem, gossip);
  Trace trace;
  trace.algorithm = "gt_saga";
  trace.seed = seed;
  trace.meta["eta_b"] = eta_b;
  trace.meta["tau"] = cost.tau;
  Recorder rec(problem, ref, budget, trace_options, trace);
  GtSagaState st = gt_saga_init(problem, Mat::Zero(problem.n, problem.d), seed);
  st.clock.comm_cost = cost.tau * gossip.effective_degree();
  if (rec.observe(st.clock, st.x, false, true)) return trace;
  while (true) {
    gt_saga_step(st, problem, gossip, eta_b);
    if (rec.observe(st.clock, st.x, problem.n > 1)) break;
  }
  return trace;
}

}  // namespace dvr
