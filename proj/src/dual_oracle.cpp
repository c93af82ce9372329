#include "dvr/dual_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dvr {

namespace {

Vec dense_row(const Problem& p, int i, int j) {
  Vec x = Vec::Zero(p.d);
  p.add_feature(i, j, 1.0, x);
  return x;
}

void require_squared(const AugmentedSystem& aug, const char* what) {
  if (aug.problem.loss.kind != LossKind::squared)
    throw ValidationError(std::string(what) + " needs the squared loss (closed-form conjugate)");
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
  const Vec& ev = es.eigenvalues();
  double cut = 1e-9 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Vec inv = ev.unaryExpr([cut](double v) { return std::abs(v) > cut ? 1.0 / v : 0.0; });
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// x~ = A_comm x as an n x d matrix.
Mat node_sums(const AugmentedSystem& aug, const Vec& x) {
  Mat out = Mat::Zero(aug.n, aug.d);
  const Eigen::Index cd = aug.comm_dim();
  Vec full = aug.A.topLeftCorner(static_cast<Eigen::Index>(aug.n) * aug.d, cd) * x;
  for (int i = 0; i < aug.n; ++i) out.row(i) = full.segment(static_cast<Eigen::Index>(i) * aug.d, aug.d).transpose();
  return out;
}

double seminorm_w(const Eigen::MatrixXd& w_pinv, const Mat& dx) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < dx.cols(); ++c) s += dx.col(c).dot(w_pinv * dx.col(c));
  return 0.5 * s;
}

Vec virtual_image(const AugmentedSystem& aug, const Vec& a_lambda, int i, int j) {
  const Eigen::Index node = static_cast<Eigen::Index>(aug.n) + static_cast<Eigen::Index>(i) * aug.m + j;
  return a_lambda.segment(node * aug.d, aug.d);
}

}  // namespace

AugmentedSystem build_augmented(const Problem& problem, const Graph& graph, double alpha) {
  if (graph.n != problem.n) throw ValidationError("graph and problem disagree on n");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be positive");
  const long long size = static_cast<long long>(problem.n) * (1 + problem.m) * problem.d;
  if (size > 5000)
    throw ValidationError("augmented system too large: n(1+m)d = " + std::to_string(size) + " > 5000");
  AugmentedSystem aug;
  aug.problem = problem;
  aug.n = problem.n;
  aug.m = problem.m;
  aug.d = problem.d;
  aug.E = static_cast<int>(graph.edges.size());
  aug.alpha = alpha;
  const int n = aug.n, m = aug.m, d = aug.d;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  aug.A = Eigen::MatrixXd::Zero(aug.node_dim(), aug.dim());
  for (int e = 0; e < aug.E; ++e) {
    auto [k, l] = graph.edges[static_cast<std::size_t>(e)];
    aug.A.block(static_cast<Eigen::Index>(k) * d, static_cast<Eigen::Index>(e) * d, d, d) = aug.mu_comm * I;
    aug.A.block(static_cast<Eigen::Index>(l) * d, static_cast<Eigen::Index>(e) * d, d, d) = -aug.mu_comm * I;
  }
  aug.mu_comp.resize(n * m);
  aug.P.resize(static_cast<std::size_t>(n * m));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const int r = i * m + j;
      Vec x = dense_row(problem, i, j);
      double nx = x.squaredNorm();
      if (nx == 0.0) throw ValidationError("sample (" + std::to_string(i) + "," + std::to_string(j) + ") is zero");
      Eigen::MatrixXd P = x * x.transpose() / nx;
      double mu = std::sqrt(alpha * problem.L(i, j));
      aug.mu_comp[r] = mu;
      const Eigen::Index col = aug.edge_col(i, j);
      aug.A.block(static_cast<Eigen::Index>(i) * d, col, d, d) = -mu * P;
      aug.A.block((static_cast<Eigen::Index>(n) + r) * d, col, d, d) = mu * P;
      aug.P[static_cast<std::size_t>(r)] = std::move(P);
    }
  aug.sigma_diag = Vec::Zero(aug.node_dim());
  for (int i = 0; i < n; ++i) aug.sigma_diag.segment(static_cast<Eigen::Index>(i) * d, d).setConstant(1.0 / problem.sigma[i]);
  aug.Q = aug.A.transpose() * aug.sigma_diag.asDiagonal() * aug.A;

  // Communication block of A P_comm A^T against the graph Laplacian.
  const Eigen::Index nd = static_cast<Eigen::Index>(n) * d;
  Eigen::MatrixXd ac = aug.A.topLeftCorner(nd, aug.comm_dim());
  Eigen::MatrixXd block = ac * ac.transpose();
  Eigen::MatrixXd lap = GossipMatrix::laplacian(graph).base().toDense();
  Eigen::MatrixXd expected(nd, nd);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l) expected.block(static_cast<Eigen::Index>(k) * d, static_cast<Eigen::Index>(l) * d, d, d) = lap(k, l) * I;
  double err = (block - expected).cwiseAbs().maxCoeff();
  if (nd > 0 && err > 1e-10)
    throw ConstructionError("communication block of A A^T differs from W by " + std::to_string(err));
  for (const auto& P : aug.P) {
    if ((P * P - P).cwiseAbs().maxCoeff() > 1e-12 || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ConstructionError("virtual projector is not an orthogonal projector");
  }
  aug.W = lap;
  aug.W_pinv = pseudo_inverse(lap);
  return aug;
}

Vec stack(const DualPoint& lambda) {
  Vec v(lambda.x.size() + lambda.y.size());
  v << lambda.x, lambda.y;
  return v;
}

DualPoint unstack(const AugmentedSystem& aug, const Vec& v) {
  if (v.size() != aug.dim()) throw ValidationError("dual vector has the wrong size");
  DualPoint p;
  p.x = v.head(aug.comm_dim());
  p.y = v.tail(aug.comp_dim());
  return p;
}

Vec apply_A(const AugmentedSystem& aug, const DualPoint& lambda) {
  if (lambda.x.size() != aug.comm_dim() || lambda.y.size() != aug.comp_dim())
    throw ValidationError("dual point has the wrong shape");
  return aug.A * stack(lambda);
}

Mat primal_of(const AugmentedSystem& aug, const DualPoint& lambda) {
  Vec v = apply_A(aug, lambda);
  Mat theta(aug.n, aug.d);
  for (int i = 0; i < aug.n; ++i)
    theta.row(i) = (v.segment(static_cast<Eigen::Index>(i) * aug.d, aug.d) / aug.problem.sigma[i]).transpose();
  return theta;
}

double range_violation(const AugmentedSystem& aug, const DualPoint& lambda) {
  double worst = 0.0;
  for (int r = 0; r < aug.n * aug.m; ++r) {
    Vec y = lambda.y.segment(static_cast<Eigen::Index>(r) * aug.d, aug.d);
    worst = std::max(worst, (y - aug.P[static_cast<std::size_t>(r)] * y).norm());
  }
  return worst;
}

double support_coordinate(const AugmentedSystem& aug, int i, int j, const Vec& v) {
  Vec x = dense_row(aug.problem, i, j);
  double t = v.dot(x) / x.squaredNorm();
  double off = (v - t * x).norm();
  if (off > 1e-9 * (1.0 + v.norm()))
    throw InfeasibleDualError("dual argument of sample (" + std::to_string(i) + "," + std::to_string(j) +
                              ") is off the support line by " + std::to_string(off));
  return t;
}

double sample_conjugate(const AugmentedSystem& aug, int i, int j, const Vec& v) {
  require_squared(aug, "the sample conjugate");
  double t = support_coordinate(aug, i, j, v);
  return t * aug.problem.y[aug.problem.row(i, j)] + t * t / (2.0 * aug.problem.weight);
}

double dual_value(const AugmentedSystem& aug, const DualPoint& lambda) {
  require_squared(aug, "dual_value");
  Vec v = apply_A(aug, lambda);
  double q = v.dot(aug.sigma_diag.asDiagonal() * v);
  double s = 0.5 * q;
  for (int i = 0; i < aug.n; ++i)
    for (int j = 0; j < aug.m; ++j) s += sample_conjugate(aug, i, j, virtual_image(aug, v, i, j));
  return s;
}

double bregman_divergence(const AugmentedSystem& aug, const DualPoint& a, const DualPoint& b) {
  require_squared(aug, "bregman_divergence");
  double s = seminorm_w(aug.W_pinv, node_sums(aug, a.x - b.x));
  Vec va = apply_A(aug, a), vb = apply_A(aug, b);
  const double w = aug.problem.weight;
  for (int i = 0; i < aug.n; ++i)
    for (int j = 0; j < aug.m; ++j) {
      double dt = support_coordinate(aug, i, j, virtual_image(aug, va, i, j)) -
                  support_coordinate(aug, i, j, virtual_image(aug, vb, i, j));
      s += dt * dt / (2.0 * w * aug.alpha);
    }
  return s;
}

double dual_divergence(const AugmentedSystem& aug, const DualPoint& a, const DualPoint& b) {
  require_squared(aug, "dual_divergence");
  Vec delta = stack(a) - stack(b);
  double s = 0.5 * delta.dot(aug.Q * delta);
  Vec va = apply_A(aug, a), vb = apply_A(aug, b);
  for (int i = 0; i < aug.n; ++i)
    for (int j = 0; j < aug.m; ++j) {
      double dt = support_coordinate(aug, i, j, virtual_image(aug, va, i, j)) -
                  support_coordinate(aug, i, j, virtual_image(aug, vb, i, j));
      s += dt * dt / (2.0 * aug.problem.weight);
    }
  return s;
}

DualIterate dual_start(const AugmentedSystem& aug, const Mat* z0) {
  const Problem& p = aug.problem;
  DualIterate it;
  it.lambda.x = Vec::Zero(aug.comm_dim());
  it.lambda.y = Vec::Zero(aug.comp_dim());
  it.z = z0 ? *z0 : Mat::Zero(p.n * p.m, p.d);
  if (it.z.rows() != p.n * p.m || it.z.cols() != p.d) throw ValidationError("z0 must be (n*m) x d");
  for (int i = 0; i < p.n; ++i)
    for (int j = 0; j < p.m; ++j) {
      auto r = p.row(i, j);
      double g = p.grad_coef(i, j, p.preactivation(i, j, it.z.row(r).transpose()));
      Eigen::Ref<Vec> y = it.lambda.y.segment(r * p.d, p.d);
      p.add_feature(i, j, g / aug.mu_comp[r], y);
    }
  return it;
}

DualIterate dual_optimum(const AugmentedSystem& aug, const Vec& theta_star) {
  const Problem& p = aug.problem;
  Mat z(p.n * p.m, p.d);
  for (Eigen::Index r = 0; r < z.rows(); ++r) z.row(r) = theta_star.transpose();
  DualIterate it = dual_start(aug, &z);
  Mat xt(p.n, p.d);
  // full_gradient already contains sigma_i theta
  for (int i = 0; i < p.n; ++i) xt.row(i) = p.full_gradient(i, theta_star).transpose();
  Mat r = aug.W_pinv * xt;
  const Eigen::Index nd = static_cast<Eigen::Index>(p.n) * p.d;
  Vec rv(nd);
  for (int i = 0; i < p.n; ++i) rv.segment(static_cast<Eigen::Index>(i) * p.d, p.d) = r.row(i).transpose();
  it.lambda.x = aug.A.topLeftCorner(nd, aug.comm_dim()).transpose() * rv;
  return it;
}

Block block_of(const StepChoice& choice) {
  Block b;
  b.comm = choice.comm;
  if (!choice.comm)
    for (std::size_t i = 0; i < choice.samples.size(); ++i) b.edges.emplace_back(static_cast<int>(i), choice.samples[i]);
  return b;
}

void validate_block(const AugmentedSystem& aug, const Block& block) {
  if (block.comm) {
    if (!block.edges.empty()) throw ValidationError("a communication block cannot contain virtual edges");
    if (aug.E == 0) throw ValidationError("no communication edges to update");
    return;
  }
  if (block.edges.empty()) throw ValidationError("empty virtual block");
  std::vector<char> seen(static_cast<std::size_t>(aug.n), 0);
  for (auto [i, j] : block.edges) {
    if (i < 0 || i >= aug.n || j < 0 || j >= aug.m) throw ValidationError("virtual edge out of range");
    if (seen[static_cast<std::size_t>(i)]++)
      throw ValidationError("two virtual edges of node " + std::to_string(i) + " in one block");
  }
}

DualIterate bregman_cd_step(const AugmentedSystem& aug, const DualIterate& it, const Block& block,
                            const DvrParams& params) {
  validate_block(aug, block);
  const Problem& p = aug.problem;
  Vec g = aug.Q * stack(it.lambda);
  DualIterate next = it;
  if (block.comm) {
    next.lambda.x -= (params.eta / params.p_comm) * g.head(aug.comm_dim());
    return next;
  }
  for (auto [i, j] : block.edges) {
    const auto r = p.row(i, j);
    const double mu = aug.mu_comp[r];
    const double c = params.alpha * params.eta / params.p(i, j);
    Vec gy = g.segment(aug.edge_col(i, j), aug.d);
    next.z.row(r) = ((1.0 - c) * it.z.row(r).transpose() - (c / mu) * gy).transpose();
    double coef = p.grad_coef(i, j, p.preactivation(i, j, next.z.row(r).transpose()));
    Eigen::Ref<Vec> y = next.lambda.y.segment(r * aug.d, aug.d);
    y.setZero();
    p.add_feature(i, j, coef / mu, y);
  }
  return next;
}

Vec squared_loss_optimum(const Problem& problem) {
  if (problem.loss.kind != LossKind::squared) throw ValidationError("closed-form optimum needs the squared loss");
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(problem.d, problem.d) * problem.sigma.sum();
  Vec b = Vec::Zero(problem.d);
  for (int i = 0; i < problem.n; ++i)
    for (int j = 0; j < problem.m; ++j) {
      Vec x = dense_row(problem, i, j);
      H += problem.weight * x * x.transpose();
      b += problem.weight * problem.y[problem.row(i, j)] * x;
    }
  return H.ldlt().solve(b);
}

EquivalenceReport equivalence_check(const AugmentedSystem& aug, const GossipMatrix& gossip,
                                    const DvrParams& params, std::uint64_t seed, std::int64_t steps) {
  if (gossip.is_chebyshev()) throw ValidationError("the oracle models the plain Laplacian");
  if (params.beta != 0.0) throw ValidationError("the oracle runs with beta = 0");
  const Problem& p = aug.problem;
  DvrState core = init_state(p, params, nullptr, seed);
  DualIterate it = dual_start(aug);
  EquivalenceReport rep;
  rep.max_deviation = (primal_of(aug, it.lambda) - core.theta).cwiseAbs().maxCoeff();
  for (std::int64_t t = 0; t < steps; ++t) {
    const StepChoice& c = step(core, params, p, gossip);
    it = bregman_cd_step(aug, it, block_of(c), params);
    rep.max_deviation = std::max(rep.max_deviation, (primal_of(aug, it.lambda) - core.theta).cwiseAbs().maxCoeff());
    rep.max_range_violation = std::max(rep.max_range_violation, range_violation(aug, it.lambda));
    ++rep.steps;
  }
  return rep;
}

bool RelativeConstants::upper_ok(double rel_tol) const {
  if (worst_comm_ratio > L_rel_comm * (1.0 + rel_tol)) return false;
  for (Eigen::Index i = 0; i < L_rel.rows(); ++i)
    for (Eigen::Index j = 0; j < L_rel.cols(); ++j)
      if (worst_ratio(i, j) > L_rel(i, j) * (1.0 + rel_tol)) return false;
  return true;
}

bool RelativeConstants::lower_ok(double rel_tol) const { return worst_lower_ratio >= 0.5 * alpha * (1.0 - rel_tol); }

namespace {

DualPoint random_point(const AugmentedSystem& aug, Rng& rng, std::normal_distribution<double>& nd) {
  const Problem& p = aug.problem;
  DualPoint pt;
  pt.x.resize(aug.comm_dim());
  for (Eigen::Index k = 0; k < pt.x.size(); ++k) pt.x[k] = nd(rng);
  pt.y = Vec::Zero(aug.comp_dim());
  for (int i = 0; i < p.n; ++i)
    for (int j = 0; j < p.m; ++j) {
      auto r = p.row(i, j);
      Eigen::Ref<Vec> y = pt.y.segment(r * p.d, p.d);
      p.add_feature(i, j, nd(rng) / aug.mu_comp[r], y);
    }
  return pt;
}

}  // namespace

RelativeConstants relative_constants(const AugmentedSystem& aug, std::int64_t probes, std::uint64_t seed) {
  require_squared(aug, "relative_constants");
  const Problem& p = aug.problem;
  RelativeConstants rc;
  rc.alpha = aug.alpha;
  rc.probes = probes;
  const Eigen::Index cd = aug.comm_dim();
  if (cd > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(aug.Q.topLeftCorner(cd, cd));
    rc.L_rel_comm = es.eigenvalues().maxCoeff();
  }
  rc.L_rel.resize(p.n, p.m);
  for (int i = 0; i < p.n; ++i)
    for (int j = 0; j < p.m; ++j) rc.L_rel(i, j) = aug.alpha * (1.0 + p.L(i, j) / p.sigma[i]);
  rc.worst_ratio = Mat::Zero(p.n, p.m);
  rc.worst_lower_ratio = std::numeric_limits<double>::infinity();

  {
    // Both functions are quadratic for the squared loss; hess phi = A^+ A.
    const Eigen::Index dim = aug.dim();
    Eigen::MatrixXd hf = aug.Q, hphi = Eigen::MatrixXd::Zero(dim, dim);
    const Eigen::Index nn = static_cast<Eigen::Index>(p.n) * p.d;
    Eigen::MatrixXd wp = Eigen::MatrixXd::Zero(nn, nn);
    for (int k = 0; k < p.n; ++k)
      for (int l = 0; l < p.n; ++l)
        wp.block(static_cast<Eigen::Index>(k) * p.d, static_cast<Eigen::Index>(l) * p.d, p.d, p.d).diagonal().setConstant(aug.W_pinv(k, l));
    Eigen::MatrixXd ac = aug.A.topLeftCorner(nn, cd);
    hphi.topLeftCorner(cd, cd) = ac.transpose() * wp * ac;
    for (int i = 0; i < p.n; ++i)
      for (int j = 0; j < p.m; ++j) {
        const Eigen::Index c = aug.edge_col(i, j);
        const auto& P = aug.P[static_cast<std::size_t>(p.row(i, j))];
        hf.block(c, c, p.d, p.d) += aug.alpha * P;
        hphi.block(c, c, p.d, p.d) += P;
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hphi);
    const double cut = 1e-9 * es.eigenvalues().maxCoeff();
    std::vector<Eigen::Index> keep;
    for (Eigen::Index k = 0; k < dim; ++k)
      if (es.eigenvalues()[k] > cut) keep.push_back(k);
    Eigen::MatrixXd U(dim, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k)
      U.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(keep[k]) / std::sqrt(es.eigenvalues()[keep[k]]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gen(U.transpose() * hf * U);
    rc.exact_lower_ratio = gen.eigenvalues().minCoeff();
  }

  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index nn = static_cast<Eigen::Index>(p.n) * p.d;
  for (std::int64_t k = 0; k < probes; ++k) {
    DualPoint base = random_point(aug, rng, nd);
    if (cd > 0) {
      Vec r(nn);
      for (Eigen::Index c = 0; c < nn; ++c) r[c] = nd(rng);
      DualPoint moved = base;
      moved.x += aug.A.topLeftCorner(nn, cd).transpose() * r;
      double dphi = bregman_divergence(aug, moved, base);
      if (dphi > 1e-300) rc.worst_comm_ratio = std::max(rc.worst_comm_ratio, dual_divergence(aug, moved, base) / dphi);
    }
    for (int i = 0; i < p.n; ++i)
      for (int j = 0; j < p.m; ++j) {
        DualPoint moved = base;
        Eigen::Ref<Vec> y = moved.y.segment(p.row(i, j) * p.d, p.d);
        p.add_feature(i, j, nd(rng), y);
        double dphi = bregman_divergence(aug, moved, base);
        if (dphi > 1e-300)
          rc.worst_ratio(i, j) = std::max(rc.worst_ratio(i, j), dual_divergence(aug, moved, base) / dphi);
      }
    DualPoint other = random_point(aug, rng, nd);
    double dphi = bregman_divergence(aug, other, base);
    if (dphi > 1e-300) rc.worst_lower_ratio = std::min(rc.worst_lower_ratio, dual_divergence(aug, other, base) / dphi);
  }
  return rc;
}

double lyapunov_value(const AugmentedSystem& aug, const DvrParams& params, const DualPoint& lambda,
                      const DualPoint& opt) {
  return bregman_divergence(aug, opt, lambda) +
         (params.eta / params.p_min()) * (dual_value(aug, lambda) - dual_value(aug, opt));
}

double expected_lyapunov(const AugmentedSystem& aug, const DvrParams& params, const DualIterate& it,
                         const DualIterate& opt, std::int64_t* blocks) {
  const int n = aug.n, m = aug.m;
  double total = 0.0;
  std::int64_t count = 0;
  if (params.p_comm > 0.0) {
    Block b;
    b.comm = true;
    total += params.p_comm * lyapunov_value(aug, params, bregman_cd_step(aug, it, b, params).lambda, opt.lambda);
    ++count;
  }
  double tuples = std::pow(static_cast<double>(m), n);
  if (tuples > 1e6) throw ValidationError("too many virtual tuples to enumerate");
  const double p_comp = 1.0 - params.p_comm;
  std::vector<int> digit(static_cast<std::size_t>(n), 0);
  Block b;
  b.edges.resize(static_cast<std::size_t>(n));
  while (true) {
    double prob = p_comp;
    for (int i = 0; i < n; ++i) {
      int j = digit[static_cast<std::size_t>(i)];
      b.edges[static_cast<std::size_t>(i)] = {i, j};
      prob *= params.p(i, j) / p_comp;
    }
    total += prob * lyapunov_value(aug, params, bregman_cd_step(aug, it, b, params).lambda, opt.lambda);
    ++count;
    int k = 0;
    while (k < n && ++digit[static_cast<std::size_t>(k)] == m) digit[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  if (blocks) *blocks = count;
  return total;
}

LyapunovReport lyapunov_check(const AugmentedSystem& aug, const DvrParams& params, std::int64_t seeds,
                              std::int64_t steps, std::uint64_t first_seed) {
  require_squared(aug, "lyapunov_check");
  const Problem& p = aug.problem;
  LyapunovReport rep;
  rep.bound = 1.0 - params.eta * params.alpha / 2.0;
  const double tol = 1e-12;
  if (params.p_comm > 0.0 && aug.E > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(aug.Q.topLeftCorner(aug.comm_dim(), aug.comm_dim()));
    double lrel = es.eigenvalues().maxCoeff();
    if (params.eta * lrel > params.p_comm * (1.0 + tol)) {
      rep.hypothesis_ok = false;
      rep.violation = "eta * L_rel_comm = " + std::to_string(params.eta * lrel) + " exceeds p_comm = " +
                      std::to_string(params.p_comm);
    }
  }
  for (int i = 0; i < p.n && rep.hypothesis_ok; ++i)
    for (int j = 0; j < p.m; ++j) {
      double lrel = params.alpha * (1.0 + p.L(i, j) / p.sigma[i]);
      if (params.eta * lrel > params.p(i, j) * (1.0 + tol)) {
        rep.hypothesis_ok = false;
        rep.violation = "eta * L_rel at sample (" + std::to_string(i) + "," + std::to_string(j) + ") exceeds p_ij";
        break;
      }
    }
  if (!rep.hypothesis_ok) return rep;

  DualIterate opt = dual_optimum(aug, squared_loss_optimum(p));
  rep.value_at_optimum = lyapunov_value(aug, params, opt.lambda, opt.lambda);
  DualIterate start = dual_start(aug);
  rep.initial_value = lyapunov_value(aug, params, start.lambda, opt.lambda);
  for (std::int64_t s = 0; s < seeds; ++s) {
    Rng rng(first_seed + static_cast<std::uint64_t>(s));
    DualIterate it = start;
    StepChoice choice;
    for (std::int64_t t = 0; t < steps; ++t) {
      double now = lyapunov_value(aug, params, it.lambda, opt.lambda);
      if (now <= 1e-12 * rep.initial_value) break;
      std::int64_t blocks = 0;
      double ratio = expected_lyapunov(aug, params, it, opt, &blocks) / now;
      rep.enumerated_blocks = blocks;
      rep.ratios.push_back(ratio);
      rep.max_ratio = std::max(rep.max_ratio, ratio);
      draw_step(rng, params, choice);
      it = bregman_cd_step(aug, it, block_of(choice), params);
    }
  }
  return rep;
}

double envelope_constant(const Problem& problem, const GossipMatrix& gossip, const DvrParams& params,
                         const Vec& theta_star, const Mat* z0) {
  const int n = problem.n, m = problem.m, d = problem.d;
  const double smin = params.sigma.minCoeff(), smax = params.sigma.maxCoeff();
  const double lead = (smax + problem.L_max()) / (2.0 * smin * smin);
  Mat z = z0 ? *z0 : Mat::Zero(n * m, d);

  double fd0 = 0.0, fds = 0.0, bregman_f = 0.0;
  Mat xt_star(n, d);
  for (int i = 0; i < n; ++i) {
    Vec acc0 = Vec::Zero(d);
    Vec accs = Vec::Zero(d);
    for (int j = 0; j < m; ++j) {
      auto r = problem.row(i, j);
      const double yl = problem.y[r];
      double u0 = problem.preactivation(i, j, z.row(r).transpose());
      double us = problem.preactivation(i, j, theta_star);
      double g0 = problem.grad_coef(i, j, u0), gs = problem.grad_coef(i, j, us);
      double f0 = problem.weight * problem.loss.value(u0, yl), fs = problem.weight * problem.loss.value(us, yl);
      fd0 += g0 * u0 - f0;
      fds += gs * us - fs;
      bregman_f += f0 - fs - gs * (u0 - us);
      problem.add_feature(i, j, g0, acc0);
      problem.add_feature(i, j, gs, accs);
    }
    const double s = params.sigma[i];
    Vec theta0 = -acc0 / s;  // x~_0 = 0
    fd0 += 0.5 * s * theta0.squaredNorm();
    fds += 0.5 * s * theta_star.squaredNorm();
    xt_star.row(i) = (s * theta_star + accs).transpose();
  }
  double dphi = bregman_f / params.alpha;
  if (n > 1) dphi += seminorm_w(pseudo_inverse(gossip.dense()), xt_star);
  return lead * ((params.p_min() / params.eta) * dphi + (fd0 - fds));
}

double envelope_constant(const AugmentedSystem& aug, const DvrParams& params, const DualPoint& start,
                         const DualPoint& opt) {
  const Problem& p = aug.problem;
  const double smin = p.sigma_min(), smax = p.sigma_max();
  const double lead = (smax + p.L_max()) / (2.0 * smin * smin);
  return lead * ((params.p_min() / params.eta) * bregman_divergence(aug, opt, start) +
                 (dual_value(aug, start) - dual_value(aug, opt)));
}

OracleInstance default_oracle_instance(std::uint64_t data_seed, double sigma) {
  const int n = 3, m = 2, d = 3;
  Dataset data = synth_dataset(n * m, d, LossKind::squared, data_seed);
  OracleInstance inst{build_problem(data, n, sigma, LossFamily{LossKind::squared}),
                      build_graph(GraphKind::ring, n, {}, 0), {}, {}};
  inst.gossip = GossipMatrix::laplacian(inst.graph);
  inst.params = compute_params(inst.problem, inst.gossip);
  return inst;
}

nlohmann::json run_verification(const OracleInstance& inst, std::uint64_t seed) {
  nlohmann::json checks = nlohmann::json::array();
  bool all = true;
  auto add = [&](const std::string& name, double bound, double observed, bool pass) {
    checks.push_back({{"name", name}, {"bound", bound}, {"observed", observed}, {"pass", pass}});
    all = all && pass;
  };
  AugmentedSystem aug = build_augmented(inst.problem, inst.graph, inst.params.alpha);
  {
    const Eigen::Index nd = static_cast<Eigen::Index>(aug.n) * aug.d;
    Eigen::MatrixXd ac = aug.A.topLeftCorner(nd, aug.comm_dim());
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(nd, nd);
    for (int k = 0; k < aug.n; ++k)
      for (int l = 0; l < aug.n; ++l)
        expected.block(static_cast<Eigen::Index>(k) * aug.d, static_cast<Eigen::Index>(l) * aug.d, aug.d, aug.d)
            .diagonal()
            .setConstant(aug.W(k, l));
    double err = (ac * ac.transpose() - expected).cwiseAbs().maxCoeff();
    add("comm_block_equals_W", 1e-10, err, err <= 1e-10);
    double perr = 0.0;
    for (const auto& P : aug.P) perr = std::max(perr, (P * P - P).cwiseAbs().maxCoeff());
    add("projectors_idempotent", 1e-12, perr, perr <= 1e-12);
  }
  Vec theta_star = squared_loss_optimum(inst.problem);
  DualIterate opt = dual_optimum(aug, theta_star);
  {
    double gap = std::abs(inst.problem.objective(theta_star) + dual_value(aug, opt.lambda));
    add("strong_duality_gap", 1e-8, gap, gap <= 1e-8);
  }
  {
    EquivalenceReport eq = equivalence_check(aug, inst.gossip, inst.params, seed, 500);
    add("primal_dual_equivalence", 1e-8, eq.max_deviation, eq.max_deviation <= 1e-8);
    add("y_in_range", 1e-12, eq.max_range_violation, eq.max_range_violation <= 1e-12);
  }
  {
    RelativeConstants rc = relative_constants(aug, 10000, seed);
    add("relative_smoothness_comm", rc.L_rel_comm * (1 + 1e-6), rc.worst_comm_ratio,
        rc.worst_comm_ratio <= rc.L_rel_comm * (1 + 1e-6));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < rc.L_rel.rows(); ++i)
      for (Eigen::Index j = 0; j < rc.L_rel.cols(); ++j) worst = std::max(worst, rc.worst_ratio(i, j) / rc.L_rel(i, j));
    add("relative_smoothness_virtual", 1.0 + 1e-6, worst, worst <= 1.0 + 1e-6);
    add("relative_strong_convexity", 0.5 * rc.alpha * (1 - 1e-6), rc.worst_lower_ratio, rc.lower_ok());
    checks.push_back({{"name", "relative_strong_convexity_exact"},
                      {"bound", 0.5 * rc.alpha},
                      {"observed", rc.exact_lower_ratio},
                      {"pass", rc.exact_lower_ratio >= 0.5 * rc.alpha * (1 - 1e-6)},
                      {"informational", true}});
  }
  {
    LyapunovReport lr = lyapunov_check(aug, inst.params, 1, 50, seed);
    add("lyapunov_contraction", lr.bound + 1e-9, lr.max_ratio, lr.passed());
  }
  {
    double c0 = envelope_constant(inst.problem, inst.gossip, inst.params, theta_star);
    const double rate = 1.0 - inst.params.alpha * inst.params.eta / 2.0;
    const int runs = 20, horizon = 2000;
    std::vector<double> mean_err(horizon + 1, 0.0);
    for (int r = 0; r < runs; ++r) {
      DvrState st = init_state(inst.problem, inst.params, nullptr, seed + static_cast<std::uint64_t>(r));
      for (int t = 0; t <= horizon; ++t) {
        mean_err[static_cast<std::size_t>(t)] +=
            (st.theta.rowwise() - theta_star.transpose()).rowwise().squaredNorm().sum() / runs;
        step(st, inst.params, inst.problem, inst.gossip);
      }
    }
    // compared while the envelope stays above the floating-point floor
    const double floor = 1e-20 * (1.0 + theta_star.squaredNorm());
    double worst = 0.0, env = c0;
    for (int t = 0; t <= horizon && env > floor; ++t, env *= rate)
      worst = std::max(worst, mean_err[static_cast<std::size_t>(t)] / env);
    add("primal_envelope", 1.0, worst, worst <= 1.0);
  }
  return {{"checks", checks}, {"pass", all}};
}

}  // namespace dvr
