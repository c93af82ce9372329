#include "dvr/problem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dvr {

std::string to_string(LossKind kind) {
  return kind == LossKind::logistic ? "logistic" : "squared";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "logistic") return LossKind::logistic;
  if (name == "squared") return LossKind::squared;
  throw ValidationError("unknown loss '" + name + "'");
}

double LossFamily::value(double u, double y) const {
  if (kind == LossKind::squared) return 0.5 * (u - y) * (u - y);
  double t = -y * u;
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

double LossFamily::deriv(double u, double y) const {
  if (kind == LossKind::squared) return u - y;
  double t = y * u;
  // -y * sigmoid(-t), evaluated without overflow
  if (t >= 0) {
    double e = std::exp(-t);
    return -y * e / (1.0 + e);
  }
  return -y / (1.0 + std::exp(t));
}

double LossFamily::second(double u, double y) const {
  if (kind == LossKind::squared) return 1.0;
  double e = std::exp(-std::abs(y * u));
  return e / ((1.0 + e) * (1.0 + e));
}

bool LossFamily::admissible_label(double y) const {
  if (!std::isfinite(y)) return false;
  if (kind == LossKind::logistic) return y == 1.0 || y == -1.0;
  return true;
}

Dataset parse_libsvm(std::istream& in, std::optional<LossKind> loss) {
  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> labels;
  std::string line;
  long lineno = 0;
  Eigen::Index max_idx = 0;
  LossFamily fam;
  if (loss) fam.kind = *loss;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fail = [&](const std::string& what) {
      return ParseError("libsvm line " + std::to_string(lineno) + ": " + what);
    };
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    double label;
    try {
      size_t pos = 0;
      label = std::stod(tok, &pos);
      if (pos != tok.size()) throw fail("malformed label '" + tok + "'");
    } catch (const std::invalid_argument&) {
      throw fail("malformed label '" + tok + "'");
    } catch (const std::out_of_range&) {
      throw fail("label out of range '" + tok + "'");
    }
    if (loss && !fam.admissible_label(label))
      throw fail("label " + tok + " is not admissible for " + to_string(*loss) + " loss");
    const Eigen::Index r = static_cast<Eigen::Index>(labels.size());
    Eigen::Index prev = 0;
    bool nonzero = false;
    while (ls >> tok) {
      auto colon = tok.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == tok.size())
        throw fail("malformed feature '" + tok + "'");
      long long idx;
      double val;
      try {
        size_t p1 = 0, p2 = 0;
        idx = std::stoll(tok.substr(0, colon), &p1);
        val = std::stod(tok.substr(colon + 1), &p2);
        if (p1 != colon || p2 != tok.size() - colon - 1) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw fail("malformed feature '" + tok + "'");
      }
      if (idx < 1) throw fail("feature index must be >= 1, got " + std::to_string(idx));
      if (idx <= prev) throw fail("feature indices must be strictly increasing");
      if (!std::isfinite(val)) throw fail("non-finite feature value");
      prev = idx;
      max_idx = std::max<Eigen::Index>(max_idx, idx);
      if (val != 0.0) {
        trips.emplace_back(r, idx - 1, val);
        nonzero = true;
      }
    }
    if (!nonzero) throw fail("all-zero feature row");
    labels.push_back(label);
  }
  if (labels.empty()) throw ParseError("libsvm input contains no samples");
  Dataset ds;
  ds.X.resize(static_cast<Eigen::Index>(labels.size()), max_idx);
  ds.X.setFromTriplets(trips.begin(), trips.end());
  ds.X.makeCompressed();
  ds.y = Eigen::Map<Vec>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return ds;
}

Dataset load_libsvm(const std::string& path, std::optional<LossKind> loss) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open libsvm file '" + path + "'");
  return parse_libsvm(in, loss);
}

Dataset synth_dataset(Eigen::Index n_samples, Eigen::Index dim, LossKind kind,
                      std::uint64_t seed, double scale, double decay) {
  if (n_samples < 1 || dim < 1) throw ValidationError("synth_dataset needs N, d >= 1");
  if (!(scale > 0.0)) throw ValidationError("synth_dataset needs scale > 0");
  if (!(decay > 0.0 && decay <= 1.0)) throw ValidationError("synth_dataset needs decay in (0,1]");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd dense(n_samples, dim);
  for (Eigen::Index r = 0; r < n_samples; ++r) {
    double sd = 1.0;
    for (Eigen::Index k = 0; k < dim; ++k) {
      dense(r, k) = gauss(rng) * sd;
      sd *= decay;
    }
    double nrm = dense.row(r).norm();
    while (nrm == 0.0) {
      for (Eigen::Index k = 0; k < dim; ++k) dense(r, k) = gauss(rng);
      nrm = dense.row(r).norm();
    }
    dense.row(r) *= scale / nrm;
    // rounding can push the norm one ulp above scale
    if (dense.row(r).norm() > scale) dense.row(r) *= std::nextafter(1.0, 0.0);
  }
  Vec planted(dim);
  for (Eigen::Index k = 0; k < dim; ++k) planted[k] = gauss(rng);
  Dataset ds;
  ds.X = dense.sparseView();
  ds.X.makeCompressed();
  ds.y = dense * planted;
  if (kind == LossKind::logistic)
    for (Eigen::Index r = 0; r < n_samples; ++r) ds.y[r] = ds.y[r] >= 0.0 ? 1.0 : -1.0;
  return ds;
}

double Problem::preactivation(int i, int j, const Eigen::Ref<const Vec>& theta) const {
  double u = 0.0;
  for (SpMat::InnerIterator it(X, row(i, j)); it; ++it) u += it.value() * theta[it.col()];
  return u;
}

double Problem::grad_coef(int i, int j, double u) const {
  return weight * loss.deriv(u, y[row(i, j)]);
}

double Problem::sample_value(int i, int j, const Eigen::Ref<const Vec>& theta) const {
  return weight * loss.value(preactivation(i, j, theta), y[row(i, j)]);
}

void Problem::add_feature(int i, int j, double c, Eigen::Ref<Vec> theta) const {
  for (SpMat::InnerIterator it(X, row(i, j)); it; ++it) theta[it.col()] += c * it.value();
}

Vec Problem::stoch_gradient(int i, int j, const Eigen::Ref<const Vec>& theta) const {
  if (i < 0 || i >= n || j < 0 || j >= m)
    throw ValidationError("sample (" + std::to_string(i) + "," + std::to_string(j) + ") out of range");
  Vec g = Vec::Zero(d);
  add_feature(i, j, grad_coef(i, j, preactivation(i, j, theta)), g);
  return g;
}

Vec Problem::full_gradient(int i, const Eigen::Ref<const Vec>& theta) const {
  if (i < 0 || i >= n) throw ValidationError("node " + std::to_string(i) + " out of range");
  Vec g = sigma[i] * theta;
  for (int j = 0; j < m; ++j) add_feature(i, j, grad_coef(i, j, preactivation(i, j, theta)), g);
  return g;
}

double Problem::local_value(int i, const Eigen::Ref<const Vec>& theta) const {
  double v = 0.5 * sigma[i] * theta.squaredNorm();
  for (int j = 0; j < m; ++j) v += sample_value(i, j, theta);
  return v;
}

double Problem::objective(const Eigen::Ref<const Vec>& theta) const {
  double v = 0.0;
  for (int i = 0; i < n; ++i) v += local_value(i, theta);
  return v;
}

Vec Problem::gradient(const Eigen::Ref<const Vec>& theta) const {
  Vec g = Vec::Zero(d);
  for (int i = 0; i < n; ++i) g += full_gradient(i, theta);
  return g;
}

Mat Problem::local_gradients(const Mat& theta) const {
  Mat g(n, d);
  for (int i = 0; i < n; ++i) g.row(i) = full_gradient(i, theta.row(i).transpose()).transpose();
  return g;
}

double Problem::power_lambda_max(int i, const Vec& coefs, bool* converged) const {
  Rng rng(0x5eed + static_cast<std::uint64_t>(i));
  Vec v(d);
  for (int k = 0; k < d; ++k) v[k] = uniform01(rng) - 0.5;
  v.normalize();
  double est = 0.0;
  bool ok = false;
  for (int it = 0; it < 200; ++it) {
    Vec mv = Vec::Zero(d);
    for (int j = 0; j < m; ++j) add_feature(i, j, coefs[j] * preactivation(i, j, v), mv);
    double next = v.dot(mv);
    double nrm = mv.norm();
    if (nrm == 0.0) {
      est = 0.0;
      ok = true;
      break;
    }
    v = mv / nrm;
    if (it > 0 && std::abs(next - est) < 1e-10 * std::abs(next)) {
      est = next;
      ok = true;
      break;
    }
    est = next;
  }
  if (converged) *converged = ok;
  return est;
}

nlohmann::json Problem::summary() const {
  nlohmann::json j;
  j["n"] = n;
  j["m"] = m;
  j["d"] = d;
  j["loss"] = to_string(loss.kind);
  j["weight"] = weight;
  j["sigma"] = std::vector<double>(sigma.data(), sigma.data() + sigma.size());
  j["kappa_s"] = kappa_s;
  j["kappa_b"] = kappa_b;
  j["D_M"] = std::vector<double>(D_M.data(), D_M.data() + D_M.size());
  j["truncated"] = truncated;
  j["dropped_samples"] = dropped;
  return j;
}

Problem build_problem(const Dataset& data, int n, const Vec& sigma, LossFamily loss,
                      const ProblemOptions& options) {
  if (n < 1) throw ValidationError("node count must be >= 1");
  const Eigen::Index N = data.size();
  if (N == 0) throw ValidationError("empty dataset");
  if (sigma.size() != n) throw ValidationError("sigma must have one entry per node");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i]))
      throw ValidationError("sigma must be finite and > 0 at node " + std::to_string(i));
  const Eigen::Index m = N / n;
  if (m < 1) throw ValidationError("fewer samples than nodes");

  Problem p;
  p.n = n;
  p.m = static_cast<int>(m);
  p.d = static_cast<int>(data.dim());
  p.loss = loss;
  p.sigma = sigma;
  p.truncated = (N % n) != 0;
  p.dropped = N - m * n;

  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), 0);
  if (options.shuffle) {
    Rng rng(options.shuffle_seed);
    for (Eigen::Index k = N - 1; k > 0; --k) {
      auto r = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(k + 1));
      std::swap(order[k], order[std::min(r, k)]);
    }
  }
  const Eigen::Index used = m * n;
  std::vector<Eigen::Triplet<double>> trips;
  p.y.resize(used);
  for (Eigen::Index r = 0; r < used; ++r) {
    Eigen::Index src = order[r];
    bool nonzero = false;
    for (SpMat::InnerIterator it(data.X, src); it; ++it)
      if (it.value() != 0.0) {
        trips.emplace_back(r, it.col(), it.value());
        nonzero = true;
      }
    if (!nonzero) throw ValidationError("sample " + std::to_string(src) + " has an all-zero feature row");
    if (!loss.admissible_label(data.y[src]))
      throw ValidationError("sample " + std::to_string(src) + " has a label not admissible for " +
                            to_string(loss.kind) + " loss");
    p.y[r] = data.y[src];
  }
  p.X.resize(used, data.dim());
  p.X.setFromTriplets(trips.begin(), trips.end());
  p.X.makeCompressed();

  p.weight = data.weight > 0.0 ? data.weight : 1.0 / static_cast<double>(m);
  p.row_sq_norm.resize(used);
  for (Eigen::Index r = 0; r < used; ++r) p.row_sq_norm[r] = p.X.row(r).squaredNorm();
  p.L.resize(n, p.m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p.m; ++j)
      p.L(i, j) = loss.curvature_bound() * p.weight * p.row_sq_norm[p.row(i, j)];

  p.kappa_s = 0.0;
  for (int i = 0; i < n; ++i)
    p.kappa_s = std::max(p.kappa_s, (1.0 + p.L.row(i).sum()) / sigma[i]);

  p.D_M.resize(n);
  for (int i = 0; i < n; ++i) {
    if (p.m == 1) {
      p.D_M[i] = sigma[i] + p.L(i, 0);
      continue;
    }
    Vec coefs(p.m);
    for (int j = 0; j < p.m; ++j) coefs[j] = p.L(i, j) / p.row_sq_norm[p.row(i, j)];
    bool ok = false;
    double lam = p.power_lambda_max(i, coefs, &ok);
    p.D_M[i] = sigma[i] + (ok ? std::min(lam, p.L.row(i).sum()) : p.L.row(i).sum());
  }

  switch (options.kappa_b_mode) {
    case KappaBMode::bound:
      p.kappa_b = p.kappa_s;
      break;
    case KappaBMode::manual:
      if (!(options.kappa_b_value > 0.0)) throw ValidationError("manual kappa_b must be > 0");
      p.kappa_b = options.kappa_b_value;
      break;
    case KappaBMode::estimate: {
      p.kappa_b = 0.0;
      for (int i = 0; i < n; ++i) {
        Vec coefs(p.m);
        for (int j = 0; j < p.m; ++j) coefs[j] = p.weight * loss.second(0.0, p.y[p.row(i, j)]);
        bool ok = false;
        double lam = p.power_lambda_max(i, coefs, &ok);
        if (!ok) lam = (coefs.array() * p.row_sq_norm.segment(p.row(i, 0), p.m).array()).sum();
        p.kappa_b = std::max(p.kappa_b, (sigma[i] + lam) / sigma[i]);
      }
      break;
    }
  }
  return p;
}

Problem build_problem(const Dataset& data, int n, double sigma, LossFamily loss,
                      const ProblemOptions& options) {
  return build_problem(data, n, Vec::Constant(n, sigma), loss, options);
}

}  // namespace dvr
