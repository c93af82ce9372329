#include "dvr/topology.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dvr {

std::string to_string(GraphKind kind) {
  switch (kind) {
    case GraphKind::erdos_renyi: return "erdos_renyi";
    case GraphKind::grid: return "grid";
    case GraphKind::ring: return "ring";
    case GraphKind::path: return "path";
    case GraphKind::complete: return "complete";
    case GraphKind::custom: return "custom";
  }
  return "custom";
}

GraphKind parse_graph_kind(const std::string& name) {
  if (name == "erdos_renyi") return GraphKind::erdos_renyi;
  if (name == "grid") return GraphKind::grid;
  if (name == "ring") return GraphKind::ring;
  if (name == "path") return GraphKind::path;
  if (name == "complete") return GraphKind::complete;
  if (name == "custom") return GraphKind::custom;
  throw ValidationError("unknown graph kind '" + name + "'");
}

bool is_connected(int n, const std::vector<Edge>& edges) {
  if (n <= 0) return false;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  int components = n;
  for (auto [k, l] : edges) {
    int a = find(k), b = find(l);
    if (a != b) {
      parent[a] = b;
      --components;
    }
  }
  return components == 1;
}

namespace {

std::vector<Edge> normalize_edges(int n, const std::vector<Edge>& in) {
  std::set<Edge> seen;
  for (auto [k, l] : in) {
    if (k < 0 || l < 0 || k >= n || l >= n)
      throw ValidationError("edge (" + std::to_string(k) + "," + std::to_string(l) +
                            ") out of range for n=" + std::to_string(n));
    if (k == l) throw ValidationError("self-loop at node " + std::to_string(k));
    Edge e{std::min(k, l), std::max(k, l)};
    if (!seen.insert(e).second)
      throw ValidationError("duplicate edge (" + std::to_string(e.first) + "," +
                            std::to_string(e.second) + ")");
  }
  return {seen.begin(), seen.end()};
}

std::vector<Edge> sample_erdos_renyi(int n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Edge> edges;
  for (int k = 0; k < n; ++k)
    for (int l = k + 1; l < n; ++l)
      if (uniform01(rng) < p) edges.emplace_back(k, l);
  return edges;
}

}  // namespace

Graph build_graph(GraphKind kind, int n, const GraphParams& params, std::uint64_t seed) {
  if (n < 1) throw ValidationError("graph needs n >= 1, got " + std::to_string(n));
  Graph g;
  g.n = n;
  g.kind = kind;
  std::vector<Edge> edges;
  switch (kind) {
    case GraphKind::complete:
      for (int k = 0; k < n; ++k)
        for (int l = k + 1; l < n; ++l) edges.emplace_back(k, l);
      break;
    case GraphKind::path:
      for (int k = 0; k + 1 < n; ++k) edges.emplace_back(k, k + 1);
      break;
    case GraphKind::ring:
      for (int k = 0; k + 1 < n; ++k) edges.emplace_back(k, k + 1);
      if (n > 2) edges.emplace_back(0, n - 1);
      break;
    case GraphKind::grid: {
      int s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
      if (s * s != n) throw ValidationError("grid needs a perfect square n, got " + std::to_string(n));
      for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
          int k = r * s + c;
          if (c + 1 < s) edges.emplace_back(k, k + 1);
          if (r + 1 < s) edges.emplace_back(k, k + s);
        }
      break;
    }
    case GraphKind::erdos_renyi: {
      if (!(params.p > 0.0 && params.p <= 1.0))
        throw ValidationError("erdos_renyi needs p in (0,1], got " + std::to_string(params.p));
      bool ok = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        edges = sample_erdos_renyi(n, params.p, seed + static_cast<std::uint64_t>(attempt));
        if (is_connected(n, edges)) {
          ok = true;
          break;
        }
      }
      if (!ok)
        throw ConstructionError("erdos_renyi graph (n=" + std::to_string(n) +
                                ", p=" + std::to_string(params.p) +
                                ") still disconnected after 100 draws");
      break;
    }
    case GraphKind::custom:
      edges = params.edges;
      break;
  }
  g.edges = normalize_edges(n, edges);
  if (!is_connected(n, g.edges))
    throw ConstructionError("graph with n=" + std::to_string(n) + " is not connected");
  return g;
}

void write_edge_list(const Graph& g, std::ostream& out) {
  out << "n " << g.n << '\n';
  for (auto [k, l] : g.edges) out << k << ' ' << l << '\n';
}

Graph read_edge_list(std::istream& in) {
  std::string line;
  int lineno = 0;
  int n = -1;
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    if (n < 0) {
      std::string tag;
      if (!(ls >> tag >> n) || tag != "n" || n < 1)
        throw ParseError("edge list line " + std::to_string(lineno) + ": expected header 'n <count>'");
      continue;
    }
    int k, l;
    std::string rest;
    if (!(ls >> k >> l) || (ls >> rest))
      throw ParseError("edge list line " + std::to_string(lineno) + ": expected 'k l'");
    edges.emplace_back(k, l);
  }
  if (n < 0) throw ParseError("edge list is empty");
  GraphParams params;
  params.edges = std::move(edges);
  return build_graph(GraphKind::custom, n, params, 0);
}

Graph load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open edge list '" + path + "'");
  return read_edge_list(in);
}

Graph parse_graph_spec(const std::string& spec) {
  if (std::filesystem::exists(spec)) return load_edge_list(spec);
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() < 2) throw ValidationError("graph spec '" + spec + "' is neither a file nor kind:n");
  GraphKind kind = parse_graph_kind(parts[0]);
  int n = 0;
  GraphParams params;
  std::uint64_t seed = 0;
  try {
    n = std::stoi(parts[1]);
    if (parts.size() > 2) params.p = std::stod(parts[2]);
    if (parts.size() > 3) seed = std::stoull(parts[3]);
  } catch (const std::exception&) {
    throw ValidationError("graph spec '" + spec + "' has a non-numeric field");
  }
  return build_graph(kind, n, params, seed);
}

Spectrum analyze_spectrum(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ConstructionError("eigendecomposition failed");
  Spectrum s;
  s.eigenvalues = es.eigenvalues();
  s.lambda_max = s.eigenvalues.maxCoeff();
  double thr = 1e-9 * s.lambda_max;
  s.lambda_min_plus = s.lambda_max;
  for (double v : s.eigenvalues)
    if (v > thr) s.lambda_min_plus = std::min(s.lambda_min_plus, v);
  s.gamma = s.lambda_max > 0.0 ? s.lambda_min_plus / s.lambda_max : 0.0;
  return s;
}

void GossipMatrix::set_spectrum(const Vec& eigs) {
  eigenvalues_ = eigs;
  std::sort(eigenvalues_.data(), eigenvalues_.data() + eigenvalues_.size());
  lambda_max_ = eigenvalues_.maxCoeff();
  double thr = 1e-9 * lambda_max_;
  lambda_min_plus_ = lambda_max_;
  for (double v : eigenvalues_)
    if (v > thr) lambda_min_plus_ = std::min(lambda_min_plus_, v);
  gamma_ = lambda_max_ > 0.0 ? lambda_min_plus_ / lambda_max_ : 0.0;
}

GossipMatrix GossipMatrix::laplacian(const Graph& g) {
  GossipMatrix gm;
  gm.graph_ = g;
  gm.n_ = g.n;
  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> deg(g.n, 0.0);
  for (auto [k, l] : g.edges) {
    trips.emplace_back(k, l, -1.0);
    trips.emplace_back(l, k, -1.0);
    deg[k] += 1.0;
    deg[l] += 1.0;
  }
  for (int k = 0; k < g.n; ++k)
    if (deg[k] != 0.0) trips.emplace_back(k, k, deg[k]);
  gm.base_.resize(g.n, g.n);
  gm.base_.setFromTriplets(trips.begin(), trips.end());
  if (g.n == 1) {
    gm.eigenvalues_ = Vec::Zero(1);
    return gm;
  }
  Spectrum s = analyze_spectrum(Eigen::MatrixXd(gm.base_));
  gm.set_spectrum(s.eigenvalues);
  gm.base_lmax_ = gm.lambda_max_;
  gm.base_lmin_ = gm.lambda_min_plus_;
  return gm;
}

double GossipMatrix::transform(double lambda) const {
  if (!chebyshev_) return lambda;
  if (degenerate_) return lambda / base_lmax_;
  double x = (base_lmax_ + base_lmin_ - 2.0 * lambda) / (base_lmax_ - base_lmin_);
  // T_k on [-1,1] via cos, outside via cosh.
  double tk;
  if (std::abs(x) <= 1.0) {
    tk = std::cos(degree_ * std::acos(x));
  } else {
    double sgn = (x < 0 && degree_ % 2 == 1) ? -1.0 : 1.0;
    tk = sgn * std::cosh(degree_ * std::acosh(std::abs(x)));
  }
  return (1.0 - tk / t_at_c_) / normalizer_;
}

Mat GossipMatrix::apply(const Mat& theta) const {
  if (!chebyshev_) return base_ * theta;
  if (degenerate_) return (base_ * theta) / base_lmax_;
  // T_k(M) theta by the three-term recurrence, M = c I - s W.
  const double c = (base_lmax_ + base_lmin_) / (base_lmax_ - base_lmin_);
  const double s = 2.0 / (base_lmax_ - base_lmin_);
  Mat t_prev = theta;
  Mat t_cur = c * theta - s * (base_ * theta);
  for (int k = 2; k <= degree_; ++k) {
    Mat t_next = 2.0 * (c * t_cur - s * (base_ * t_cur)) - t_prev;
    t_prev = std::move(t_cur);
    t_cur = std::move(t_next);
  }
  return (theta - t_cur / t_at_c_) / normalizer_;
}

Eigen::MatrixXd GossipMatrix::dense() const {
  Mat id = Mat::Identity(n_, n_);
  Eigen::MatrixXd out = apply(id);
  // Symmetrize rounding noise from the recurrence.
  return 0.5 * (out + out.transpose());
}

int default_chebyshev_degree(double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("spectral gap must be positive");
  return static_cast<int>(std::ceil(1.0 / std::sqrt(gamma) - 1e-12));
}

GossipMatrix chebyshev(const GossipMatrix& gossip, int degree) {
  if (gossip.is_chebyshev()) throw ValidationError("chebyshev expects a plain gossip matrix");
  if (gossip.n() < 2) throw ValidationError("chebyshev needs at least two nodes");
  if (degree == 0) degree = default_chebyshev_degree(gossip.gamma());
  if (degree < 1) throw ValidationError("chebyshev degree must be >= 1, got " + std::to_string(degree));
  GossipMatrix out = gossip;
  out.chebyshev_ = true;
  out.degree_ = degree;
  const double lmax = gossip.lambda_max(), lmin = gossip.lambda_min_plus();
  if (lmax - lmin <= 1e-12 * lmax) {
    out.degenerate_ = true;
  } else {
    double c = (lmax + lmin) / (lmax - lmin);
    out.t_at_c_ = std::cosh(degree * std::acosh(c));
    out.normalizer_ = 1.0 + 1.0 / out.t_at_c_;
  }
  Vec eigs(gossip.eigenvalues().size());
  for (Eigen::Index k = 0; k < eigs.size(); ++k) {
    double lam = gossip.eigenvalues()[k];
    eigs[k] = lam > 1e-9 * lmax ? out.transform(lam) : 0.0;
  }
  out.set_spectrum(eigs);
  return out;
}

}  // namespace dvr
