#pragma once

#include "dvr/common.hpp"

#include <Eigen/Sparse>

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace dvr {

enum class GraphKind { erdos_renyi, grid, ring, path, complete, custom };

std::string to_string(GraphKind kind);
GraphKind parse_graph_kind(const std::string& name);

using Edge = std::pair<int, int>;

struct Graph {
  int n = 0;
  std::vector<Edge> edges;  // k < l, sorted, unique
  GraphKind kind = GraphKind::custom;
};

struct GraphParams {
  double p = 0.0;           // erdos_renyi edge probability
  std::vector<Edge> edges;  // custom
};

// Erdos-Renyi sampling: a mt19937_64 engine seeded with `seed` draws one
// uniform01 per pair (k, l), k < l, in lexicographic order, and keeps the
// edge when the draw is < p. A disconnected draw is retried with seed + 1,
// up to 100 attempts in total.
Graph build_graph(GraphKind kind, int n, const GraphParams& params, std::uint64_t seed);

bool is_connected(int n, const std::vector<Edge>& edges);

// Edge-list text format: "n <count>" header, then one "k l" pair per line.
void write_edge_list(const Graph& g, std::ostream& out);
Graph read_edge_list(std::istream& in);
Graph load_edge_list(const std::string& path);

// Parses "kind:n[:p[:seed]]" (for example "ring:20", "erdos_renyi:20:0.3:7")
// or, if the string names an existing file, an edge-list file.
Graph parse_graph_spec(const std::string& spec);

struct Spectrum {
  Vec eigenvalues;  // ascending
  double lambda_max = 0.0;
  double lambda_min_plus = 0.0;
  double gamma = 0.0;
};

// Dense symmetric eigendecomposition; lambda_min_plus is the smallest
// eigenvalue above 1e-9 * lambda_max.
Spectrum analyze_spectrum(const Eigen::MatrixXd& w);

class GossipMatrix {
 public:
  static GossipMatrix laplacian(const Graph& g);

  int n() const { return n_; }
  double gamma() const { return gamma_; }
  double lambda_max() const { return lambda_max_; }
  double lambda_min_plus() const { return lambda_min_plus_; }
  int effective_degree() const { return degree_; }
  bool is_chebyshev() const { return chebyshev_; }

  // Operator applied to node-major rows: returns W * theta.
  Mat apply(const Mat& theta) const;
  // Materialized n x n operator (analysis only).
  Eigen::MatrixXd dense() const;
  // Eigenvalues of the operator, ascending.
  const Vec& eigenvalues() const { return eigenvalues_; }
  // The underlying plain Laplacian.
  const Eigen::SparseMatrix<double, Eigen::RowMajor>& base() const { return base_; }
  const Graph& graph() const { return graph_; }

  // Scalar polynomial applied to an eigenvalue of the base Laplacian.
  double transform(double lambda) const;

  friend GossipMatrix chebyshev(const GossipMatrix& gossip, int degree);

 private:
  Graph graph_;
  int n_ = 0;
  Eigen::SparseMatrix<double, Eigen::RowMajor> base_;
  bool chebyshev_ = false;
  int degree_ = 1;
  bool degenerate_ = false;  // single nonzero base eigenvalue: operator is W / lambda_max
  double base_lmax_ = 0.0;
  double base_lmin_ = 0.0;
  double t_at_c_ = 1.0;  // T_k((lmax + lmin) / (lmax - lmin))
  double normalizer_ = 1.0;
  Vec eigenvalues_;
  double gamma_ = 0.0;
  double lambda_max_ = 0.0;
  double lambda_min_plus_ = 0.0;

  void set_spectrum(const Vec& eigs);
};

int default_chebyshev_degree(double gamma);

// degree <= 0 selects ceil(gamma^{-1/2}).
GossipMatrix chebyshev(const GossipMatrix& gossip, int degree = 0);

}  // namespace dvr
