#pragma once

#include "dvr/dvr.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dvr {

class InfeasibleDualError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Explicit augmented system on a small instance.
//
// Nodes: the n computing nodes first, then virtual node (i,j) at n + i*m + j.
// Edges: the E communication edges in graph order, then virtual edge (i,j) at
// E + i*m + j. A communication edge (k,l) maps z to +z at k and -z at l; a
// virtual edge maps z to -mu_ij P_ij z at i and +mu_ij P_ij z at (i,j).
struct AugmentedSystem {
  int n = 0, m = 0, d = 0, E = 0;
  double alpha = 0.0;
  double mu_comm = 1.0;  // one column per undirected edge
  Vec mu_comp;           // n*m, mu_ij^2 = alpha * L_ij
  std::vector<Eigen::MatrixXd> P;  // n*m projectors x x^T / |x|^2
  Eigen::MatrixXd A;        // n(1+m)d x (E+nm)d
  Vec sigma_diag;           // 1/sigma_i on computing nodes, 0 on virtual ones
  Eigen::MatrixXd Q;        // A^T Sigma A
  Eigen::MatrixXd W;        // n x n block of A A^T on computing nodes (per coordinate)
  Eigen::MatrixXd W_pinv;
  Problem problem;

  Eigen::Index comm_dim() const { return static_cast<Eigen::Index>(E) * d; }
  Eigen::Index comp_dim() const { return static_cast<Eigen::Index>(n) * m * d; }
  Eigen::Index dim() const { return comm_dim() + comp_dim(); }
  Eigen::Index node_dim() const { return static_cast<Eigen::Index>(n) * (1 + m) * d; }
  Eigen::Index edge_col(int i, int j) const { return comm_dim() + (static_cast<Eigen::Index>(i) * m + j) * d; }
};

// Throws ValidationError when n(1+m)d > 5000 or shapes disagree, and
// ConstructionError when a structural invariant fails.
AugmentedSystem build_augmented(const Problem& problem, const Graph& graph, double alpha);

struct DualPoint {
  Vec x;  // E*d
  Vec y;  // n*m*d, block (i,j) at (i*m + j)*d
};

// Dual point together with primal representatives z_ij of the virtual
// multipliers, y_ij = grad f_ij(z_ij) / mu_ij.
struct DualIterate {
  DualPoint lambda;
  Mat z;  // (n*m) x d
};

Vec stack(const DualPoint& lambda);
DualPoint unstack(const AugmentedSystem& aug, const Vec& v);

Vec apply_A(const AugmentedSystem& aug, const DualPoint& lambda);
// theta_i = (A lambda)_i / sigma_i
Mat primal_of(const AugmentedSystem& aug, const DualPoint& lambda);
// Largest deviation of y_ij from range(P_ij).
double range_violation(const AugmentedSystem& aug, const DualPoint& lambda);

// Coordinate t with v = t x_ij. Throws InfeasibleDualError when v leaves the
// line spanned by x_ij, where f_ij* is infinite.
double support_coordinate(const AugmentedSystem& aug, int i, int j, const Vec& v);
// f_ij*(v) = t y_ij + t^2 / (2 w) for v = t x_ij; squared loss only.
double sample_conjugate(const AugmentedSystem& aug, int i, int j, const Vec& v);

// 1/2 q_A(lambda) + sum f_ij*((A lambda)_ij); squared loss only.
double dual_value(const AugmentedSystem& aug, const DualPoint& lambda);
// Communication seminorm term plus the conjugate divergences; squared loss only.
double bregman_divergence(const AugmentedSystem& aug, const DualPoint& a, const DualPoint& b);
// F_D(a) - F_D(b) - <grad F_D(b), a - b>; squared loss only.
double dual_divergence(const AugmentedSystem& aug, const DualPoint& a, const DualPoint& b);

// z0 == nullptr means zero representatives; x starts at 0.
DualIterate dual_start(const AugmentedSystem& aug, const Mat* z0 = nullptr);
// Dual optimum attached to a primal solution theta_star.
DualIterate dual_optimum(const AugmentedSystem& aug, const Vec& theta_star);

// Either all communication edges, or a set of virtual edges with at most one
// per node.
struct Block {
  bool comm = false;
  std::vector<std::pair<int, int>> edges;
};

Block block_of(const StepChoice& choice);
void validate_block(const AugmentedSystem& aug, const Block& block);

// Bregman coordinate step: Euclidean on the communication block, dual-free
// (z-form) on virtual edges. All edges of a block are updated from the same point.
DualIterate bregman_cd_step(const AugmentedSystem& aug, const DualIterate& it, const Block& block,
                            const DvrParams& params);

// Closed-form minimizer of F for squared losses.
Vec squared_loss_optimum(const Problem& problem);

struct EquivalenceReport {
  std::int64_t steps = 0;
  double max_deviation = 0.0;  // max_t max_i |theta_dual - theta_core|
  double max_range_violation = 0.0;
};

// Runs the oracle and the DVR core side by side on one shared draw sequence.
EquivalenceReport equivalence_check(const AugmentedSystem& aug, const GossipMatrix& gossip,
                                    const DvrParams& params, std::uint64_t seed, std::int64_t steps);

struct RelativeConstants {
  double alpha = 0.0;
  double L_rel_comm = 0.0;         // lambda_max(A_comm^T Sigma A_comm)
  double worst_comm_ratio = 0.0;
  Mat L_rel;                       // alpha (1 + L_ij / sigma_i)
  Mat worst_ratio;                 // per virtual direction
  double worst_lower_ratio = 0.0;  // min over sampled pairs of D_F / D_phi
  double exact_lower_ratio = 0.0;  // smallest generalized eigenvalue of (hess F_D, hess phi)
  std::int64_t probes = 0;

  bool upper_ok(double rel_tol = 1e-6) const;
  bool lower_ok(double rel_tol = 1e-6) const;
};

RelativeConstants relative_constants(const AugmentedSystem& aug, std::int64_t probes = 10000,
                                     std::uint64_t seed = 1);

struct LyapunovReport {
  bool hypothesis_ok = true;
  std::string violation;
  double bound = 1.0;  // 1 - eta alpha / 2
  double max_ratio = 0.0;
  std::vector<double> ratios;
  double initial_value = 0.0;
  double value_at_optimum = 0.0;
  std::int64_t enumerated_blocks = 0;

  bool passed(double slack = 1e-9) const { return hypothesis_ok && max_ratio <= bound + slack; }
};

// Exact expectation of the Lyapunov function after one step, enumerating the
// communication block and every per-node tuple of virtual edges.
double expected_lyapunov(const AugmentedSystem& aug, const DvrParams& params, const DualIterate& it,
                         const DualIterate& opt, std::int64_t* blocks = nullptr);
double lyapunov_value(const AugmentedSystem& aug, const DvrParams& params, const DualPoint& lambda,
                      const DualPoint& opt);

LyapunovReport lyapunov_check(const AugmentedSystem& aug, const DvrParams& params, std::int64_t seeds,
                              std::int64_t steps, std::uint64_t first_seed = 1);

// C0 = (beta + sigma_max + L_max) / (2 (sigma_min + beta)^2)
//      * ((p_min / eta) D_phi(lambda*, lambda_0) + F_D(lambda_0) - F_D(lambda*)),
// evaluated through primal quantities so that any GLM loss works. beta = 0.
double envelope_constant(const Problem& problem, const GossipMatrix& gossip, const DvrParams& params,
                         const Vec& theta_star, const Mat* z0 = nullptr);
// Same constant from an explicit augmented system (squared loss).
double envelope_constant(const AugmentedSystem& aug, const DvrParams& params, const DualPoint& start,
                         const DualPoint& opt);

struct OracleInstance {
  Problem problem;
  Graph graph;
  GossipMatrix gossip;
  DvrParams params;
};

// n=3 ring, m=2, d=3, squared loss.
OracleInstance default_oracle_instance(std::uint64_t data_seed = 11, double sigma = 0.1);

// Runs every check and returns {"checks": [{name, bound, observed, pass}], "pass": bool}.
nlohmann::json run_verification(const OracleInstance& inst, std::uint64_t seed = 1);

}  // namespace dvr
