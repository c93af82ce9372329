#pragma once

#include "dvr/common.hpp"
#include "dvr/problem.hpp"
#include "dvr/topology.hpp"
#include "dvr/trace.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace dvr {

struct DvrParams {
  double alpha = 0.0;
  double eta = 0.0;
  double p_comm = 0.0;
  Mat p;    // n x m, row sums 1 - p_comm
  Mat cdf;  // per-node cumulative of p_ij / (1 - p_comm)
  Mat sample_weight;  // 1 + L_ij / sigma_i, so that L_rel^ij = alpha * sample_weight
  double kappa_comm = 0.0;
  double kappa_s = 0.0;  // with sigma_i + beta
  double gamma = 0.0;
  double lambda_max_sigma_w = 0.0;  // lambda_max(A_comm^T Sigma A_comm)
  double lambda_min_dm_w = 0.0;     // lambda_min^+(A_comm^T D_M^{-1} A_comm)
  Vec sigma;                        // sigma_i + beta
  Vec D_M;                          // D_M + beta
  double beta = 0.0;
  bool uses_chebyshev = false;
  int degree = 1;

  double p_min() const;
  // Throws ConstructionError when a parameter invariant fails.
  void validate() const;
  nlohmann::json to_json() const;
  std::string digest() const;
};

struct ParamOverrides {
  std::optional<double> p_comm;
  double beta = 0.0;
};

DvrParams compute_params(const Problem& problem, const GossipMatrix& gossip,
                         const ParamOverrides& overrides = {});

struct StepChoice {
  bool comm = false;
  std::vector<int> samples;  // one sample index per node on computation rounds
};

// One shared uniform decides communication (u < p_comm); otherwise each node
// draws its sample from its own row of the cdf, in node order.
void draw_step(Rng& rng, const DvrParams& params, StepChoice& out);

struct StateOptions {
  bool shadow = false;  // maintain x_tilde for the theta identity
  bool store_z = true;  // keep the virtual parameters themselves, not only x^T z
};

struct DvrState {
  Mat theta;     // n x d
  Mat z;         // (n*m) x d, empty when store_z is off
  Vec u;         // x_ij^T z_ij
  Vec coef;      // cached gradient coefficient: grad f_ij(z_ij) = coef * x_ij
  Mat x_tilde;   // n x d, shadow gossip variable
  Mat offset;    // n x d, added to x_tilde in the theta identity (catalyst centers)
  bool shadow = false;
  bool store_z = true;
  Rng rng;
  Clock clock;
  StepChoice choice;
};

// z0 == nullptr means zero virtual parameters.
DvrState init_state(const Problem& problem, const DvrParams& params, const Mat* z0,
                    std::uint64_t seed, const StateOptions& options = {});

// Applies a given step choice. Throws DivergenceError on non-finite values.
void apply_step(DvrState& state, const DvrParams& params, const Problem& problem,
                const GossipMatrix& gossip, const StepChoice& choice);

// Draws and applies one step; returns the outcome.
const StepChoice& step(DvrState& state, const DvrParams& params, const Problem& problem,
                       const GossipMatrix& gossip);

// max_i || theta_i - (x_tilde_i + offset_i - sum_j grad f_ij(z_ij)) / sigma_i ||
double theta_identity_residual(const DvrState& state, const DvrParams& params, const Problem& problem);

struct RunOptions {
  TraceOptions trace;
  StateOptions state;
  bool check_identity = false;  // throws std::logic_error on a violated identity
};

Trace run_dvr(const Problem& problem, const GossipMatrix& gossip, const DvrParams& params,
              const Budget& budget, const CostModel& cost, const Reference* ref,
              std::uint64_t seed, const RunOptions& options = {});

// Continues an existing state; rows are appended to `trace`.
void run_dvr(DvrState& state, const Problem& problem, const GossipMatrix& gossip,
             const DvrParams& params, Recorder& recorder, const RunOptions& options = {});

}  // namespace dvr
