#pragma once

#include "dvr/dvr.hpp"

#include <cstdint>
#include <string>

namespace dvr {

enum class BetaRule { batch, finite_sum, manual };

std::string to_string(BetaRule rule);
BetaRule parse_beta_rule(const std::string& name);

struct CatalystConfig {
  BetaRule rule = BetaRule::finite_sum;
  double beta_value = 0.0;
  std::int64_t k_inner = 0;  // 0: ceil(m / p_comp), or ceil(1 / (alpha eta)) with theory_k
  bool theory_k = false;
  std::int64_t t_outer = 0;  // 0: no limit besides the budget
  double rho_out = 0.0;      // 0: sqrt(q) / 2
};

// batch: beta such that kappa_comm(beta) = (m + kappa_s(beta)) * gamma, by
// bisection; finite_sum: max(L_s / m - sigma_min, 0) with L_s = max_i sum_j L_ij.
double select_beta(const Problem& problem, const GossipMatrix& gossip, BetaRule rule, double value = 0.0);

struct CatalystParams {
  BetaRule rule = BetaRule::finite_sum;
  double beta = 0.0;
  double q = 1.0;
  double extrapolation = 0.0;
  double rho_out = 0.0;
  std::int64_t k_inner = 1;
  std::int64_t t_outer = 0;
  DvrParams inner;

  nlohmann::json to_json() const;
};

CatalystParams make_catalyst_params(const Problem& problem, const GossipMatrix& gossip,
                                    const CatalystConfig& config);

// (2/9) * initial_gap * (1 - rho_out)^t
double epsilon_schedule(double initial_gap, double rho_out, std::int64_t t);

struct CatalystState {
  Mat omega;       // per-node prox centers
  Mat theta_prev;  // last outer iterate, for the extrapolation
  DvrState inner;
  std::int64_t outer_iter = 0;
};

CatalystState outer_init(const Problem& problem, const CatalystParams& params, const Mat* z0,
                         std::uint64_t seed, const StateOptions& options = {});

// K inner DVR steps followed by the extrapolation and warm start. Returns true
// when the recorder stopped the run inside the inner loop (no extrapolation then).
bool outer_step(CatalystState& state, const CatalystParams& params, const Problem& problem,
                const GossipMatrix& gossip, Recorder* recorder, const RunOptions& options = {});

Trace run_accelerated(const Problem& problem, const GossipMatrix& gossip, const CatalystConfig& config,
                      const Budget& budget, const CostModel& cost, const Reference* ref,
                      std::uint64_t seed, const RunOptions& options = {});

}  // namespace dvr
