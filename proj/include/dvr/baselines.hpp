#pragma once

#include "dvr/dvr.hpp"

#include <cstdint>
#include <string>

namespace dvr {

enum class BaselineKind { extra, extra_catalyst, gt_saga };

std::string to_string(BaselineKind kind);

// W_tilde = I - W / lambda_max(W); the identity on a single node.
Mat mix(const GossipMatrix& gossip, const Mat& x);

// 1 / (2 L_batch) with L_batch = sigma_max + kappa_b * sigma_max.
double default_extra_step(const Problem& problem);
// gamma / (4 L_f) with L_f = max_ij (sigma_i + m L_ij), the smoothness of the
// per-sample functions a SAGA estimator rescales by m.
double default_gt_saga_step(const Problem& problem, const GossipMatrix& gossip);

// EXTRA kept in its cumulative form: x_{t+1} = W~ x_t - eta g(x_t) + c_t with
// c_{t+1} = c_t - (I - W~)/2 x_t, which unrolls to the two-step recursion
// x_{t+1} = (I + W~) x_t - (I + W~)/2 x_{t-1} - eta (g(x_t) - g(x_{t-1})).
struct ExtraState {
  Mat x;
  Mat correction;
  Mat shift;  // extra linear term in the local gradients (catalyst centers)
  double prox = 0.0;
  Clock clock;
};

ExtraState extra_init(const Problem& problem, const Mat& x0);
// State reached after x0 -> x1 in the two-step form.
ExtraState extra_from_pair(const Problem& problem, const GossipMatrix& gossip, double eta,
                           const Mat& x0, const Mat& x1);
void extra_step(ExtraState& state, const Problem& problem, const GossipMatrix& gossip, double eta);

Trace run_extra(const Problem& problem, const GossipMatrix& gossip, double eta_b, const Budget& budget,
                const CostModel& cost, const Reference* ref, const TraceOptions& trace_options = {});

struct ExtraCatalystConfig {
  double beta = -1.0;        // < 0: (gamma L_batch - sigma_min) / (1 - gamma), floored at 0
  std::int64_t k_inner = 0;  // 0: ceil(1 / gamma)
  std::int64_t t_outer = 0;
};

Trace run_extra_catalyst(const Problem& problem, const GossipMatrix& gossip, const ExtraCatalystConfig& config,
                         const Budget& budget, const CostModel& cost, const Reference* ref,
                         const TraceOptions& trace_options = {});

struct GtSagaState {
  Mat x;
  Mat y;          // gradient tracker
  Mat v;          // current local estimators
  Vec table;      // stored gradient coefficients per sample
  Mat table_sum;  // sum_j table_ij x_ij per node
  Rng rng;
  Clock clock;
};

GtSagaState gt_saga_init(const Problem& problem, const Mat& x0, std::uint64_t seed);
// Table filled at z (rows (n*m) x d) instead of x0.
GtSagaState gt_saga_init(const Problem& problem, const Mat& x0, const Mat& table_points, std::uint64_t seed);
void gt_saga_step(GtSagaState& state, const Problem& problem, const GossipMatrix& gossip, double eta);

Trace run_gt_saga(const Problem& problem, const GossipMatrix& gossip, double eta_b, const Budget& budget,
                  const CostModel& cost, const Reference* ref, std::uint64_t seed,
                  const TraceOptions& trace_options = {});

}  // namespace dvr
