#pragma once

#include "dvr/common.hpp"
#include "dvr/problem.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace dvr {

struct CostModel {
  double tau = 250.0;  // time per multiplication by W; a gradient costs 1
};

struct Budget {
  std::optional<std::int64_t> max_iterations;
  std::optional<double> max_sim_time;
  std::optional<double> target_suboptimality;

  bool empty() const { return !max_iterations && !max_sim_time && !target_suboptimality; }
};

struct Reference {
  Vec theta_star;
  double f_star = 0.0;
  double grad_norm = 0.0;
  std::int64_t iterations = 0;
};

struct TraceOptions {
  std::int64_t cadence = 0;  // 0: ceil((m + kappa_s) / 20)
  bool every_comm = true;
  std::size_t max_rows = 100000;
};

struct TraceRow {
  std::int64_t iter = 0;
  double sim_time = 0.0;
  std::int64_t n_grads = 0;
  std::int64_t n_comms = 0;
  double subopt_node0 = std::numeric_limits<double>::quiet_NaN();
  double mean_sq_dist = std::numeric_limits<double>::quiet_NaN();
  double consensus_gap = 0.0;
  std::int64_t outer_iter = 0;
  double beta = 0.0;
  double q = 1.0;
};

struct Trace {
  std::string algorithm;
  std::uint64_t seed = 0;
  std::string params_digest;
  bool catalyst_columns = false;
  std::vector<TraceRow> rows;
  // F(mean theta) - F* at the end of each outer loop (accelerated runs only)
  std::vector<double> outer_subopt;
  nlohmann::json meta = nlohmann::json::object();

  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;
  // First row whose suboptimality is <= target, if any.
  const TraceRow* first_below(double target) const;
};

// Counters shared by every simulated algorithm.
struct Clock {
  std::int64_t iter = 0;
  std::int64_t n_grads = 0;  // individual gradients per node
  std::int64_t n_comms = 0;  // operator applications
  double comm_cost = 0.0;    // tau * effective degree

  double sim_time() const { return static_cast<double>(n_grads) + static_cast<double>(n_comms) * comm_cost; }
};

double consensus_gap(const Mat& theta);

// Evaluates rows, applies the cadence and the row cap, and decides when a
// budget is exhausted.
class Recorder {
 public:
  Recorder(const Problem& problem, const Reference* ref, const Budget& budget,
           const TraceOptions& options, Trace& trace);

  // Records a row when due; returns true when the run must stop.
  bool observe(const Clock& clock, const Mat& theta, bool communicated, bool force = false);
  bool budget_reached(const Clock& clock, double subopt) const;
  std::int64_t cadence() const { return cadence_; }

  // Extra columns for accelerated runs.
  std::int64_t outer_iter = 0;
  double beta = 0.0;
  double q = 1.0;

 private:
  const Problem& problem_;
  const Reference* ref_;
  Budget budget_;
  TraceOptions options_;
  Trace& trace_;
  std::int64_t cadence_;
  std::int64_t last_iter_ = -1;
};

}  // namespace dvr
